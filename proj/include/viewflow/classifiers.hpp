#pragma once

// Classification heads on tapped backbone features: a single linear layer
// (SLP) and a two-layer 3D convolutional head with per-batch normalization.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "viewflow/graph.hpp"
#include "viewflow/random.hpp"
#include "viewflow/weights.hpp"

namespace viewflow {

enum class HeadKind { Slp, Conv3d };

std::string_view head_kind_name(HeadKind kind);  // "slp" / "conv3d"
HeadKind parse_head_kind(std::string_view name);

struct HeadShape {
  HeadKind kind = HeadKind::Slp;
  /// Per-example feature shape: [C_f] or [C_f, T_f, H_f, W_f].
  Shape feature_shape;
  std::size_t num_classes = 2;
  std::size_t conv1_channels = 64;
  std::size_t conv2_channels = 128;

  void validate() const;
};

/// Parameter names and shapes in a fixed order.
///   slp:    fc/weight [K, C_f], fc/bias [K]
///   conv3d: conv1/{kernel, bias}, bn1/{gamma, beta}, conv2/..., bn2/..., fc/{weight, bias}
std::vector<std::pair<std::string, Shape>> head_parameter_shapes(const HeadShape& shape);

template <typename Scalar>
struct Head {
  HeadShape shape;
  std::vector<Tensor<Scalar>> params;  // ordered as head_parameter_shapes
};

/// Glorot-uniform weights, zero biases and betas, unit gammas.
template <typename Scalar>
Head<Scalar> init_head(const HeadShape& shape, Rng rng) {
  shape.validate();
  Head<Scalar> head{shape, {}};
  for (const auto& [name, s] : head_parameter_shapes(shape)) {
    const auto leaf = name.substr(name.find('/') + 1);
    if (leaf == "kernel" || leaf == "weight")
      head.params.push_back(glorot_uniform<Scalar>(s, rng.split(name)));
    else
      head.params.push_back(Tensor<Scalar>(s, leaf == "gamma" ? Scalar(1) : Scalar(0)));
  }
  return head;
}

inline constexpr double kHeadBatchNormEps = 1e-5;

/// Adds the head to `graph` on a stacked input x [N, ...feature_shape];
/// returns the logits node [N, K]. P holds one node per parameter in
/// head_parameter_shapes order. With normalize = false the conv head skips
/// batch norm.
template <typename Scalar>
typename OpGraph<Scalar>::Id build_head(OpGraph<Scalar>& graph, const HeadShape& shape, typename OpGraph<Scalar>::Id x,
                                        const std::vector<typename OpGraph<Scalar>::Id>& P, bool normalize = true) {
  if (shape.kind == HeadKind::Slp) {
    if (graph.value(x).ndim() > 2) x = graph.global_avg_pool(x);
    return graph.linear(x, P[0], P[1]);
  }
  const ConvGeometry same{{1, 1, 1}, {1, 1, 1}};
  auto block = [&](typename OpGraph<Scalar>::Id in, std::size_t first) {
    auto y = graph.channel_bias(graph.conv3d(in, P[first], same), P[first + 1]);
    if (normalize) y = graph.batchnorm(y, P[first + 2], P[first + 3], kHeadBatchNormEps);
    return graph.relu(y);
  };
  auto h = block(block(x, 0), 4);
  return graph.linear(graph.global_avg_pool(h), P[8], P[9]);
}

/// Same, adding the head's parameters to the graph; `param_ids` receives them.
template <typename Scalar>
typename OpGraph<Scalar>::Id build_head(OpGraph<Scalar>& graph, const Head<Scalar>& head,
                                        typename OpGraph<Scalar>::Id x, std::vector<typename OpGraph<Scalar>::Id>& param_ids,
                                        bool normalize = true) {
  param_ids.clear();
  for (const auto& p : head.params) param_ids.push_back(graph.parameter(p));
  return build_head(graph, head.shape, x, param_ids, normalize);
}

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  int max_epochs = 100;
  std::uint64_t seed = 17;
  /// Epochs without a new best training loss before stopping.
  int early_stop_patience = 10;
  /// Standardize each feature channel with training-set statistics.
  bool standardize = true;
  std::size_t conv1_channels = 64;
  std::size_t conv2_channels = 128;

  void validate() const;
};

/// Trained head plus everything needed to apply it.
struct Model {
  Head<float> head;
  std::vector<std::string> classes;  // sorted; index = class id
  /// Per-channel standardization (empty when disabled).
  std::vector<float> channel_mean, channel_inv_std;
  TrainConfig config;
};

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;  // mean training loss per epoch
};

/// Minimizes softmax cross-entropy with SGD + momentum. Class order is
/// `classes` when given (every class needs an example) or the sorted set of
/// labels otherwise.
TrainResult train(HeadKind kind, const std::vector<TensorF>& features, const std::vector<std::string>& labels,
                  const TrainConfig& config, const std::optional<std::vector<std::string>>& classes = std::nullopt);

/// Class probabilities [N, K], evaluated in consecutive batches; a trailing
/// batch of one example joins the previous batch.
TensorF predict(const Model& model, const std::vector<TensorF>& features, std::size_t batch_size);

/// Row-wise argmax, ties to the lowest index.
std::vector<int> argmax_rows(const TensorF& probs);

/// Writes <stem>.vwtc (head parameters and standardization) and <stem>.json
/// (head kind, feature shape, classes, train config).
void save_model(const Model& model, const std::filesystem::path& stem);
Model load_model(const std::filesystem::path& stem);

}  // namespace viewflow
