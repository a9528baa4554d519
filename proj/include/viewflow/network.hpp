#pragma once

// Forward-only flow-stream backbones described by a layer list.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "viewflow/ops.hpp"
#include "viewflow/weights.hpp"

namespace viewflow {

enum class LayerKind { Conv3d, BatchNorm, Relu, MaxPool3d, AvgPool3d, Inception, Logits };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// Inception branches: 1x1 | 1x1 -> 3x3 | 1x1 -> 3x3 | maxpool 3x3x3 -> 1x1.
/// Channel order in `branches`: b0, b1a, b1b, b2a, b2b, b3.
inline constexpr std::array<const char*, 6> kInceptionUnits = {"b0", "b1a", "b1b", "b2a", "b2b", "b3"};

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  std::size_t out_channels = 0;  // conv3d, logits
  Triple kernel{1, 1, 1};        // conv3d kernel or pooling window
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
  bool bias = true;         // conv3d, inception units
  bool batch_norm = false;  // inception units
  bool scale = false;       // batch norm has a gamma tensor
  double eps = 1e-3;        // batch norm
  std::array<std::size_t, 6> branches{};
  /// Role -> tensor name overrides of the default bindings.
  std::map<std::string, std::string> bindings;
};

struct NetworkSpec {
  std::string name;
  std::size_t in_channels = 2;
  std::size_t input_size = 224;  // square H = W
  std::size_t min_frames = 16;
  std::string tap;
  std::vector<LayerSpec> layers;

  std::size_t tap_index() const;
  std::size_t layer_index(std::string_view layer) const;
  /// Checks names, tap and that shapes chain at min_frames. Throws InputError
  /// or DimensionError.
  void validate() const;
};

/// 4 conv/pool stages and one inception block; 32x32 input, 8 frames.
NetworkSpec reduced_spec(std::size_t num_classes = 20);
/// Flow stream of Inception-3D with checkpoint-compatible tensor names.
NetworkSpec i3d_flow_spec(std::size_t num_classes = 400);
/// "reduced", "i3d-flow", or a path to a JSON spec document.
NetworkSpec resolve_network_spec(const std::string& name_or_path);

NetworkSpec parse_network_spec(std::string_view json_text);
NetworkSpec load_network_spec(const std::filesystem::path& path);
std::string network_spec_to_json(const NetworkSpec& spec);

/// Output shape [C, T, H, W] of every layer for a clip of `frames` flows.
std::vector<Shape> infer_shapes(const NetworkSpec& spec, std::size_t frames);

enum class ParamInit { Glorot, Zeros, Ones };

struct Binding {
  std::size_t layer;
  std::string role;
  std::string tensor;
  Shape shape;
  ParamInit init;
};

std::vector<Binding> parameter_bindings(const NetworkSpec& spec);

/// Glorot-uniform kernels, zero biases/means, unit variances and scales.
/// Each tensor draws from a stream keyed by (seed, tensor name).
WeightContainer random_weights(const NetworkSpec& spec, std::uint64_t seed);

class Network {
 public:
  const NetworkSpec& spec() const noexcept { return spec_; }

  /// Runs layers 0..last inclusive on a [N, C_in, T, S, S] input.
  TensorF forward(const TensorF& input, std::size_t last) const;
  TensorF forward(const TensorF& input) const { return forward(input, spec_.layers.size() - 1); }
  /// Output of every layer of a full pass.
  std::vector<TensorF> activations(const TensorF& input) const;
  /// Tap activation of a single clip as [C_f, T_f, H_f, W_f].
  TensorF forward_to_tap(const TensorF& input) const;

  /// Output shape of the tap for a clip of `frames` flows.
  Shape tap_shape(std::size_t frames) const;

 private:
  friend Network load_network(const NetworkSpec&, const WeightContainer&);
  using Params = std::map<std::string, TensorF>;

  void check_input(const TensorF& input) const;
  TensorF apply(std::size_t layer, const TensorF& x) const;

  NetworkSpec spec_;
  std::vector<Params> params_;
};

/// Binds every parameter of `spec`. All missing names and shape mismatches are
/// collected into one BindingError.
Network load_network(const NetworkSpec& spec, const WeightContainer& weights);

}  // namespace viewflow
