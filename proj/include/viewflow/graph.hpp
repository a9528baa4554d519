#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "viewflow/ops.hpp"

namespace viewflow {

enum class OpKind {
  Input,
  Parameter,
  Conv3d,
  ChannelBias,
  MaxPool3d,
  AvgPool3d,
  GlobalAvgPool,
  MatMul,
  Linear,
  Relu,
  Softmax,
  CrossEntropy,
  BatchNorm,
  Sum,
  WeightedSum,
};

/// Eagerly evaluated computation graph over the fixed op vocabulary.
/// Each builder call evaluates the op immediately and records what the
/// reverse sweep needs. Nodes only reference earlier nodes, so insertion
/// order is a topological order.
template <typename Scalar>
class OpGraph {
 public:
  using TensorT = Tensor<Scalar>;
  using Id = std::size_t;

  struct Node {
    OpKind kind;
    std::vector<Id> inputs;
    TensorT value;
    bool trainable = false;
    bool needs_grad = false;
    // Receives dL/d(value) and accumulates into the gradients of `inputs`.
    std::function<void(const TensorT&, std::vector<TensorT>&)> backward;
  };

  class Gradients {
   public:
    Gradients(std::vector<TensorT> grads, std::vector<Id> params)
        : grads_(std::move(grads)), params_(std::move(params)) {}
    const TensorT& operator[](Id id) const { return grads_.at(id); }
    const std::vector<Id>& parameters() const { return params_; }

   private:
    std::vector<TensorT> grads_;
    std::vector<Id> params_;
  };

  OpGraph() = default;
  OpGraph(const OpGraph&) = delete;
  OpGraph& operator=(const OpGraph&) = delete;

  Id input(TensorT value) { return push(OpKind::Input, {}, std::move(value), nullptr); }

  Id parameter(TensorT value, bool trainable = true) {
    const Id id = push(OpKind::Parameter, {}, std::move(value), nullptr);
    nodes_[id].trainable = trainable;
    nodes_[id].needs_grad = trainable;
    return id;
  }

  Id conv3d(Id x, Id kernel, const ConvGeometry& g = {}) {
    auto out = viewflow::conv3d(value(x), value(kernel), g);
    return push(OpKind::Conv3d, {x, kernel}, std::move(out), [this, x, kernel, g](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, conv3d_grad_input(go, value(kernel), value(x).shape(), g));
      if (needs(kernel)) accumulate(grads, kernel, conv3d_grad_kernel(go, value(x), value(kernel).shape(), g));
    });
  }

  Id channel_bias(Id x, Id bias) {
    auto out = add_channel_bias(value(x), value(bias));
    return push(OpKind::ChannelBias, {x, bias}, std::move(out), [this, x, bias](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, go);
      if (needs(bias)) accumulate(grads, bias, channel_sum(go));
    });
  }

  Id maxpool3d(Id x, const PoolGeometry& g) {
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    auto out = viewflow::maxpool3d(value(x), g, argmax.get());
    return push(OpKind::MaxPool3d, {x}, std::move(out), [this, x, argmax](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, maxpool3d_grad(go, *argmax, value(x).shape()));
    });
  }

  Id avgpool3d(Id x, const PoolGeometry& g) {
    auto out = viewflow::avgpool3d(value(x), g);
    return push(OpKind::AvgPool3d, {x}, std::move(out), [this, x, g](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, avgpool3d_grad(go, value(x).shape(), g));
    });
  }

  Id global_avg_pool(Id x) {
    auto out = viewflow::global_avg_pool(value(x));
    return push(OpKind::GlobalAvgPool, {x}, std::move(out), [this, x](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, global_avg_pool_grad(go, value(x).shape()));
    });
  }

  Id matmul(Id a, Id b) {
    auto out = viewflow::matmul(value(a), value(b));
    return push(OpKind::MatMul, {a, b}, std::move(out), [this, a, b](const TensorT& go, auto& grads) {
      if (needs(a)) accumulate(grads, a, viewflow::matmul(go, value(b), Transpose::Right));
      if (needs(b)) accumulate(grads, b, viewflow::matmul(value(a), go, Transpose::Left));
    });
  }

  /// x [N,In] * weight[Out,In]^T + bias[Out].
  Id linear(Id x, Id weight, Id bias) {
    auto out = add_channel_bias(viewflow::matmul(value(x), value(weight), Transpose::Right), value(bias));
    return push(OpKind::Linear, {x, weight, bias}, std::move(out),
                [this, x, weight, bias](const TensorT& go, auto& grads) {
                  if (needs(x)) accumulate(grads, x, viewflow::matmul(go, value(weight)));
                  if (needs(weight)) accumulate(grads, weight, viewflow::matmul(go, value(x), Transpose::Left));
                  if (needs(bias)) accumulate(grads, bias, channel_sum(go));
                });
  }

  Id relu(Id x) {
    auto out = viewflow::relu(value(x));
    return push(OpKind::Relu, {x}, std::move(out), [this, x](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, relu_grad(go, value(x)));
    });
  }

  Id softmax(Id x) {
    auto out = viewflow::softmax(value(x));
    const Id id = nodes_.size();
    return push(OpKind::Softmax, {x}, std::move(out), [this, x, id](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, softmax_grad(go, value(id)));
    });
  }

  Id cross_entropy(Id probs, std::vector<int> labels) {
    auto out = viewflow::cross_entropy(value(probs), std::span<const int>(labels));
    return push(OpKind::CrossEntropy, {probs}, std::move(out),
                [this, probs, labels = std::move(labels)](const TensorT& go, auto& grads) {
                  if (needs(probs)) accumulate(grads, probs, cross_entropy_grad(go[0], value(probs), std::span<const int>(labels)));
                });
  }

  Id batchnorm(Id x, Id gamma, Id beta, double eps = 1e-5) {
    auto cache = std::make_shared<BatchNormCache<Scalar>>();
    auto out = batchnorm_batch(value(x), value(gamma), value(beta), eps, cache.get());
    return push(OpKind::BatchNorm, {x, gamma, beta}, std::move(out),
                [this, x, gamma, beta, cache](const TensorT& go, auto& grads) {
                  auto g = batchnorm_batch_grad(go, value(gamma), *cache);
                  if (needs(x)) accumulate(grads, x, g.input);
                  if (needs(gamma)) accumulate(grads, gamma, g.gamma);
                  if (needs(beta)) accumulate(grads, beta, g.beta);
                });
  }

  Id sum(Id x) {
    Accumulator<Scalar> s = 0;
    for (auto v : value(x).data()) s += v;
    return push(OpKind::Sum, {x}, TensorT::scalar(Scalar(s)), [this, x](const TensorT& go, auto& grads) {
      if (needs(x)) accumulate(grads, x, TensorT(value(x).shape(), go[0]));
    });
  }

  /// Sum of x * weights elementwise, with weights held constant.
  Id weighted_sum(Id x, TensorT weights) {
    if (weights.shape() != value(x).shape()) throw DimensionError("weighted_sum: weight shape mismatch");
    Accumulator<Scalar> s = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += Accumulator<Scalar>(value(x)[i]) * weights[i];
    return push(OpKind::WeightedSum, {x}, TensorT::scalar(Scalar(s)),
                [this, x, weights = std::move(weights)](const TensorT& go, auto& grads) {
                  TensorT g = weights;
                  for (auto& v : g.data()) v *= go[0];
                  if (needs(x)) accumulate(grads, x, g);
                });
  }

  const TensorT& value(Id id) const { return nodes_.at(id).value; }
  OpKind kind(Id id) const { return nodes_.at(id).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::vector<Id> trainable_parameters() const {
    std::vector<Id> ids;
    for (Id i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].trainable) ids.push_back(i);
    return ids;
  }

  /// Reverse-mode sweep from a scalar node. Every trainable parameter gets
  /// a gradient of its own shape, zero when it does not reach the loss.
  Gradients backward(Id loss) const {
    if (value(loss).size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_string(value(loss).shape()));
    std::vector<TensorT> grads(nodes_.size());
    grads[loss] = TensorT::scalar(Scalar(1));
    for (Id i = loss + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (grads[i].empty() || !node.backward || !node.needs_grad) continue;
      node.backward(grads[i], grads);
    }
    std::vector<TensorT> out(nodes_.size());
    const auto params = trainable_parameters();
    for (Id p : params) out[p] = grads[p].empty() ? TensorT(value(p).shape()) : std::move(grads[p]);
    return Gradients(std::move(out), params);
  }

 private:
  Id push(OpKind kind, std::vector<Id> inputs, TensorT value,
          std::function<void(const TensorT&, std::vector<TensorT>&)> backward) {
    for (Id in : inputs)
      if (in >= nodes_.size()) throw ContractError("op input refers to an undefined node");
    bool needs = false;
    for (Id in : inputs) needs = needs || nodes_[in].needs_grad;
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), false, needs, std::move(backward)});
    return nodes_.size() - 1;
  }

  bool needs(Id id) const { return nodes_[id].needs_grad; }

  void accumulate(std::vector<TensorT>& grads, Id id, const TensorT& g) const {
    if (grads[id].empty()) {
      grads[id] = g;
      return;
    }
    auto dst = grads[id].data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  std::vector<Node> nodes_;
};

}  // namespace viewflow
