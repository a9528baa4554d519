#pragma once

// Finite-difference gradient checks for OpGraph<double> expressions.

#include <functional>
#include <vector>

#include "oracles.hpp"
#include "viewflow/classifiers.hpp"
#include "viewflow/graph.hpp"
#include "viewflow/random.hpp"

namespace gradcheck {

using viewflow::OpGraph;
using viewflow::Rng;
using viewflow::Shape;
using viewflow::TensorD;
using Graph = OpGraph<double>;
using Id = Graph::Id;

inline constexpr double kStep = 1e-3;
inline constexpr double kTolerance = 1e-3;
/// Elements whose gradient is below this in magnitude are compared absolutely.
inline constexpr double kFloor = 1e-6;

enum class Metric {
  /// |a_i - n_i| / max(|a_i|, |n_i|, kFloor) for every element.
  Elementwise,
  /// max_i |a_i - n_i| / max(max_i |n_i|, kFloor) per leaf.
  TensorNorm,
};

inline double tensor_rel_err(const TensorD& a, const TensorD& n) {
  double diff = 0, scale = kFloor;
  for (std::size_t i = 0; i < n.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max(scale, std::abs(n[i]));
  }
  return diff / scale;
}

/// Builds the expression from leaf nodes and returns its output node.
using Builder = std::function<Id(Graph&, const std::vector<Id>&)>;

inline TensorD random_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  return viewflow::uniform_tensor<double>(shape, rng, lo, hi);
}

/// Keeps every entry at least `gap` away from zero (ReLU kink).
inline TensorD away_from_zero(TensorD t, double gap = 0.05) {
  for (auto& v : t.data())
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  return t;
}

/// Distinct values spaced by `spacing`, randomly placed (no max-pool ties).
inline TensorD distinct_tensor(const Shape& shape, Rng& rng, double spacing = 0.05) {
  TensorD t(shape);
  std::vector<std::size_t> perm(t.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = spacing * double(perm[i]) - spacing * double(t.size()) / 2;
  return t;
}

/// Max relative error between the reverse sweep and central differences of
/// loss = sum(output * W) for a fixed random W, over every leaf.
inline double check(const std::vector<TensorD>& leaves, const Builder& build, Rng& rng,
                    Metric metric = Metric::Elementwise) {
  TensorD weights;
  auto loss_of = [&](const std::vector<TensorD>& values, Graph& g, std::vector<Id>& ids) {
    ids.clear();
    for (const auto& v : values) ids.push_back(g.parameter(v));
    const Id out = build(g, ids);
    if (weights.empty()) weights = random_tensor(g.value(out).shape(), rng, 0.5, 1.5);
    return g.weighted_sum(out, weights);
  };
  Graph graph;
  std::vector<Id> ids;
  const Id loss = loss_of(leaves, graph, ids);
  const auto grads = graph.backward(loss);
  double worst = 0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto f = [&](const TensorD& xi) {
      auto values = leaves;
      values[i] = xi;
      Graph g;
      std::vector<Id> local;
      return g.value(loss_of(values, g, local))[0];
    };
    const auto numeric = oracle::numeric_gradient<double>(leaves[i], f, kStep);
    const double err = metric == Metric::Elementwise ? oracle::max_rel_err(grads[ids[i]], numeric, kFloor)
                                                     : tensor_rel_err(grads[ids[i]], numeric);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace gradcheck
