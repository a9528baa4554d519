#pragma once

// Every differentiable op and both classifier heads, each as a worst case
// over kSeeds random instances.

#include <limits>
#include <stdexcept>
#include <string>

#include "gradcheck.hpp"

namespace gradcheck {

inline constexpr std::uint64_t kSeeds = 20;

template <typename Fn>
double worst_over_seeds(Fn&& one) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    worst = std::max(worst, one(rng));
  }
  return worst;
}

// Smallest |pre-activation| at the conv head's ReLUs.
inline double relu_margin(const std::vector<TensorD>& leaves) {
  const viewflow::ConvGeometry same{{1, 1, 1}, {1, 1, 1}};
  double margin = std::numeric_limits<double>::infinity();
  TensorD h = leaves[0];
  for (std::size_t f : {1, 5}) {
    const auto z = viewflow::batchnorm_batch(viewflow::add_channel_bias(viewflow::conv3d(h, leaves[f], same), leaves[f + 1]),
                                             leaves[f + 2], leaves[f + 3], viewflow::kHeadBatchNormEps);
    for (double v : z.values()) margin = std::min(margin, std::abs(v));
    h = viewflow::relu(z);
  }
  return margin;
}

// Full training loss of a head with every parameter and the features as
// leaves, compared per tensor. Conv head instances are redrawn until no ReLU
// input lies within kKinkMargin of zero.
inline constexpr double kKinkMargin = 0.02;

inline double head_check(const viewflow::HeadShape& shape, std::size_t n, Rng& rng) {
  Shape input{n};
  input.insert(input.end(), shape.feature_shape.begin(), shape.feature_shape.end());
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(int(i % shape.num_classes));
  std::vector<TensorD> leaves;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw std::runtime_error("no conv head instance clear of the ReLU kinks");
    const auto head = viewflow::init_head<double>(shape, rng.split(std::uint64_t(attempt)));
    leaves = {random_tensor(input, rng, -2, 2)};
    for (const auto& p : head.params) {
      TensorD q = p;
      for (auto& v : q.data()) v += rng.uniform(-0.2, 0.2);
      leaves.push_back(q);
    }
    if (shape.kind == viewflow::HeadKind::Slp || relu_margin(leaves) > kKinkMargin) break;
  }
  return check(leaves,
               [&](Graph& g, const std::vector<Id>& in) {
                 const std::vector<Id> params(in.begin() + 1, in.end());
                 const Id logits = viewflow::build_head(g, shape, in[0], params);
                 return g.cross_entropy(g.softmax(logits), labels);
               },
               rng, Metric::TensorNorm);
}

struct GradCase {
  std::string name;
  std::function<double(Rng&)> one;
};

inline std::vector<GradCase> gradient_cases() {
  using viewflow::ConvGeometry;
  using viewflow::HeadKind;
  using viewflow::PoolGeometry;
  std::vector<GradCase> cases;
  cases.push_back({"conv3d input and kernel", [](Rng& rng) {
    const ConvGeometry g{{1, 2, 1}, {1, 0, 1}};
    return check({random_tensor({2, 2, 3, 4, 3}, rng), random_tensor({3, 2, 2, 2, 3}, rng)},
                 [&](Graph& gr, const std::vector<Id>& in) { return gr.conv3d(in[0], in[1], g); }, rng);
  }});
  cases.push_back({"channel bias", [](Rng& rng) {
    return check({random_tensor({2, 3, 2, 2, 2}, rng), random_tensor({3}, rng)},
                 [](Graph& g, const std::vector<Id>& in) { return g.channel_bias(in[0], in[1]); }, rng);
  }});
  cases.push_back({"max pooling", [](Rng& rng) {
    const PoolGeometry g{{2, 2, 2}, {1, 2, 2}, {0, 1, 0}};
    return check({distinct_tensor({2, 2, 3, 4, 4}, rng)},
                 [&](Graph& gr, const std::vector<Id>& in) { return gr.maxpool3d(in[0], g); }, rng);
  }});
  cases.push_back({"average pooling", [](Rng& rng) {
    const PoolGeometry g{{2, 3, 2}, {1, 2, 2}, {1, 1, 0}};
    return check({random_tensor({2, 2, 3, 5, 4}, rng)},
                 [&](Graph& gr, const std::vector<Id>& in) { return gr.avgpool3d(in[0], g); }, rng);
  }});
  cases.push_back({"global average pooling", [](Rng& rng) {
    return check({random_tensor({3, 4, 2, 3, 2}, rng)},
                 [](Graph& g, const std::vector<Id>& in) { return g.global_avg_pool(in[0]); }, rng);
  }});
  cases.push_back({"matmul", [](Rng& rng) {
    return check({random_tensor({4, 5}, rng), random_tensor({5, 3}, rng)},
                 [](Graph& g, const std::vector<Id>& in) { return g.matmul(in[0], in[1]); }, rng);
  }});
  cases.push_back({"linear", [](Rng& rng) {
    return check({random_tensor({4, 5}, rng), random_tensor({3, 5}, rng), random_tensor({3}, rng)},
                 [](Graph& g, const std::vector<Id>& in) { return g.linear(in[0], in[1], in[2]); }, rng);
  }});
  cases.push_back({"relu", [](Rng& rng) {
    return check({away_from_zero(random_tensor({3, 4, 2, 2, 1}, rng))},
                 [](Graph& g, const std::vector<Id>& in) { return g.relu(in[0]); }, rng);
  }});
  cases.push_back({"softmax", [](Rng& rng) {
    return check({random_tensor({4, 5}, rng, -2, 2)},
                 [](Graph& g, const std::vector<Id>& in) { return g.softmax(in[0]); }, rng);
  }});
  cases.push_back({"softmax then cross-entropy", [](Rng& rng) {
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(int(rng.below(5)));
    return check({random_tensor({4, 5}, rng, -2, 2)},
                 [labels](Graph& g, const std::vector<Id>& in) {
                   return g.cross_entropy(g.softmax(in[0]), labels);
                 },
                 rng);
  }});
  cases.push_back({"cross-entropy", [](Rng& rng) {
    // Direct on probabilities kept well inside (0, 1).
    return check({random_tensor({3, 4}, rng, 0.2, 0.9)},
                 [](Graph& g, const std::vector<Id>& in) { return g.cross_entropy(in[0], {0, 3, 1}); }, rng);
  }});
  cases.push_back({"batch normalization, rank 5", [](Rng& rng) {
    return check({random_tensor({4, 3, 2, 2, 1}, rng, -2, 2), random_tensor({3}, rng, 0.5, 1.5),
                  random_tensor({3}, rng)},
                 [](Graph& g, const std::vector<Id>& in) { return g.batchnorm(in[0], in[1], in[2]); }, rng);
  }});
  cases.push_back({"batch normalization, rank 2", [](Rng& rng) {
    return check({random_tensor({5, 4}, rng, -2, 2), random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)},
                 [](Graph& g, const std::vector<Id>& in) { return g.batchnorm(in[0], in[1], in[2]); }, rng);
  }});
  cases.push_back({"sum", [](Rng& rng) {
    return check({random_tensor({3, 4}, rng)}, [](Graph& g, const std::vector<Id>& in) { return g.sum(in[0]); }, rng);
  }});
  cases.push_back({"SLP head, flat features", [](Rng& rng) { return head_check({HeadKind::Slp, {8}, 3, 0, 0}, 6, rng); }});
  cases.push_back({"SLP head, volume features", [](Rng& rng) { return head_check({HeadKind::Slp, {6, 2, 1, 1}, 4, 0, 0}, 5, rng); }});
  cases.push_back({"conv3d head", [](Rng& rng) { return head_check({HeadKind::Conv3d, {4, 2, 2, 1}, 3, 3, 3}, 6, rng); }});
  return cases;
}

}  // namespace gradcheck
