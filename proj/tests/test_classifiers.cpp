#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "temp_dir.hpp"
#include "viewflow/classifiers.hpp"
#include "viewflow/error.hpp"
#include "viewflow/ops.hpp"

using namespace viewflow;

namespace {

struct Dataset {
  std::vector<TensorF> features;
  std::vector<std::string> labels;
};

std::string class_name(std::size_t k) { return "c" + std::string(k < 10 ? "0" : "") + std::to_string(k); }

// Class k is the k-th one-hot vector plus small noise.
Dataset separable(std::size_t classes, std::size_t per_class, std::size_t dims, Rng rng) {
  Dataset d;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < classes; ++k) {
      TensorF f = uniform_tensor<float>({dims}, rng, -0.1f, 0.1f);
      f[k] += 1.0f;
      d.features.push_back(f);
      d.labels.push_back(class_name(k));
    }
  return d;
}

Dataset noise(std::size_t classes, std::size_t per_class, const Shape& shape, Rng rng) {
  Dataset d;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < classes; ++k) {
      d.features.push_back(uniform_tensor<float>(shape, rng, -1.0f, 1.0f));
      d.labels.push_back(class_name(k));
    }
  return d;
}

double accuracy(const Model& model, const Dataset& d) {
  const auto pred = argmax_rows(predict(model, d.features, 16));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += model.classes[std::size_t(pred[i])] == d.labels[i];
  return double(hits) / double(pred.size());
}

// Per-channel mean and population standard deviation of [N, C, ...].
std::pair<std::vector<double>, std::vector<double>> channel_stats(const TensorF& t) {
  const std::size_t n = t.dim(0), c = t.dim(1), inner = t.size() / (n * c);
  std::vector<double> mean(c, 0.0), sd(c, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) mean[(i / inner) % c] += t[i];
  for (auto& m : mean) m /= double(n * inner);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = t[i] - mean[(i / inner) % c];
    sd[(i / inner) % c] += d * d;
  }
  for (auto& s : sd) s = std::sqrt(s / double(n * inner));
  return {mean, sd};
}

// Rescales a conv layer so its pre-normalization output on `in` has
// per-channel mean 0 and variance 1.
void standardize_conv(TensorF& kernel, TensorF& bias, const TensorF& in) {
  const ConvGeometry same{{1, 1, 1}, {1, 1, 1}};
  const auto [mean, sd] = channel_stats(add_channel_bias(conv3d(in, kernel, same), bias));
  const std::size_t per = kernel.size() / kernel.dim(0);
  for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = float(kernel[i] / sd[i / per]);
  for (std::size_t c = 0; c < bias.size(); ++c) bias[c] = float((bias[c] - mean[c]) / sd[c]);
}

TensorF head_logits(const Head<float>& head, const TensorF& x, bool normalize) {
  OpGraph<float> g;
  std::vector<OpGraph<float>::Id> ids;
  return g.value(build_head(g, head, g.input(x), ids, normalize));
}

}  // namespace

TEST_CASE("SLP fits linearly separable features") {
  const auto data = separable(2, 10, 8, Rng(5));
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.max_epochs = 200;
  cfg.batch_size = 4;
  const auto result = train(HeadKind::Slp, data.features, data.labels, cfg);
  CHECK(accuracy(result.model, data) == 1.0);
  REQUIRE(!result.loss_curve.empty());
  CHECK(std::all_of(result.loss_curve.begin(), result.loss_curve.end(), [](double v) { return std::isfinite(v); }));
  CHECK(result.loss_curve.back() <= result.loss_curve.front());
  CHECK(result.model.classes == std::vector<std::string>{"c00", "c01"});
}

TEST_CASE("shuffled labels stay at chance after one epoch") {
  auto data = noise(20, 20, {16}, Rng(9));
  Rng(10).shuffle(data.labels);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  const auto result = train(HeadKind::Slp, data.features, data.labels, cfg);
  const double acc = accuracy(result.model, data);
  MESSAGE("train accuracy " << acc);
  CHECK(std::abs(acc - 0.05) <= 0.05);
}

TEST_CASE("training is deterministic given the seed") {
  const auto data = noise(3, 4, {4, 2, 1, 1}, Rng(2));
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.batch_size = 4;
  cfg.conv1_channels = 3;
  cfg.conv2_channels = 4;
  for (auto kind : {HeadKind::Slp, HeadKind::Conv3d}) {
    const auto a = train(kind, data.features, data.labels, cfg);
    const auto b = train(kind, data.features, data.labels, cfg);
    CHECK(a.model.head.params == b.model.head.params);
    CHECK(a.loss_curve == b.loss_curve);
    auto other = cfg;
    other.seed = 18;
    CHECK(train(kind, data.features, data.labels, other).model.head.params != a.model.head.params);
  }
}

TEST_CASE("training errors") {
  const auto data = separable(3, 2, 4, Rng(1));
  TrainConfig cfg;
  const std::vector<std::string> classes{"c00", "c01", "c02", "zz_unseen", "aa_unseen"};
  try {
    train(HeadKind::Slp, data.features, data.labels, cfg, classes);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("aa_unseen zz_unseen") != std::string::npos);
  }
  CHECK_THROWS_AS(train(HeadKind::Slp, data.features, data.labels, cfg, std::vector<std::string>{"c00", "c01"}),
                  LabelError);

  auto wild = cfg;
  wild.standardize = false;
  wild.learning_rate = 1e37;
  auto huge = data;
  for (auto& f : huge.features)
    for (auto& v : f.data()) v *= 10.0f;
  try {
    train(HeadKind::Slp, huge.features, huge.labels, wild);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(std::string(e.what()).find("epoch " + std::to_string(e.epoch())) != std::string::npos);
  }

  auto bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(train(HeadKind::Slp, data.features, data.labels, bad), InputError);
  auto mixed = data;
  mixed.features[1] = TensorF({5});
  CHECK_THROWS_AS(train(HeadKind::Slp, mixed.features, mixed.labels, cfg), DimensionError);
}

TEST_CASE("SLP predictions") {
  Model zero;
  zero.head = init_head<float>({HeadKind::Slp, {6}, 4}, Rng(1));
  for (auto& p : zero.head.params) p.fill(0.0f);
  zero.classes = {"a", "b", "c", "d"};
  const auto data = noise(4, 3, {6}, Rng(4));
  const auto uniform = predict(zero, data.features, 5);
  for (auto v : uniform.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-7));

  TrainConfig cfg;
  cfg.max_epochs = 3;
  const auto model = train(HeadKind::Slp, data.features, data.labels, cfg).model;
  const auto whole = predict(model, data.features, data.features.size());
  CHECK(predict(model, data.features, 2) == whole);
  CHECK(predict(model, data.features, 5) == whole);
  for (std::size_t r = 0; r < whole.dim(0); ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < whole.dim(1); ++c) sum += whole(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(predict(model, {TensorF({5})}, 2), DimensionError);
}

TEST_CASE("conv3d head: batch coupling only through normalization") {
  const HeadShape shape{HeadKind::Conv3d, {4, 3, 2, 2}, 3, 5, 6};
  auto head = init_head<float>(shape, Rng(3));
  Rng rng(8);
  const auto x = uniform_tensor<float>({6, 4, 3, 2, 2}, rng, -1.0f, 1.0f);

  // Permuting the batch permutes the outputs.
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  TensorF xp(x.shape());
  const std::size_t per = x.size() / 6;
  for (std::size_t i = 0; i < 6; ++i)
    std::copy_n(x.values().begin() + std::ptrdiff_t(perm[i] * per), per, xp.data().begin() + std::ptrdiff_t(i * per));
  const auto base = head_logits(head, x, true);
  const auto permuted = head_logits(head, xp, true);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(permuted(i, k) - base(perm[i], k)) < 1e-5f);

  // With standardized pre-normalization statistics, batch norm is the identity.
  const ConvGeometry same{{1, 1, 1}, {1, 1, 1}};
  auto& P = head.params;
  standardize_conv(P[0], P[1], x);
  const auto h1 = relu(add_channel_bias(conv3d(x, P[0], same), P[1]));
  standardize_conv(P[4], P[5], h1);
  const auto [mean2, sd2] = channel_stats(add_channel_bias(conv3d(h1, P[4], same), P[5]));
  for (std::size_t c = 0; c < mean2.size(); ++c) {
    CHECK(std::abs(mean2[c]) < 1e-5);
    CHECK(std::abs(sd2[c] - 1) < 1e-5);
  }
  const auto normalized = head_logits(head, x, true);
  const auto plain = head_logits(head, x, false);
  REQUIRE(normalized.shape() == plain.shape());
  float diff = 0;
  for (std::size_t i = 0; i < plain.size(); ++i) diff = std::max(diff, std::abs(normalized[i] - plain[i]));
  MESSAGE("max abs diff " << diff);
  CHECK(diff < 1e-4f);
}

TEST_CASE("conv3d head predicts in batches of at least two") {
  const auto data = noise(2, 3, {4, 2, 2, 1}, Rng(6));
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 4;
  cfg.conv1_channels = 3;
  cfg.conv2_channels = 4;
  const auto model = train(HeadKind::Conv3d, data.features, data.labels, cfg).model;
  CHECK_THROWS_AS(predict(model, data.features, 1), BatchSizeError);
  const auto probs = predict(model, data.features, 3);
  CHECK(probs.shape() == Shape{6, 2});
  CHECK(probs.all_finite());
}

TEST_CASE("model checkpoint round trip") {
  TempDir dir("viewflow_test_model");
  const auto data = noise(3, 4, {4, 2, 2, 2}, Rng(11));
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 5;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 3;
  cfg.learning_rate = 0.05;
  for (auto kind : {HeadKind::Slp, HeadKind::Conv3d}) {
    const auto model = train(kind, data.features, data.labels, cfg).model;
    const auto stem = dir.path / std::string(head_kind_name(kind));
    save_model(model, stem);
    const auto back = load_model(stem);
    CHECK(back.head.shape.kind == kind);
    CHECK(back.head.shape.feature_shape == model.head.shape.feature_shape);
    CHECK(back.head.params == model.head.params);
    CHECK(back.classes == model.classes);
    CHECK(back.channel_mean == model.channel_mean);
    CHECK(back.channel_inv_std == model.channel_inv_std);
    CHECK(back.config.learning_rate == 0.05);
    CHECK(back.config.batch_size == 5);
    CHECK(predict(back, data.features, 4) == predict(model, data.features, 4));
  }
  CHECK_THROWS_AS(load_model(dir.path / "missing"), IoError);
}

TEST_CASE("head kind names") {
  CHECK(parse_head_kind("slp") == HeadKind::Slp);
  CHECK(parse_head_kind("conv3d") == HeadKind::Conv3d);
  CHECK(head_kind_name(HeadKind::Conv3d) == "conv3d");
  CHECK_THROWS_AS(parse_head_kind("mlp"), InputError);
  CHECK_THROWS_AS((HeadShape{HeadKind::Conv3d, {8}, 3}.validate()), DimensionError);
  CHECK_THROWS_AS((HeadShape{HeadKind::Slp, {8}, 1}.validate()), InputError);
}
