#include "viewflow/classifiers.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "viewflow/error.hpp"

namespace viewflow {

using nlohmann::json;

namespace {

// Channel count and spatial size of one example.
std::pair<std::size_t, std::size_t> channel_layout(const Shape& feature_shape) {
  const std::size_t c = feature_shape[0];
  return {c, shape_size(feature_shape) / c};
}

TensorF stack(const Model& model, const std::vector<TensorF>& features, std::span<const std::size_t> rows) {
  const Shape& fs = model.head.shape.feature_shape;
  Shape shape{rows.size()};
  shape.insert(shape.end(), fs.begin(), fs.end());
  TensorF out(shape);
  const auto [channels, inner] = channel_layout(fs);
  const bool scale = !model.channel_mean.empty();
  std::size_t dst = 0;
  for (std::size_t r : rows) {
    const auto& f = features[r];
    if (f.shape() != fs)
      throw DimensionError("feature shape " + shape_string(f.shape()) + " does not match model " + shape_string(fs));
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::size_t c = i / inner;
      out[dst++] = scale ? (f[i] - model.channel_mean[c]) * model.channel_inv_std[c] : f[i];
    }
  }
  return out;
}

// Consecutive batches; a final singleton is merged into its predecessor.
std::vector<std::span<const std::size_t>> batches(std::span<const std::size_t> order, std::size_t batch_size) {
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size)
    out.push_back(order.subspan(start, std::min(batch_size, order.size() - start)));
  if (out.size() >= 2 && out.back().size() == 1) {
    const auto last = out.back();
    out.pop_back();
    out.back() = std::span<const std::size_t>(out.back().data(), out.back().size() + last.size());
  }
  return out;
}

void fit_standardization(Model& model, const std::vector<TensorF>& features) {
  const auto [channels, inner] = channel_layout(model.head.shape.feature_shape);
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  const double count = double(features.size() * inner);
  for (const auto& f : features)
    for (std::size_t i = 0; i < f.size(); ++i) sum[i / inner] += f[i];
  model.channel_mean.assign(channels, 0.0f);
  model.channel_inv_std.assign(channels, 1.0f);
  for (std::size_t c = 0; c < channels; ++c) model.channel_mean[c] = float(sum[c] / count);
  for (const auto& f : features)
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double d = f[i] - double(model.channel_mean[i / inner]);
      sq[i / inner] += d * d;
    }
  for (std::size_t c = 0; c < channels; ++c) {
    const double sd = std::sqrt(sq[c] / count);
    model.channel_inv_std[c] = sd > 1e-12 ? float(1.0 / sd) : 1.0f;
  }
}

}  // namespace

std::string_view head_kind_name(HeadKind kind) { return kind == HeadKind::Slp ? "slp" : "conv3d"; }

HeadKind parse_head_kind(std::string_view name) {
  if (name == "slp") return HeadKind::Slp;
  if (name == "conv3d") return HeadKind::Conv3d;
  throw InputError("unknown head kind '" + std::string(name) + "' (expected slp or conv3d)");
}

void HeadShape::validate() const {
  if (num_classes < 2) throw InputError("a head needs at least 2 classes");
  if (feature_shape.empty() || shape_size(feature_shape) == 0) throw DimensionError("empty feature shape");
  if (kind == HeadKind::Conv3d && feature_shape.size() != 4)
    throw DimensionError("conv3d head needs [C,T,H,W] features, got " + shape_string(feature_shape));
  if (kind == HeadKind::Conv3d && (conv1_channels == 0 || conv2_channels == 0))
    throw InputError("conv3d head channel counts must be positive");
}

std::vector<std::pair<std::string, Shape>> head_parameter_shapes(const HeadShape& s) {
  const std::size_t c = s.feature_shape.at(0), k = s.num_classes;
  if (s.kind == HeadKind::Slp) return {{"fc/weight", {k, c}}, {"fc/bias", {k}}};
  const std::size_t c1 = s.conv1_channels, c2 = s.conv2_channels;
  return {{"conv1/kernel", {c1, c, 3, 3, 3}},
          {"conv1/bias", {c1}},
          {"bn1/gamma", {c1}},
          {"bn1/beta", {c1}},
          {"conv2/kernel", {c2, c1, 3, 3, 3}},
          {"conv2/bias", {c2}},
          {"bn2/gamma", {c2}},
          {"bn2/beta", {c2}},
          {"fc/weight", {k, c2}},
          {"fc/bias", {k}}};
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw InputError("learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw InputError("momentum must be in [0, 1)");
  if (batch_size < 2) throw InputError("batch_size must be >= 2");
  if (max_epochs < 1) throw InputError("max_epochs must be >= 1");
  if (early_stop_patience < 1) throw InputError("early_stop_patience must be >= 1");
}

TrainResult train(HeadKind kind, const std::vector<TensorF>& features, const std::vector<std::string>& labels,
                  const TrainConfig& config, const std::optional<std::vector<std::string>>& classes) {
  config.validate();
  if (features.size() != labels.size()) throw InputError("features and labels differ in length");
  if (features.empty()) throw DataError("no training examples");

  Model model;
  model.config = config;
  model.classes = classes ? *classes : labels;
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < model.classes.size(); ++i) index[model.classes[i]] = int(i);
  std::vector<int> y(labels.size());
  std::vector<std::size_t> per_class(model.classes.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = index.find(labels[i]);
    if (it == index.end()) throw LabelError("label '" + labels[i] + "' is not one of the declared classes");
    y[i] = it->second;
    ++per_class[std::size_t(it->second)];
  }
  std::vector<std::string> empty;
  for (std::size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c] == 0) empty.push_back(model.classes[c]);
  if (!empty.empty()) {
    std::string msg = "classes without training examples:";
    for (const auto& e : empty) msg += " " + e;
    throw DataError(msg);
  }

  HeadShape hs{kind, features[0].shape(), model.classes.size(), config.conv1_channels, config.conv2_channels};
  const Rng root(config.seed);
  model.head = init_head<float>(hs, root.split("init"));
  if (config.standardize) fit_standardization(model, features);

  std::vector<TensorF> velocity;
  for (const auto& p : model.head.params) velocity.emplace_back(p.shape(), 0.0f);

  TrainResult result;
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffler = root.split("shuffle");
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffler.shuffle(order);
    double total = 0;
    try {
      for (const auto batch : batches(order, config.batch_size)) {
        OpGraph<float> graph;
        std::vector<OpGraph<float>::Id> params;
        const auto x = graph.input(stack(model, features, batch));
        const auto logits = build_head(graph, model.head, x, params);
        std::vector<int> batch_labels;
        for (auto r : batch) batch_labels.push_back(y[r]);
        const auto loss = graph.cross_entropy(graph.softmax(logits), batch_labels);
        const double value = graph.value(loss)[0];
        if (!std::isfinite(value)) throw NumericError("loss is not finite");
        total += value * double(batch.size());
        const auto grads = graph.backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
          const auto& g = grads[params[p]];
          auto& v = velocity[p];
          auto& w = model.head.params[p];
          for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = float(config.momentum * v[i] - config.learning_rate * g[i]);
            w[i] += v[i];
          }
          if (!w.all_finite()) throw NumericError("parameter " + head_parameter_shapes(hs)[p].first + " diverged");
        }
      }
    } catch (const NumericError& e) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }
    const double mean = total / double(features.size());
    result.loss_curve.push_back(mean);
    if (mean < best) {
      best = mean;
      stale = 0;
    } else if (++stale >= config.early_stop_patience) {
      break;
    }
  }
  result.model = std::move(model);
  return result;
}

TensorF predict(const Model& model, const std::vector<TensorF>& features, std::size_t batch_size) {
  if (model.head.shape.kind == HeadKind::Conv3d && batch_size < 2)
    throw BatchSizeError("conv3d head predicts with per-batch statistics; batch_size must be >= 2");
  if (batch_size == 0) throw InputError("batch_size must be positive");
  const std::size_t k = model.classes.size();
  if (features.empty()) throw InputError("nothing to predict");
  TensorF probs({features.size(), k});
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto batch : batches(order, batch_size)) {
    OpGraph<float> graph;
    std::vector<OpGraph<float>::Id> params;
    const auto p = graph.softmax(build_head(graph, model.head, graph.input(stack(model, features, batch)), params));
    const auto& v = graph.value(p);
    std::copy(v.data().begin(), v.data().end(), probs.data().begin() + std::ptrdiff_t(batch.front() * k));
  }
  return probs;
}

std::vector<int> argmax_rows(const TensorF& probs) {
  std::vector<int> out(probs.dim(0));
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.dim(1); ++c)
      if (probs(r, c) > probs(r, best)) best = c;
    out[r] = int(best);
  }
  return out;
}

void save_model(const Model& model, const std::filesystem::path& stem) {
  const auto names = head_parameter_shapes(model.head.shape);
  WeightContainer w;
  for (std::size_t i = 0; i < names.size(); ++i) w.add(names[i].first, model.head.params[i]);
  if (!model.channel_mean.empty()) {
    const Shape c{model.channel_mean.size()};
    w.add("input/mean", TensorF(c, model.channel_mean));
    w.add("input/inv_std", TensorF(c, model.channel_inv_std));
  }
  if (!stem.parent_path().empty()) std::filesystem::create_directories(stem.parent_path());
  write_weights(std::filesystem::path(stem).concat(".vwtc"), w);

  const auto& s = model.head.shape;
  const auto& c = model.config;
  json meta{{"head", head_kind_name(s.kind)},
            {"feature_shape", s.feature_shape},
            {"classes", model.classes},
            {"standardized", !model.channel_mean.empty()},
            {"train_config",
             {{"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"seed", c.seed},
              {"early_stop_patience", c.early_stop_patience},
              {"standardize", c.standardize},
              {"conv1_channels", c.conv1_channels},
              {"conv2_channels", c.conv2_channels}}}};
  std::ofstream out(std::filesystem::path(stem).concat(".json"));
  if (!out) throw IoError("cannot write " + stem.string() + ".json");
  out << meta.dump(2) << '\n';
}

Model load_model(const std::filesystem::path& stem) {
  const auto meta_path = std::filesystem::path(stem).concat(".json");
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot open " + meta_path.string());
  Model model;
  try {
    json meta;
    in >> meta;
    const auto& c = meta.at("train_config");
    auto& t = model.config;
    t.learning_rate = c.at("learning_rate").get<double>();
    t.momentum = c.at("momentum").get<double>();
    t.batch_size = c.at("batch_size").get<std::size_t>();
    t.max_epochs = c.at("max_epochs").get<int>();
    t.seed = c.at("seed").get<std::uint64_t>();
    t.early_stop_patience = c.at("early_stop_patience").get<int>();
    t.standardize = c.at("standardize").get<bool>();
    t.conv1_channels = c.at("conv1_channels").get<std::size_t>();
    t.conv2_channels = c.at("conv2_channels").get<std::size_t>();
    model.classes = meta.at("classes").get<std::vector<std::string>>();
    model.head.shape = {parse_head_kind(meta.at("head").get<std::string>()), meta.at("feature_shape").get<Shape>(),
                        model.classes.size(), t.conv1_channels, t.conv2_channels};
    const auto weights = read_weights(std::filesystem::path(stem).concat(".vwtc"));
    for (const auto& [name, shape] : head_parameter_shapes(model.head.shape)) {
      const auto& p = weights.at(name);
      if (p.shape() != shape) throw BindingError("checkpoint tensor " + name + " has shape " + shape_string(p.shape()));
      model.head.params.push_back(p);
    }
    if (meta.at("standardized").get<bool>()) {
      const auto mean = weights.at("input/mean").values(), inv = weights.at("input/inv_std").values();
      model.channel_mean.assign(mean.begin(), mean.end());
      model.channel_inv_std.assign(inv.begin(), inv.end());
    }
  } catch (const json::exception& e) {
    throw DataError("corrupt model metadata " + meta_path.string() + ": " + e.what());
  }
  return model;
}

}  // namespace viewflow
