#include "viewflow/network.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "viewflow/error.hpp"
#include "viewflow/random.hpp"

namespace viewflow {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 7> kKindNames = {{
    {LayerKind::Conv3d, "conv3d"},
    {LayerKind::BatchNorm, "batchnorm"},
    {LayerKind::Relu, "relu"},
    {LayerKind::MaxPool3d, "maxpool3d"},
    {LayerKind::AvgPool3d, "avgpool3d"},
    {LayerKind::Inception, "inception"},
    {LayerKind::Logits, "logits"},
}};

const std::array<const char*, 6> kUnitScopes = {
    "Branch_0/Conv3d_0a_1x1", "Branch_1/Conv3d_0a_1x1", "Branch_1/Conv3d_0b_3x3",
    "Branch_2/Conv3d_0a_1x1", "Branch_2/Conv3d_0b_3x3", "Branch_3/Conv3d_0b_1x1",
};

PoolGeometry pool_geometry(const LayerSpec& l) { return {l.kernel, l.stride, l.padding}; }
ConvGeometry conv_geometry(const LayerSpec& l) { return {l.stride, l.padding}; }

std::size_t inception_channels(const LayerSpec& l) {
  const auto& b = l.branches;
  return b[0] + b[2] + b[4] + b[5];
}

// Spatial/temporal output of a window op; DimensionError names the layer.
Shape window_shape(const Shape& in, std::size_t channels, const LayerSpec& l) {
  Shape out{channels, 0, 0, 0};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t extent = in[a + 1], k = l.kernel[a], s = l.stride[a], p = l.padding[a];
    if (s == 0 || k == 0 || k > extent + 2 * p)
      throw DimensionError("layer '" + l.name + "': window " + std::to_string(k) + " does not fit input " +
                           shape_string(in));
    out[a + 1] = (extent + 2 * p - k) / s + 1;
  }
  return out;
}

struct Unit {
  std::string role;
  std::size_t in, out;
  Triple kernel;
};

std::vector<Unit> inception_units(const LayerSpec& l, std::size_t in) {
  const auto& b = l.branches;
  return {{"b0", in, b[0], {1, 1, 1}},   {"b1a", in, b[1], {1, 1, 1}},   {"b1b", b[1], b[2], {3, 3, 3}},
          {"b2a", in, b[3], {1, 1, 1}},  {"b2b", b[3], b[4], {3, 3, 3}}, {"b3", in, b[5], {1, 1, 1}}};
}

std::string unit_scope(const std::string& role) {
  for (std::size_t i = 0; i < kInceptionUnits.size(); ++i)
    if (role == kInceptionUnits[i]) return kUnitScopes[i];
  throw ContractError("unknown inception unit " + role);
}

std::string default_tensor(const LayerSpec& l, const std::string& role) {
  if (l.kind != LayerKind::Inception) return l.name + "/" + role;
  const auto slash = role.find('/');
  const std::string unit = role.substr(0, slash), param = role.substr(slash + 1);
  const bool conv = param == "w" || param == "b";
  return l.name + "/" + unit_scope(unit) + (conv ? "/conv_3d/" : "/batch_norm/") + param;
}

void add_norm_bindings(std::vector<Binding>& out, std::size_t layer, const std::string& prefix, std::size_t channels,
                       bool scale) {
  if (scale) out.push_back({layer, prefix + "gamma", "", {channels}, ParamInit::Ones});
  out.push_back({layer, prefix + "beta", "", {channels}, ParamInit::Zeros});
  out.push_back({layer, prefix + "moving_mean", "", {channels}, ParamInit::Zeros});
  out.push_back({layer, prefix + "moving_variance", "", {channels}, ParamInit::Ones});
}

const TensorF* lookup(const std::map<std::string, TensorF>& p, const std::string& role) {
  auto it = p.find(role);
  return it == p.end() ? nullptr : &it->second;
}

TensorF conv_unit(const TensorF& x, const std::map<std::string, TensorF>& p, const std::string& prefix,
                  const ConvGeometry& g, bool batch_norm, double eps) {
  TensorF y = conv3d(x, p.at(prefix + "w"), g);
  if (const auto* b = lookup(p, prefix + "b")) y = add_channel_bias(y, *b);
  if (batch_norm) {
    const auto* gamma = lookup(p, prefix + "gamma");
    const TensorF ones({y.dim(1)}, 1.0f);
    y = batchnorm_frozen(y, gamma ? *gamma : ones, p.at(prefix + "beta"), p.at(prefix + "moving_mean"),
                         p.at(prefix + "moving_variance"), eps);
  }
  return y;
}

Triple triple(const json& j, const char* key, Triple fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number_unsigned()) {
    const auto n = v.get<std::size_t>();
    return {n, n, n};
  }
  if (!v.is_array() || v.size() != 3) throw InputError(std::string("'") + key + "' must be an integer or [t, h, w]");
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>(), v[2].get<std::size_t>()};
}

LayerSpec unit_layer(LayerKind kind, std::string name) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  return l;
}

LayerSpec conv(std::string name, std::size_t out, std::size_t k, std::size_t stride, bool bias) {
  auto l = unit_layer(LayerKind::Conv3d, std::move(name));
  l.out_channels = out;
  l.kernel = {k, k, k};
  l.stride = {stride, stride, stride};
  l.padding = {k / 2, k / 2, k / 2};
  l.bias = bias;
  return l;
}

LayerSpec pool(LayerKind kind, std::string name, Triple window, Triple stride, Triple padding) {
  auto l = unit_layer(kind, std::move(name));
  l.kernel = window;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec inception(std::string name, std::array<std::size_t, 6> branches, bool batch_norm) {
  auto l = unit_layer(LayerKind::Inception, std::move(name));
  l.branches = branches;
  l.batch_norm = batch_norm;
  l.bias = !batch_norm;
  return l;
}

LayerSpec logits(std::string name, std::size_t classes) {
  auto l = unit_layer(LayerKind::Logits, std::move(name));
  l.out_channels = classes;
  return l;
}

// conv (no bias) + frozen batch norm + relu, as in the checkpoint's Unit3D.
void i3d_unit(std::vector<LayerSpec>& layers, const std::string& scope, std::size_t out, std::size_t k,
              std::size_t stride) {
  layers.push_back(conv(scope + "/conv_3d", out, k, stride, false));
  layers.push_back(unit_layer(LayerKind::BatchNorm, scope + "/batch_norm"));
  layers.push_back(unit_layer(LayerKind::Relu, scope + "/relu"));
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw InputError("unknown layer kind '" + std::string(name) + "'");
}

std::size_t NetworkSpec::layer_index(std::string_view layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == layer) return i;
  throw InputError("network '" + name + "' has no layer '" + std::string(layer) + "'");
}

std::size_t NetworkSpec::tap_index() const { return layer_index(tap); }

void NetworkSpec::validate() const {
  if (layers.empty()) throw InputError("network '" + name + "' has no layers");
  if (in_channels == 0 || input_size == 0 || min_frames == 0)
    throw InputError("network '" + name + "': in_channels, input_size and min_frames must be positive");
  std::set<std::string> names;
  for (const auto& l : layers) {
    if (l.name.empty()) throw InputError("network '" + name + "': layer without a name");
    if (!names.insert(l.name).second) throw InputError("network '" + name + "': duplicate layer '" + l.name + "'");
    if ((l.kind == LayerKind::Conv3d || l.kind == LayerKind::Logits) && l.out_channels == 0)
      throw InputError("layer '" + l.name + "': out_channels must be positive");
    if (l.kind == LayerKind::Inception)
      for (auto c : l.branches)
        if (c == 0) throw InputError("layer '" + l.name + "': every branch needs channels");
    if ((l.kind == LayerKind::MaxPool3d || l.kind == LayerKind::AvgPool3d))
      for (std::size_t a = 0; a < 3; ++a)
        if (l.padding[a] >= l.kernel[a])
          throw InputError("layer '" + l.name + "': padding must be smaller than the window");
  }
  tap_index();
  infer_shapes(*this, min_frames);
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec, std::size_t frames) {
  Shape cur{spec.in_channels, frames, spec.input_size, spec.input_size};
  std::vector<Shape> out;
  out.reserve(spec.layers.size());
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv3d:
        cur = window_shape(cur, l.out_channels, l);
        break;
      case LayerKind::MaxPool3d:
      case LayerKind::AvgPool3d:
        cur = window_shape(cur, cur[0], l);
        break;
      case LayerKind::Inception:
        cur[0] = inception_channels(l);
        break;
      case LayerKind::Logits:
        cur = {l.out_channels, 1, 1, 1};
        break;
      case LayerKind::BatchNorm:
      case LayerKind::Relu:
        break;
    }
    out.push_back(cur);
  }
  return out;
}

std::vector<Binding> parameter_bindings(const NetworkSpec& spec) {
  std::vector<Binding> out;
  std::size_t channels = spec.in_channels;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::size_t first = out.size();
    switch (l.kind) {
      case LayerKind::Conv3d:
        out.push_back({i, "w", "", {l.out_channels, channels, l.kernel[0], l.kernel[1], l.kernel[2]},
                       ParamInit::Glorot});
        if (l.bias) out.push_back({i, "b", "", {l.out_channels}, ParamInit::Zeros});
        channels = l.out_channels;
        break;
      case LayerKind::Logits:
        out.push_back({i, "w", "", {l.out_channels, channels, 1, 1, 1}, ParamInit::Glorot});
        out.push_back({i, "b", "", {l.out_channels}, ParamInit::Zeros});
        channels = l.out_channels;
        break;
      case LayerKind::BatchNorm:
        add_norm_bindings(out, i, "", channels, l.scale);
        break;
      case LayerKind::Inception:
        for (const auto& u : inception_units(l, channels)) {
          const std::string p = u.role + "/";
          out.push_back({i, p + "w", "", {u.out, u.in, u.kernel[0], u.kernel[1], u.kernel[2]}, ParamInit::Glorot});
          if (l.bias) out.push_back({i, p + "b", "", {u.out}, ParamInit::Zeros});
          if (l.batch_norm) add_norm_bindings(out, i, p, u.out, l.scale);
        }
        channels = inception_channels(l);
        break;
      case LayerKind::Relu:
      case LayerKind::MaxPool3d:
      case LayerKind::AvgPool3d:
        break;
    }
    for (std::size_t b = first; b < out.size(); ++b) {
      auto it = l.bindings.find(out[b].role);
      out[b].tensor = it != l.bindings.end() ? it->second : default_tensor(l, out[b].role);
    }
  }
  return out;
}

WeightContainer random_weights(const NetworkSpec& spec, std::uint64_t seed) {
  const Rng root(seed);
  WeightContainer w;
  for (const auto& b : parameter_bindings(spec)) {
    switch (b.init) {
      case ParamInit::Glorot:
        w.add(b.tensor, glorot_uniform<float>(b.shape, root.split(b.tensor)));
        break;
      case ParamInit::Zeros:
        w.add(b.tensor, TensorF(b.shape, 0.0f));
        break;
      case ParamInit::Ones:
        w.add(b.tensor, TensorF(b.shape, 1.0f));
        break;
    }
  }
  return w;
}

Network load_network(const NetworkSpec& spec, const WeightContainer& weights) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  net.params_.resize(spec.layers.size());
  std::vector<std::string> missing, mismatched;
  for (const auto& b : parameter_bindings(spec)) {
    const auto* t = weights.find(b.tensor);
    if (!t) {
      missing.push_back(b.tensor);
    } else if (t->shape() != b.shape) {
      mismatched.push_back(b.tensor + " (expected " + shape_string(b.shape) + ", got " + shape_string(t->shape()) +
                           ")");
    } else {
      net.params_[b.layer].emplace(b.role, *t);
    }
  }
  if (!missing.empty() || !mismatched.empty()) {
    std::ostringstream msg;
    msg << "network '" << spec.name << "': " << missing.size() << " missing, " << mismatched.size()
        << " mismatched tensors";
    if (!missing.empty()) {
      msg << "\n  missing:";
      for (const auto& m : missing) msg << "\n    " << m;
    }
    if (!mismatched.empty()) {
      msg << "\n  shape mismatch:";
      for (const auto& m : mismatched) msg << "\n    " << m;
    }
    throw BindingError(msg.str(), missing, mismatched);
  }
  return net;
}

TensorF Network::apply(std::size_t layer, const TensorF& x) const {
  const auto& l = spec_.layers[layer];
  const auto& p = params_[layer];
  switch (l.kind) {
    case LayerKind::Conv3d:
      return conv_unit(x, p, "", conv_geometry(l), false, l.eps);
    case LayerKind::BatchNorm: {
      const TensorF ones({x.dim(1)}, 1.0f);
      const auto* gamma = lookup(p, "gamma");
      return batchnorm_frozen(x, gamma ? *gamma : ones, p.at("beta"), p.at("moving_mean"), p.at("moving_variance"),
                              l.eps);
    }
    case LayerKind::Relu:
      return relu(x);
    case LayerKind::MaxPool3d:
      return maxpool3d(x, pool_geometry(l));
    case LayerKind::AvgPool3d:
      return avgpool3d(x, pool_geometry(l));
    case LayerKind::Inception: {
      auto unit = [&](const TensorF& in, const char* role, std::size_t k) {
        const std::size_t pad = k / 2;
        return relu(conv_unit(in, p, std::string(role) + "/", {{1, 1, 1}, {pad, pad, pad}}, l.batch_norm, l.eps));
      };
      const TensorF parts[] = {
          unit(x, "b0", 1),
          unit(unit(x, "b1a", 1), "b1b", 3),
          unit(unit(x, "b2a", 1), "b2b", 3),
          unit(maxpool3d(x, PoolGeometry{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}}), "b3", 1),
      };
      return concat_channels<float>(parts);
    }
    case LayerKind::Logits: {
      // 1x1x1 projection averaged over the remaining time and space.
      return global_avg_pool(conv_unit(x, p, "", {}, false, l.eps)).reshaped({x.dim(0), l.out_channels, 1, 1, 1});
    }
  }
  throw ContractError("unhandled layer kind");
}

void Network::check_input(const TensorF& input) const {
  const auto& s = input.shape();
  if (s.size() != 5 || s[1] != spec_.in_channels || s[3] != spec_.input_size || s[4] != spec_.input_size)
    throw DimensionError("network '" + spec_.name + "' expects [N," + std::to_string(spec_.in_channels) + ",T," +
                         std::to_string(spec_.input_size) + "," + std::to_string(spec_.input_size) + "], got " +
                         shape_string(s));
  if (s[2] < spec_.min_frames)
    throw DimensionError("network '" + spec_.name + "' needs at least " + std::to_string(spec_.min_frames) +
                         " frames, got " + std::to_string(s[2]));
}

TensorF Network::forward(const TensorF& input, std::size_t last) const {
  if (last >= spec_.layers.size()) throw ContractError("forward: layer index out of range");
  check_input(input);
  TensorF x = input;
  for (std::size_t i = 0; i <= last; ++i) x = apply(i, x);
  return x;
}

std::vector<TensorF> Network::activations(const TensorF& input) const {
  check_input(input);
  std::vector<TensorF> out;
  out.reserve(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) out.push_back(apply(i, i ? out.back() : input));
  return out;
}

TensorF Network::forward_to_tap(const TensorF& input) const {
  if (input.ndim() != 5 || input.dim(0) != 1)
    throw DimensionError("forward_to_tap expects a single clip [1,C,T,H,W], got " + shape_string(input.shape()));
  TensorF out = forward(input, spec_.tap_index());
  Shape block(out.shape().begin() + 1, out.shape().end());
  return out.reshaped(block);
}

Shape Network::tap_shape(std::size_t frames) const {
  return infer_shapes(spec_, std::max(frames, spec_.min_frames))[spec_.tap_index()];
}

NetworkSpec reduced_spec(std::size_t num_classes) {
  NetworkSpec s;
  s.name = "reduced";
  s.input_size = 32;
  s.min_frames = 8;
  s.tap = "AvgPool3d_6a";
  auto stage = [&](const std::string& id, std::size_t out, Triple pool_window) {
    s.layers.push_back(conv("Conv3d_" + id + "_3x3/conv_3d", out, 3, 1, true));
    s.layers.push_back(unit_layer(LayerKind::Relu, "Conv3d_" + id + "_3x3/relu"));
    s.layers.push_back(pool(LayerKind::MaxPool3d, "MaxPool3d_" + id, pool_window, pool_window, {0, 0, 0}));
  };
  stage("1a", 16, {1, 2, 2});
  stage("2a", 32, {1, 2, 2});
  stage("3a", 32, {2, 2, 2});
  stage("4a", 48, {1, 2, 2});
  s.layers.push_back(inception("Mixed_5b", {16, 16, 24, 8, 16, 8}, false));
  s.layers.push_back(pool(LayerKind::AvgPool3d, "AvgPool3d_6a", {2, 2, 2}, {1, 1, 1}, {0, 0, 0}));
  s.layers.push_back(logits("Logits/Conv3d_0c_1x1/conv_3d", num_classes));
  return s;
}

NetworkSpec i3d_flow_spec(std::size_t num_classes) {
  NetworkSpec s;
  s.name = "i3d-flow";
  s.input_size = 224;
  s.min_frames = 16;
  s.tap = "AvgPool3d_6a";
  auto& L = s.layers;
  i3d_unit(L, "Conv3d_1a_7x7", 64, 7, 2);
  L.push_back(pool(LayerKind::MaxPool3d, "MaxPool3d_2a_3x3", {1, 3, 3}, {1, 2, 2}, {0, 1, 1}));
  i3d_unit(L, "Conv3d_2b_1x1", 64, 1, 1);
  i3d_unit(L, "Conv3d_2c_3x3", 192, 3, 1);
  L.push_back(pool(LayerKind::MaxPool3d, "MaxPool3d_3a_3x3", {1, 3, 3}, {1, 2, 2}, {0, 1, 1}));
  L.push_back(inception("Mixed_3b", {64, 96, 128, 16, 32, 32}, true));
  L.push_back(inception("Mixed_3c", {128, 128, 192, 32, 96, 64}, true));
  L.push_back(pool(LayerKind::MaxPool3d, "MaxPool3d_4a_3x3", {3, 3, 3}, {2, 2, 2}, {1, 1, 1}));
  L.push_back(inception("Mixed_4b", {192, 96, 208, 16, 48, 64}, true));
  L.push_back(inception("Mixed_4c", {160, 112, 224, 24, 64, 64}, true));
  L.push_back(inception("Mixed_4d", {128, 128, 256, 24, 64, 64}, true));
  L.push_back(inception("Mixed_4e", {112, 144, 288, 32, 64, 64}, true));
  L.push_back(inception("Mixed_4f", {256, 160, 320, 32, 128, 128}, true));
  L.push_back(pool(LayerKind::MaxPool3d, "MaxPool3d_5a_2x2", {2, 2, 2}, {2, 2, 2}, {0, 0, 0}));
  L.push_back(inception("Mixed_5b", {256, 160, 320, 32, 128, 128}, true));
  // The published checkpoint names this unit Conv3d_0a_3x3.
  for (const char* p : {"w", "beta", "moving_mean", "moving_variance"}) {
    const bool conv_param = std::string(p) == "w";
    L.back().bindings[std::string("b2b/") + p] =
        std::string("Mixed_5b/Branch_2/Conv3d_0a_3x3/") + (conv_param ? "conv_3d/" : "batch_norm/") + p;
  }
  L.push_back(inception("Mixed_5c", {384, 192, 384, 48, 128, 128}, true));
  L.push_back(pool(LayerKind::AvgPool3d, "AvgPool3d_6a", {2, 7, 7}, {1, 1, 1}, {0, 0, 0}));
  L.push_back(logits("Logits/Conv3d_0c_1x1/conv_3d", num_classes));
  return s;
}

NetworkSpec resolve_network_spec(const std::string& name_or_path) {
  if (name_or_path == "reduced") return reduced_spec();
  if (name_or_path == "i3d-flow") return i3d_flow_spec();
  if (!std::filesystem::exists(name_or_path))
    throw InputError("network spec '" + name_or_path + "' is neither a built-in name nor an existing file");
  return load_network_spec(name_or_path);
}

NetworkSpec parse_network_spec(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("network spec is not valid JSON: ") + e.what());
  }
  NetworkSpec s;
  try {
    s.name = j.value("name", "custom");
    s.in_channels = j.value("in_channels", std::size_t{2});
    s.input_size = j.value("input_size", std::size_t{224});
    s.min_frames = j.value("min_frames", std::size_t{16});
    s.tap = j.at("tap").get<std::string>();
    for (const auto& jl : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
      l.name = jl.at("name").get<std::string>();
      l.out_channels = jl.value("out_channels", std::size_t{0});
      const bool is_pool = l.kind == LayerKind::MaxPool3d || l.kind == LayerKind::AvgPool3d;
      l.kernel = triple(jl, is_pool ? "window" : "kernel", {1, 1, 1});
      l.stride = triple(jl, "stride", is_pool ? l.kernel : Triple{1, 1, 1});
      l.padding = triple(jl, "padding", {0, 0, 0});
      l.batch_norm = jl.value("batch_norm", false);
      l.bias = jl.value("bias", !l.batch_norm);
      l.scale = jl.value("scale", false);
      l.eps = jl.value("eps", 1e-3);
      if (jl.contains("branches")) {
        const auto& b = jl.at("branches");
        if (!b.is_array() || b.size() != 6) throw InputError("layer '" + l.name + "': 'branches' needs 6 entries");
        for (std::size_t i = 0; i < 6; ++i) l.branches[i] = b[i].get<std::size_t>();
      }
      if (jl.contains("bindings")) l.bindings = jl.at("bindings").get<std::map<std::string, std::string>>();
      s.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("network spec: ") + e.what());
  }
  s.validate();
  return s;
}

NetworkSpec load_network_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_network_spec(ss.str());
}

std::string network_spec_to_json(const NetworkSpec& s) {
  auto arr = [](const Triple& t) { return json::array({t[0], t[1], t[2]}); };
  json layers = json::array();
  for (const auto& l : s.layers) {
    json jl{{"kind", layer_kind_name(l.kind)}, {"name", l.name}};
    switch (l.kind) {
      case LayerKind::Conv3d:
        jl["out_channels"] = l.out_channels;
        jl["kernel"] = arr(l.kernel);
        jl["stride"] = arr(l.stride);
        jl["padding"] = arr(l.padding);
        jl["bias"] = l.bias;
        break;
      case LayerKind::MaxPool3d:
      case LayerKind::AvgPool3d:
        jl["window"] = arr(l.kernel);
        jl["stride"] = arr(l.stride);
        jl["padding"] = arr(l.padding);
        break;
      case LayerKind::BatchNorm:
        jl["scale"] = l.scale;
        jl["eps"] = l.eps;
        break;
      case LayerKind::Inception:
        jl["branches"] = l.branches;
        jl["bias"] = l.bias;
        jl["batch_norm"] = l.batch_norm;
        if (l.batch_norm) {
          jl["scale"] = l.scale;
          jl["eps"] = l.eps;
        }
        break;
      case LayerKind::Logits:
        jl["out_channels"] = l.out_channels;
        break;
      case LayerKind::Relu:
        break;
    }
    if (!l.bindings.empty()) jl["bindings"] = l.bindings;
    layers.push_back(std::move(jl));
  }
  json j{{"name", s.name},
         {"in_channels", s.in_channels},
         {"input_size", s.input_size},
         {"min_frames", s.min_frames},
         {"tap", s.tap},
         {"layers", std::move(layers)}};
  return j.dump(2);
}

}  // namespace viewflow
