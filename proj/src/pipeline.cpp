#include "viewflow/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "viewflow/evaluation.hpp"
#include "viewflow/network.hpp"
#include "viewflow/parallel.hpp"
#include "viewflow/weights.hpp"

namespace viewflow {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

template <typename T>
void take(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError("config: " + where + key + " has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, _] : obj.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw InputError("config: unknown key " + where + k);
  }
}

std::optional<fs::path> optional_path(const json& obj, const char* key, const fs::path& base) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  if (!obj.at(key).is_string()) throw InputError(std::string("config: ") + key + " must be a string");
  return base / obj.at(key).get<std::string>();
}

json flow_json(const FlowParams& p) {
  return {{"lambda", p.lambda},           {"theta", p.theta},     {"tau", p.tau},
          {"n_scales", p.n_scales},       {"scale_factor", p.scale_factor},
          {"n_warps", p.n_warps},         {"n_iters", p.n_iters}, {"stop_eps", p.stop_eps},
          {"median_filter", p.median_filter}, {"monotone_warps", p.monotone_warps}};
}

std::vector<ProtocolSpec> resolve_protocols(const RunConfig& config, const Manifest& manifest) {
  if (config.protocols.empty()) return default_protocols(manifest.views());
  std::vector<ProtocolSpec> out;
  for (const auto& p : config.protocols) out.push_back(parse_protocol(p));
  return out;
}

fs::path features_dir(const RunConfig& c) { return c.output_dir / "features"; }
fs::path eval_file(const RunConfig& c) { return c.output_dir / "eval" / "results.json"; }

BatchOptions batch_options(const RunConfig& config, const Logger& log, const char* stage) {
  BatchOptions opts;
  opts.force = config.force;
  opts.jobs = config.jobs;
  opts.progress = [&log, stage](const std::string& clip, const std::string& status) {
    if (status.rfind("failed", 0) == 0)
      log.error(stage, {{"clip", clip}, {"status", status}});
    else
      log.info(stage, {{"clip", clip}, {"status", status}});
  };
  return opts;
}

void log_report(const Logger& log, const char* stage, const BatchReport& r) {
  log.info(std::string(stage) + " finished", {{"processed", std::to_string(r.processed)},
                                              {"skipped", std::to_string(r.skipped)},
                                              {"failed", std::to_string(r.failures.size())}});
  for (const auto& f : r.failures) log.error(std::string(stage) + " failed", {{"clip", f.clip}, {"error", f.message}});
}

}  // namespace

void RunConfig::validate() const {
  if (manifest.empty()) throw InputError("config: manifest is required");
  if (!fs::is_regular_file(manifest)) throw InputError("config: manifest " + manifest.string() + " does not exist");
  if (dataset_root && !fs::is_directory(*dataset_root))
    throw InputError("config: dataset_root " + dataset_root->string() + " does not exist");
  if (weights && !fs::is_regular_file(*weights)) throw InputError("config: weights " + weights->string() + " does not exist");
  if (heads.empty()) throw InputError("config: at least one head is required");
  if (jobs == 0) throw InputError("config: jobs must be >= 1");
  if (output_dir.empty()) throw InputError("config: output_dir is required");
  flow.validate();
  train.validate();
  for (const auto& p : protocols) parse_protocol(p);
  resolve_network_spec(network);
}

RunConfig parse_run_config(std::string_view text, const fs::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("config: expected a JSON object");
  reject_unknown(j,
                 {"manifest", "dataset_root", "network", "weights", "flow", "train", "heads", "protocols", "output_dir",
                  "cache_root", "seed", "jobs"},
                 "");
  RunConfig c;
  if (auto p = optional_path(j, "manifest", base)) c.manifest = *p;
  c.dataset_root = optional_path(j, "dataset_root", base);
  c.weights = optional_path(j, "weights", base);
  c.cache_root = optional_path(j, "cache_root", base);
  if (auto p = optional_path(j, "output_dir", base)) c.output_dir = *p;
  take(j, "network", c.network, "");
  if (c.network.find('/') != std::string::npos || c.network.ends_with(".json"))
    c.network = (base / c.network).string();
  take(j, "seed", c.seed, "");
  take(j, "jobs", c.jobs, "");
  take(j, "protocols", c.protocols, "");
  if (j.contains("heads")) {
    std::vector<std::string> heads;
    take(j, "heads", heads, "");
    c.heads.clear();
    for (const auto& h : heads) c.heads.push_back(parse_head_kind(h));
  }
  if (j.contains("flow")) {
    const auto& f = j["flow"];
    if (!f.is_object()) throw InputError("config: flow must be an object");
    reject_unknown(f,
                   {"lambda", "theta", "tau", "n_scales", "scale_factor", "n_warps", "n_iters", "stop_eps",
                    "median_filter", "monotone_warps"},
                   "flow.");
    take(f, "lambda", c.flow.lambda, "flow.");
    take(f, "theta", c.flow.theta, "flow.");
    take(f, "tau", c.flow.tau, "flow.");
    take(f, "n_scales", c.flow.n_scales, "flow.");
    take(f, "scale_factor", c.flow.scale_factor, "flow.");
    take(f, "n_warps", c.flow.n_warps, "flow.");
    take(f, "n_iters", c.flow.n_iters, "flow.");
    take(f, "stop_eps", c.flow.stop_eps, "flow.");
    take(f, "median_filter", c.flow.median_filter, "flow.");
    take(f, "monotone_warps", c.flow.monotone_warps, "flow.");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    if (!t.is_object()) throw InputError("config: train must be an object");
    reject_unknown(t,
                   {"learning_rate", "momentum", "batch_size", "max_epochs", "early_stop_patience", "standardize",
                    "conv1_channels", "conv2_channels"},
                   "train.");
    take(t, "learning_rate", c.train.learning_rate, "train.");
    take(t, "momentum", c.train.momentum, "train.");
    take(t, "batch_size", c.train.batch_size, "train.");
    take(t, "max_epochs", c.train.max_epochs, "train.");
    take(t, "early_stop_patience", c.train.early_stop_patience, "train.");
    take(t, "standardize", c.train.standardize, "train.");
    take(t, "conv1_channels", c.train.conv1_channels, "train.");
    take(t, "conv2_channels", c.train.conv2_channels, "train.");
  }
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  auto path_or_null = [](const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); };
  json heads = json::array();
  for (auto h : c.heads) heads.push_back(head_kind_name(h));
  const auto& t = c.train;
  json j = {{"manifest", c.manifest.string()},
            {"dataset_root", path_or_null(c.dataset_root)},
            {"network", c.network},
            {"weights", path_or_null(c.weights)},
            {"flow", flow_json(c.flow)},
            {"train",
             {{"learning_rate", t.learning_rate},
              {"momentum", t.momentum},
              {"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"early_stop_patience", t.early_stop_patience},
              {"standardize", t.standardize},
              {"conv1_channels", t.conv1_channels},
              {"conv2_channels", t.conv2_channels}}},
            {"heads", heads},
            {"protocols", c.protocols},
            {"output_dir", c.output_dir.string()},
            {"cache_root", path_or_null(c.cache_root)},
            {"seed", c.seed},
            {"jobs", c.jobs}};
  return j.dump(2) + "\n";
}

void Logger::write(const char* level, const std::string& message, const Fields& fields) const {
  static std::mutex mutex;
  std::string line;
  if (json_) {
    json j = {{"level", level}, {"message", message}};
    for (const auto& [k, v] : fields) j[k] = v;
    line = j.dump();
  } else {
    line = std::string(level) + ": " + message;
    for (const auto& [k, v] : fields) line += " " + k + "=" + v;
  }
  std::lock_guard lock(mutex);
  out_ << line << '\n' << std::flush;
}

fs::path flow_cache_dir(const RunConfig& config) {
  const auto spec = resolve_network_spec(config.network);
  const std::string key_text = std::to_string(spec.input_size) + " " + flow_json(config.flow).dump();
  char key[32];
  std::snprintf(key, sizeof key, "crop%zu-%08llx", spec.input_size,
                (unsigned long long)(Rng::hash(key_text) & 0xffffffffULL));
  return config.cache_root.value_or(config.output_dir) / "flow" / key;
}

Manifest load_run_manifest(const RunConfig& config) {
  if (!config.dataset_root) return load_manifest(config.manifest);
  return parse_manifest(read_file(config.manifest), *config.dataset_root);
}

void write_config_echo(const RunConfig& config) { write_file(config.output_dir / "config.json", run_config_to_json(config)); }

BatchReport run_flow_stage(const RunConfig& config, const Logger& log) {
  const auto manifest = load_run_manifest(config);
  for (const auto& w : manifest.warnings) log.warn(w);
  if (manifest.entries.empty()) log.warn("0 clips");
  const auto spec = resolve_network_spec(config.network);
  FlowCache cache(flow_cache_dir(config));
  fs::create_directories(cache.dir());
  const auto report = compute_flows(manifest, cache, spec.input_size, config.flow, batch_options(config, log, "flow"));
  log_report(log, "flow", report);
  return report;
}

BatchReport run_extract_stage(const RunConfig& config, const Logger& log) {
  const auto manifest = load_run_manifest(config);
  if (manifest.entries.empty()) log.warn("0 clips");
  FlowCache cache(flow_cache_dir(config));
  if (!fs::is_directory(cache.dir())) throw MissingStageError("flow", "no flow cache at " + cache.dir().string());
  const auto spec = resolve_network_spec(config.network);
  const auto weights = config.weights ? read_weights(*config.weights) : random_weights(spec, config.seed);
  const auto network = load_network(spec, weights);
  FeatureArchive archive(features_dir(config));
  const auto report =
      extract_features(manifest, network, config.flow, archive, &cache, batch_options(config, log, "extract"));
  log_report(log, "extract", report);
  return report;
}

fs::path model_stem(const RunConfig& config, HeadKind head, const std::string& protocol) {
  return config.output_dir / "models" / std::string(head_kind_name(head)) / parse_protocol(protocol).slug();
}

void run_train_stage(const RunConfig& config, const Logger& log) {
  if (!FeatureArchive::exists(features_dir(config))) throw MissingStageError("extract", "no features in " + features_dir(config).string());
  const auto manifest = load_run_manifest(config);
  const auto protocols = resolve_protocols(config, manifest);
  const auto features = load_feature_map(FeatureArchive(features_dir(config)));
  std::vector<std::pair<HeadKind, ProtocolSpec>> tasks;
  for (auto head : config.heads)
    for (const auto& p : protocols) tasks.emplace_back(head, p);
  parallel_for(tasks.size(), config.jobs, [&](std::size_t i) {
    const auto& [head, protocol] = tasks[i];
    const auto stem = model_stem(config, head, protocol.name());
    const Logger::Fields fields{{"head", std::string(head_kind_name(head))}, {"protocol", protocol.name()}};
    if (!config.force && fs::exists(stem.string() + ".json") && fs::exists(stem.string() + ".vwtc")) {
      log.info("train skipped", fields);
      return;
    }
    const auto result = train_protocol(manifest, features, protocol, head, config.train, config.seed);
    fs::create_directories(stem.parent_path());
    save_model(result.model, stem);
    json curve = result.loss_curve;
    write_file(stem.string() + ".loss.json", curve.dump() + "\n");
    auto done = fields;
    done.emplace_back("epochs", std::to_string(result.loss_curve.size()));
    done.emplace_back("final_loss", std::to_string(result.loss_curve.back()));
    log.info("trained", done);
  });
}

void run_eval_stage(const RunConfig& config, const Logger& log) {
  const auto manifest = load_run_manifest(config);
  const auto protocols = resolve_protocols(config, manifest);
  for (auto head : config.heads)
    for (const auto& p : protocols) {
      const auto stem = model_stem(config, head, p.name());
      if (!fs::exists(stem.string() + ".json") || !fs::exists(stem.string() + ".vwtc"))
        throw MissingStageError("train", "no " + std::string(head_kind_name(head)) + " model for protocol " + p.name());
    }
  if (!FeatureArchive::exists(features_dir(config))) throw MissingStageError("extract");
  const auto features = load_feature_map(FeatureArchive(features_dir(config)));

  json heads = json::array();
  for (auto head : config.heads) {
    std::vector<EvalResult> results(protocols.size());
    parallel_for(protocols.size(), config.jobs, [&](std::size_t i) {
      const auto model = load_model(model_stem(config, head, protocols[i].name()));
      results[i] = evaluate_protocol(model, manifest, features, protocols[i], config.train.batch_size);
    });
    json rows = json::array();
    for (const auto& r : results) {
      json confusion = json::array();
      for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < r.confusion.cols(); ++k) row.push_back(r.confusion(i, k));
        confusion.push_back(row);
      }
      rows.push_back({{"protocol", r.protocol}, {"classes", r.classes}, {"confusion", confusion}});
      log.info("evaluated", {{"head", std::string(head_kind_name(head))},
                             {"protocol", r.protocol},
                             {"accuracy", r.total() ? format_percent(r.correct(), r.total()) : "n/a"}});
    }
    heads.push_back({{"head", head_kind_name(head)}, {"results", rows}});
  }
  json protocol_names = json::array();
  for (const auto& p : protocols) protocol_names.push_back(p.name());
  const json out = {{"views", manifest.views()}, {"protocols", protocol_names}, {"heads", heads}};
  write_file(eval_file(config), out.dump(1) + "\n");
}

void run_report_stage(const RunConfig& config, const Logger& log) {
  if (!fs::exists(eval_file(config))) throw MissingStageError("eval", "no " + eval_file(config).string());
  Report report;
  try {
    const auto j = json::parse(read_file(eval_file(config)));
    report.views = j.at("views").get<std::vector<int>>();
    for (const auto& p : j.at("protocols")) report.protocols.push_back(parse_protocol(p.get<std::string>()));
    for (const auto& h : j.at("heads")) {
      ReportRow row{parse_head_kind(h.at("head").get<std::string>()), {}};
      for (const auto& r : h.at("results")) {
        EvalResult e{r.at("protocol").get<std::string>(), r.at("classes").get<std::vector<std::string>>(), {}};
        const auto k = Eigen::Index(e.classes.size());
        e.confusion = Eigen::MatrixXi::Zero(k, k);
        const auto& m = r.at("confusion");
        if (m.size() != std::size_t(k)) throw DataError("confusion matrix size does not match classes");
        for (Eigen::Index i = 0; i < k; ++i)
          for (Eigen::Index c = 0; c < k; ++c) e.confusion(i, c) = m.at(std::size_t(i)).at(std::size_t(c)).get<int>();
        row.results.push_back(std::move(e));
      }
      report.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw DataError("corrupt " + eval_file(config).string() + ": " + e.what());
  }
  render_report(report, config.output_dir / "report");
  log.info("report written", {{"dir", (config.output_dir / "report").string()}});
}

BatchReport run_all(const RunConfig& config, const Logger& log) {
  auto flows = run_flow_stage(config, log);
  if (!flows.failures.empty()) return flows;
  auto features = run_extract_stage(config, log);
  if (!features.failures.empty()) return features;
  run_train_stage(config, log);
  run_eval_stage(config, log);
  run_report_stage(config, log);
  return features;
}

}  // namespace viewflow
