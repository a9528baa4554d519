// viewflow: flow -> features -> classifier heads -> cross-view report.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "viewflow/evaluation.hpp"
#include "viewflow/pipeline.hpp"
#include "viewflow/synth.hpp"

namespace fs = std::filesystem;
using namespace viewflow;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kPartial = 3, kMissingStage = 4 };

struct Overrides {
  std::string config;
  std::string manifest, dataset_root, network, weights, out, cache;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::vector<std::string> heads, protocols;
  bool force = false;
};

void add_run_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("-m,--manifest", o.manifest, "manifest.json");
  cmd->add_option("--dataset-root", o.dataset_root, "base directory for relative clip paths");
  cmd->add_option("--network", o.network, "network spec: reduced, i3d-flow or a JSON file");
  cmd->add_option("--weights", o.weights, "weight container (.vwtc); random seeded weights when absent");
  cmd->add_option("-o,--out", o.out, "output directory");
  cmd->add_option("--cache", o.cache, "flow cache root (also VIEWFLOW_CACHE)");
  cmd->add_option("--seed", o.seed, "master seed (default 17)");
  cmd->add_option("-j,--jobs", o.jobs, "parallel clips or protocols");
  cmd->add_option("--epochs", o.epochs, "max training epochs");
  cmd->add_option("--lr", o.learning_rate, "learning rate");
  cmd->add_option("--batch-size", o.batch_size, "training and evaluation batch size");
  cmd->add_option("--heads", o.heads, "classifier heads (slp, conv3d)")->delimiter(',');
  cmd->add_option("--protocol", o.protocols, "protocol such as 0,1|2 (repeatable; default suite when absent)");
  cmd->add_flag("--force", o.force, "recompute existing outputs");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config.empty()) c = parse_run_config(read_text(o.config), fs::path(o.config).parent_path());
  if (const char* env = std::getenv("VIEWFLOW_CACHE"); env && *env) c.cache_root = fs::path(env);
  if (!o.manifest.empty()) c.manifest = o.manifest;
  if (!o.dataset_root.empty()) c.dataset_root = fs::path(o.dataset_root);
  if (!o.network.empty()) c.network = o.network;
  if (!o.weights.empty()) c.weights = fs::path(o.weights);
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.cache.empty()) c.cache_root = fs::path(o.cache);
  if (o.seed) c.seed = *o.seed;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.epochs) c.train.max_epochs = *o.epochs;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (!o.heads.empty()) {
    c.heads.clear();
    for (const auto& h : o.heads) c.heads.push_back(parse_head_kind(h));
  }
  if (!o.protocols.empty()) c.protocols = o.protocols;
  c.force = o.force;
  c.validate();
  return c;
}

int batch_exit(const BatchReport& r) { return r.failures.empty() ? kOk : kPartial; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view action recognition from optical-flow features"};
  app.require_subcommand(1);
  bool json_logs = false;
  app.add_flag("--json-logs", json_logs, "one JSON object per log line on stderr");

  SynthConfig synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("generate-synth", "render the synthetic multi-view dataset");
  gen->add_option("-o,--out", synth_out, "dataset directory")->required();
  gen->add_option("--directions", synth.directions, "motion directions");
  gen->add_option("--speeds", synth.speeds, "speeds in pixels per frame")->delimiter(',');
  gen->add_option("--views", synth.views, "views");
  gen->add_option("--train-per-class", synth.train_per_class, "TR clips per class and view");
  gen->add_option("--test-per-class", synth.test_per_class, "TE clips per class and view");
  gen->add_option("--frames", synth.frames, "frames per clip");
  gen->add_option("--size", synth.size, "frame size in pixels");
  gen->add_option("--seed", synth.seed, "seed");

  Overrides o;
  std::vector<std::pair<CLI::App*, std::string>> stages;
  for (const char* name : {"flow", "extract", "train", "eval", "report", "run-all"}) {
    static const std::map<std::string, std::string> help{
        {"flow", "compute and cache TV-L1 flow for every clip"},
        {"extract", "backbone features for every clip"},
        {"train", "train one head per protocol"},
        {"eval", "score every trained head on its protocol"},
        {"report", "write results.csv, confusion matrices and summary.json"},
        {"run-all", "flow, extract, train, eval and report"}};
    auto* cmd = app.add_subcommand(name, help.at(name));
    add_run_options(cmd, o);
    stages.emplace_back(cmd, name);
  }
  for (auto* cmd : app.get_subcommands({})) cmd->add_flag("--json-logs", json_logs, "one JSON object per log line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  const Logger log(std::cerr, json_logs);
  try {
    if (gen->parsed()) {
      const auto manifest = generate_synthetic(synth, synth_out);
      log.info("synthetic dataset written", {{"clips", std::to_string(manifest.entries.size())},
                                             {"manifest", (fs::path(synth_out) / "manifest.json").string()}});
      return kOk;
    }
    std::string stage;
    for (const auto& [cmd, name] : stages)
      if (cmd->parsed()) stage = name;
    const auto config = resolve(o);
    write_config_echo(config);
    if (stage == "flow") return batch_exit(run_flow_stage(config, log));
    if (stage == "extract") return batch_exit(run_extract_stage(config, log));
    if (stage == "train") run_train_stage(config, log);
    if (stage == "eval") run_eval_stage(config, log);
    if (stage == "report") run_report_stage(config, log);
    if (stage == "run-all") return batch_exit(run_all(config, log));
    return kOk;
  } catch (const MissingStageError& e) {
    log.error(e.what());
    return kMissingStage;
  } catch (const InputError& e) {
    log.error(e.what());
    return kConfig;
  } catch (const ProtocolError& e) {
    log.error(e.what());
    return kConfig;
  } catch (const BindingError& e) {
    log.error(e.what());
    return kConfig;
  } catch (const CoverageError& e) {
    log.error(e.what());
    return kConfig;
  } catch (const IoError& e) {
    log.error(e.what());
    return kFailure;
  } catch (const Error& e) {
    log.error(e.what());
    return kPartial;
  } catch (const std::exception& e) {
    log.error(e.what());
    return kFailure;
  }
}
