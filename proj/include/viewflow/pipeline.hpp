#pragma once

// Batch stages over a manifest: flow -> extract -> train -> eval -> report.
// Each stage writes under its own subdirectory of the output directory and
// skips work that is already on disk unless forced.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "viewflow/classifiers.hpp"
#include "viewflow/error.hpp"
#include "viewflow/features.hpp"
#include "viewflow/flow.hpp"

namespace viewflow {

/// An upstream stage has not been run.
class MissingStageError : public Error {
 public:
  explicit MissingStageError(const std::string& stage, const std::string& detail = {})
      : Error(stage + " stage missing" + (detail.empty() ? "" : ": " + detail)), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct RunConfig {
  std::filesystem::path manifest;
  /// Base for relative clip paths; the manifest's directory when unset.
  std::optional<std::filesystem::path> dataset_root;
  std::string network = "reduced";  // built-in name or spec file
  /// Absent: weights drawn from the master seed.
  std::optional<std::filesystem::path> weights;
  FlowParams flow;
  TrainConfig train;
  std::vector<HeadKind> heads{HeadKind::Slp, HeadKind::Conv3d};
  /// Protocol names; empty selects the default suite for the manifest's views.
  std::vector<std::string> protocols;
  std::filesystem::path output_dir = "viewflow-out";
  /// Flow cache root; <output_dir> when unset.
  std::optional<std::filesystem::path> cache_root;
  std::uint64_t seed = 17;
  unsigned jobs = 1;
  bool force = false;

  /// Throws InputError on missing paths or invalid parameters.
  void validate() const;
};

/// JSON object; unknown keys are rejected. Relative paths resolve against
/// `base_dir`.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir);
/// Every field, defaults included. `force` is not part of the echo.
std::string run_config_to_json(const RunConfig& config);

/// Human-readable lines or one JSON object per line.
class Logger {
 public:
  using Fields = std::vector<std::pair<std::string, std::string>>;

  Logger(std::ostream& out, bool json) : out_(out), json_(json) {}
  void info(const std::string& message, const Fields& fields = {}) const { write("info", message, fields); }
  void warn(const std::string& message, const Fields& fields = {}) const { write("warning", message, fields); }
  void error(const std::string& message, const Fields& fields = {}) const { write("error", message, fields); }

 private:
  void write(const char* level, const std::string& message, const Fields& fields) const;
  std::ostream& out_;
  bool json_;
};

/// <cache root>/flow/<key>; the key changes with crop size and flow params.
std::filesystem::path flow_cache_dir(const RunConfig& config);

Manifest load_run_manifest(const RunConfig& config);

/// Writes <output_dir>/config.json.
void write_config_echo(const RunConfig& config);

BatchReport run_flow_stage(const RunConfig& config, const Logger& log);
BatchReport run_extract_stage(const RunConfig& config, const Logger& log);
void run_train_stage(const RunConfig& config, const Logger& log);
void run_eval_stage(const RunConfig& config, const Logger& log);
void run_report_stage(const RunConfig& config, const Logger& log);

/// All stages in order; stops after a stage with failed clips and returns
/// its report.
BatchReport run_all(const RunConfig& config, const Logger& log);

/// <output_dir>/models/<head>/<protocol slug>
std::filesystem::path model_stem(const RunConfig& config, HeadKind head, const std::string& protocol);

}  // namespace viewflow
