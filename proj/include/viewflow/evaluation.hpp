#pragma once

// Cross-view protocols over a manifest: train/test splits per
// source|target view selection, per-protocol training and scoring,
// one-one averaging and report files.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "viewflow/classifiers.hpp"
#include "viewflow/manifest.hpp"

namespace viewflow {

class FeatureArchive;

struct ProtocolSpec {
  std::vector<int> source_views;  // sorted, unique
  std::vector<int> target_views;

  /// "0,1|2"
  std::string name() const;
  /// File-name form of name(): "0-1_to_2".
  std::string slug() const;
  bool one_one() const { return source_views.size() == 1 && target_views.size() == 1 && source_views != target_views; }

  friend bool operator==(const ProtocolSpec&, const ProtocolSpec&) = default;
};

/// Parses "s1,s2|t1"; views may be listed in any order.
ProtocolSpec parse_protocol(std::string_view text);

/// Every ordered pair i|j with i != j, lexicographic.
std::vector<ProtocolSpec> one_one_protocols(const std::vector<int>& views);
/// Train on all views but one, test on the held-out view; held-out view
/// descending. Empty for fewer than two views.
std::vector<ProtocolSpec> one_view_out_protocols(const std::vector<int>& views);
/// Same-view baselines, all|all, one-view-out, one-one; duplicates dropped.
/// For views {0,1,2}: 0|0 1|1 2|2 0,1,2|0,1,2 0,1|2 0,2|1 1,2|0 0|1 0|2 1|0 1|2 2|0 2|1.
std::vector<ProtocolSpec> default_protocols(const std::vector<int>& views);

struct ProtocolSplit {
  std::vector<ClipEntry> train;  // TR clips from the source views
  std::vector<ClipEntry> test;   // TE clips from the target views
};

ProtocolSplit build_split(const Manifest& manifest, const ProtocolSpec& protocol);

struct EvalResult {
  std::string protocol;
  std::vector<std::string> classes;
  /// Counts; rows = true class, columns = predicted class.
  Eigen::MatrixXi confusion;

  std::int64_t correct() const { return confusion.trace(); }
  std::int64_t total() const { return confusion.sum(); }
  /// 100 * trace / total.
  double accuracy() const;
  /// Per class; nullopt for classes without test clips.
  std::vector<std::optional<double>> per_class_accuracy() const;
};

/// Confusion counts from true labels and predicted class indices.
EvalResult score_predictions(std::string protocol, const std::vector<std::string>& classes,
                             const std::vector<std::string>& truth, const std::vector<int>& predicted);

using FeatureMap = std::map<std::string, TensorF>;

/// Features of every clip in the archive.
FeatureMap load_feature_map(const FeatureArchive& archive);

/// Features for `clips` in order; DataError naming the missing clips.
std::vector<TensorF> gather_features(const FeatureMap& features, const std::vector<ClipEntry>& clips);

/// Seed of the head trained for (master seed, protocol, head kind).
std::uint64_t protocol_seed(std::uint64_t master_seed, const ProtocolSpec& protocol, HeadKind kind);

/// Fresh head on the protocol's train split. Classes are all actions in the
/// manifest.
TrainResult train_protocol(const Manifest& manifest, const FeatureMap& features, const ProtocolSpec& protocol,
                           HeadKind kind, TrainConfig config, std::uint64_t master_seed);

/// Scores `model` on the protocol's test split.
EvalResult evaluate_protocol(const Model& model, const Manifest& manifest, const FeatureMap& features,
                             const ProtocolSpec& protocol, std::size_t batch_size);

/// Trains and evaluates every protocol, `jobs` protocols at a time.
std::vector<EvalResult> run_protocol_suite(const Manifest& manifest, const FeatureMap& features, HeadKind kind,
                                           const TrainConfig& config, const std::vector<ProtocolSpec>& protocols,
                                           std::uint64_t master_seed, std::size_t jobs = 1);

/// Unweighted mean accuracy over the one-one protocols among `results`;
/// every ordered pair of `views` must appear exactly once.
double mean_one_one(const std::vector<EvalResult>& results, const std::vector<int>& views);

/// Half-up rounding to two decimals: 93.245 -> "93.25".
std::string format_percent(double value);
/// Same for an exact ratio 100 * num / den.
std::string format_percent(std::int64_t num, std::int64_t den);

struct ReportRow {
  HeadKind head;
  std::vector<EvalResult> results;  // one per protocol, same order
};

struct Report {
  std::vector<ProtocolSpec> protocols;
  std::vector<int> views;
  std::vector<ReportRow> rows;
};

/// Writes results.csv, summary.json and per head and protocol
/// confusion_<head>_<slug>.csv / .pgm into `dir`.
void render_report(const Report& report, const std::filesystem::path& dir);

}  // namespace viewflow
