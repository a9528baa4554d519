#pragma once

// Clip ingestion (frames -> TV-L1 flows -> backbone tap) and the on-disk
// flow cache and feature archive.

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "viewflow/flow.hpp"
#include "viewflow/manifest.hpp"
#include "viewflow/network.hpp"

namespace viewflow {

/// Image files of a clip directory in natural order ("f2" before "f10").
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& clip_dir);

/// Bilinear resize so the short side is round(crop * 256 / 224), then a
/// centered crop x crop window.
GrayFrame preprocess_frame(const GrayFrame& frame, std::size_t crop);

/// TV-L1 flow between consecutive preprocessed frames of a clip directory.
std::vector<FlowField> compute_clip_flows(const std::filesystem::path& clip_dir, std::size_t crop,
                                          const FlowParams& params);

/// Network input for one clip; short clips are padded by repeating the last
/// flow up to `min_frames`.
TensorF clip_network_input(std::span<const FlowField> flows, std::size_t min_frames, float clip_bound = 20.0f);

/// <dir>/<clip stem>/NNNN.vflo, with a "count" file written last to mark a
/// complete clip.
class FlowCache {
 public:
  explicit FlowCache(std::filesystem::path dir) : dir_(std::move(dir)) {}
  const std::filesystem::path& dir() const noexcept { return dir_; }

  bool complete(std::string_view clip) const;
  void store(std::string_view clip, std::span<const FlowField> flows) const;
  std::vector<FlowField> load(std::string_view clip) const;

 private:
  std::filesystem::path clip_dir(std::string_view clip) const;
  std::filesystem::path dir_;
};

/// VFEA layout: "VFEA", u32 version = 1, u32 ndim, ndim x u64 dims, float32 payload.
void write_feature_block(const std::filesystem::path& path, const TensorF& block);
TensorF read_feature_block(const std::filesystem::path& path);

struct FeatureRecord {
  std::string clip;
  std::string file;
  std::string label;
  int view = 0;
  Split split = Split::Train;
  std::string actor;
};

/// Directory of per-clip VFEA files plus index.json
/// ({clip: {file, label, view, split, actor}}). Appends are serialized.
class FeatureArchive {
 public:
  /// Creates the directory and loads an existing index.
  explicit FeatureArchive(std::filesystem::path dir);

  static bool exists(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  bool contains(std::string_view clip) const;
  std::size_t size() const;
  /// Sorted by clip id.
  std::vector<FeatureRecord> records() const;
  const FeatureRecord& record(std::string_view clip) const;
  TensorF load(std::string_view clip) const;

  void put(const ClipEntry& clip, const TensorF& block);
  void save_index() const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, FeatureRecord, std::less<>> index_;
};

struct ClipFailure {
  std::string clip;
  std::string message;
};

struct BatchReport {
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::vector<ClipFailure> failures;  // sorted by clip id
};

struct BatchOptions {
  bool force = false;
  unsigned jobs = 1;
  /// Called once per clip with "done", "skipped" or "failed: <why>".
  std::function<void(const std::string& clip, const std::string& status)> progress;
};

/// Populates the flow cache for every clip of the manifest.
BatchReport compute_flows(const Manifest& manifest, const FlowCache& cache, std::size_t crop,
                          const FlowParams& params, const BatchOptions& options = {});

/// One FeatureBlock per distinct clip id. Flows come from `cache` when it holds
/// the clip, otherwise they are computed (and stored if a cache is given).
/// Unreadable clips are reported and skipped; the index is saved at the end.
BatchReport extract_features(const Manifest& manifest, const Network& network, const FlowParams& params,
                             FeatureArchive& archive, const FlowCache* cache = nullptr,
                             const BatchOptions& options = {});

}  // namespace viewflow
