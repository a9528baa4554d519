#include "viewflow/features.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "viewflow/binary_io.hpp"
#include "viewflow/error.hpp"
#include "viewflow/parallel.hpp"

namespace viewflow {

using nlohmann::json;

namespace {

bool is_frame_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

// Digit runs compare by value, everything else bytewise.
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit((unsigned char)a[i]) && std::isdigit((unsigned char)b[j])) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit((unsigned char)a[ie])) ++ie;
      while (je < b.size() && std::isdigit((unsigned char)b[je])) ++je;
      std::string_view da(a.data() + i, ie - i), db(b.data() + j, je - j);
      while (da.size() > 1 && da.front() == '0') da.remove_prefix(1);
      while (db.size() > 1 && db.front() == '0') db.remove_prefix(1);
      if (da.size() != db.size()) return da.size() < db.size();
      if (da != db) return da < db;
      i = ie, j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i, ++j;
    }
  }
  if ((a.size() - i) != (b.size() - j)) return a.size() - i < b.size() - j;
  return a < b;
}

// First occurrence of each clip id wins.
std::vector<const ClipEntry*> unique_clips(const Manifest& m) {
  std::set<std::string_view> seen;
  std::vector<const ClipEntry*> out;
  for (const auto& e : m.entries)
    if (seen.insert(e.clip).second) out.push_back(&e);
  return out;
}

template <typename Fn>
BatchReport run_batch(const std::vector<const ClipEntry*>& clips, const BatchOptions& options, Fn&& work) {
  BatchReport report;
  std::mutex mutex;
  parallel_for(clips.size(), options.jobs, [&](std::size_t i) {
    const auto& clip = *clips[i];
    std::string status;
    try {
      status = work(clip) ? "done" : "skipped";
    } catch (const Error& e) {
      status = std::string("failed: ") + e.what();
    } catch (const std::filesystem::filesystem_error& e) {
      status = std::string("failed: ") + e.what();
    }
    std::lock_guard lock(mutex);
    if (status == "done")
      ++report.processed;
    else if (status == "skipped")
      ++report.skipped;
    else
      report.failures.push_back({clip.clip, status.substr(8)});
    if (options.progress) options.progress(clip.clip, status);
  });
  std::sort(report.failures.begin(), report.failures.end(),
            [](const ClipFailure& a, const ClipFailure& b) { return a.clip < b.clip; });
  return report;
}

}  // namespace

std::vector<std::filesystem::path> list_frames(const std::filesystem::path& clip_dir) {
  if (!std::filesystem::is_directory(clip_dir)) throw DataError("clip directory " + clip_dir.string() + " not found");
  std::vector<std::filesystem::path> frames;
  for (const auto& e : std::filesystem::directory_iterator(clip_dir))
    if (e.is_regular_file() && is_frame_file(e.path())) frames.push_back(e.path());
  std::sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) {
    return natural_less(a.filename().string(), b.filename().string());
  });
  return frames;
}

GrayFrame preprocess_frame(const GrayFrame& frame, std::size_t crop) {
  const int target = int(std::lround(double(crop) * 256.0 / 224.0));
  const int w = frame.width(), h = frame.height();
  int nw = target, nh = target;
  if (w < h)
    nh = int(std::lround(double(h) * target / w));
  else
    nw = int(std::lround(double(w) * target / h));
  const Plane resized = (nw == w && nh == h) ? frame.intensity() : resize_bilinear(frame.intensity(), nw, nh);
  const int c = int(crop);
  const Plane cropped = resized.block((nh - c) / 2, (nw - c) / 2, c, c);
  // Bilinear interpolation stays within [0, 1] up to rounding.
  return GrayFrame(cropped.cwiseMax(0.0f).cwiseMin(1.0f));
}

std::vector<FlowField> compute_clip_flows(const std::filesystem::path& clip_dir, std::size_t crop,
                                          const FlowParams& params) {
  const auto files = list_frames(clip_dir);
  if (files.size() < 2)
    throw DataError("clip " + clip_dir.string() + " has " + std::to_string(files.size()) + " frames, need 2");
  std::vector<FlowField> flows;
  flows.reserve(files.size() - 1);
  GrayFrame prev = preprocess_frame(read_frame(files[0]), crop);
  for (std::size_t i = 1; i < files.size(); ++i) {
    GrayFrame cur = preprocess_frame(read_frame(files[i]), crop);
    flows.push_back(tvl1_flow(prev, cur, params));
    prev = std::move(cur);
  }
  return flows;
}

TensorF clip_network_input(std::span<const FlowField> flows, std::size_t min_frames, float clip_bound) {
  if (flows.empty()) throw InputError("clip has no flow fields");
  if (flows.size() >= min_frames) return flow_to_network_input(flows, clip_bound);
  std::vector<FlowField> padded(flows.begin(), flows.end());
  while (padded.size() < min_frames) padded.push_back(flows.back());
  return flow_to_network_input(padded, clip_bound);
}

std::filesystem::path FlowCache::clip_dir(std::string_view clip) const { return dir_ / safe_file_stem(clip); }

bool FlowCache::complete(std::string_view clip) const {
  return std::filesystem::exists(clip_dir(clip) / "count");
}

void FlowCache::store(std::string_view clip, std::span<const FlowField> flows) const {
  const auto dir = clip_dir(clip);
  std::filesystem::create_directories(dir);
  std::filesystem::remove(dir / "count");
  for (std::size_t i = 0; i < flows.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.vflo", i);
    write_flow(dir / name, flows[i]);
  }
  std::ofstream(dir / "count") << flows.size() << '\n';
}

std::vector<FlowField> FlowCache::load(std::string_view clip) const {
  const auto dir = clip_dir(clip);
  std::ifstream in(dir / "count");
  std::size_t n = 0;
  if (!(in >> n) || n == 0) throw DataError("flow cache for clip '" + std::string(clip) + "' is incomplete");
  std::vector<FlowField> flows;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.vflo", i);
    flows.push_back(read_flow(dir / name));
  }
  return flows;
}

void write_feature_block(const std::filesystem::path& path, const TensorF& block) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  binary::Writer wr(out);
  wr.magic("VFEA");
  wr.uint<std::uint32_t>(1);
  wr.uint<std::uint32_t>(std::uint32_t(block.ndim()));
  for (auto d : block.shape()) wr.uint<std::uint64_t>(d);
  wr.floats(block.data());
  if (!wr.good()) throw IoError("failed writing " + path.string());
}

TensorF read_feature_block(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  binary::Reader rd(in);
  rd.expect_magic("VFEA");
  if (rd.uint<std::uint32_t>("version") != 1) throw IntegrityError("unsupported VFEA version", 4);
  const auto ndim = rd.uint<std::uint32_t>("ndim");
  if (ndim == 0 || ndim > 8) throw IntegrityError("implausible rank " + std::to_string(ndim), 8);
  Shape shape(ndim);
  for (auto& d : shape) {
    const std::size_t at = rd.offset();
    d = rd.uint<std::uint64_t>("dims");
    if (d == 0 || d > (std::uint64_t{1} << 32)) throw IntegrityError("bad dimension", at);
  }
  TensorF block(shape);
  rd.floats(block.data(), "payload");
  if (!rd.at_end()) throw IntegrityError("trailing bytes", rd.offset());
  ensure_finite(block, "feature block");
  return block;
}

FeatureArchive::FeatureArchive(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  const auto index = dir_ / "index.json";
  if (!std::filesystem::exists(index)) return;
  std::ifstream in(index);
  json j;
  try {
    in >> j;
    for (const auto& [clip, r] : j.items()) {
      const std::string split = r.at("split").get<std::string>();
      index_.emplace(clip, FeatureRecord{clip, r.at("file").get<std::string>(), r.at("label").get<std::string>(),
                                         r.at("view").get<int>(), split == "TR" ? Split::Train : Split::Test,
                                         r.value("actor", "")});
    }
  } catch (const json::exception& e) {
    throw DataError("corrupt feature index " + index.string() + ": " + e.what());
  }
}

bool FeatureArchive::exists(const std::filesystem::path& dir) { return std::filesystem::exists(dir / "index.json"); }

bool FeatureArchive::contains(std::string_view clip) const {
  std::lock_guard lock(mutex_);
  return index_.find(clip) != index_.end();
}

std::size_t FeatureArchive::size() const {
  std::lock_guard lock(mutex_);
  return index_.size();
}

std::vector<FeatureRecord> FeatureArchive::records() const {
  std::lock_guard lock(mutex_);
  std::vector<FeatureRecord> out;
  for (const auto& [_, r] : index_) out.push_back(r);
  return out;
}

const FeatureRecord& FeatureArchive::record(std::string_view clip) const {
  std::lock_guard lock(mutex_);
  auto it = index_.find(clip);
  if (it == index_.end()) throw DataError("no features for clip '" + std::string(clip) + "'");
  return it->second;
}

TensorF FeatureArchive::load(std::string_view clip) const { return read_feature_block(dir_ / record(clip).file); }

void FeatureArchive::put(const ClipEntry& clip, const TensorF& block) {
  const std::string file = safe_file_stem(clip.clip) + ".vfea";
  write_feature_block(dir_ / file, block);
  std::lock_guard lock(mutex_);
  index_.insert_or_assign(clip.clip, FeatureRecord{clip.clip, file, clip.action, clip.view, clip.split, clip.actor});
}

void FeatureArchive::save_index() const {
  json j = json::object();
  {
    std::lock_guard lock(mutex_);
    for (const auto& [clip, r] : index_)
      j[clip] = {{"file", r.file},
                 {"label", r.label},
                 {"view", r.view},
                 {"split", split_name(r.split)},
                 {"actor", r.actor}};
  }
  const auto tmp = dir_ / "index.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(1) << '\n';
  }
  std::filesystem::rename(tmp, dir_ / "index.json");
}

BatchReport compute_flows(const Manifest& manifest, const FlowCache& cache, std::size_t crop,
                          const FlowParams& params, const BatchOptions& options) {
  params.validate();
  return run_batch(unique_clips(manifest), options, [&](const ClipEntry& clip) {
    if (!options.force && cache.complete(clip.clip)) return false;
    cache.store(clip.clip, compute_clip_flows(clip.path, crop, params));
    return true;
  });
}

BatchReport extract_features(const Manifest& manifest, const Network& network, const FlowParams& params,
                             FeatureArchive& archive, const FlowCache* cache, const BatchOptions& options) {
  params.validate();
  const auto& spec = network.spec();
  auto report = run_batch(unique_clips(manifest), options, [&](const ClipEntry& clip) {
    if (!options.force && archive.contains(clip.clip)) return false;
    std::vector<FlowField> flows;
    if (cache && cache->complete(clip.clip)) {
      flows = cache->load(clip.clip);
    } else {
      flows = compute_clip_flows(clip.path, spec.input_size, params);
      if (cache) cache->store(clip.clip, flows);
    }
    archive.put(clip, network.forward_to_tap(clip_network_input(flows, spec.min_frames)));
    return true;
  });
  archive.save_index();
  return report;
}

}  // namespace viewflow
