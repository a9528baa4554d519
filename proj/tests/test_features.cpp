#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "viewflow/error.hpp"
#include "viewflow/features.hpp"
#include "viewflow/synth.hpp"
#include "temp_dir.hpp"

using namespace viewflow;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.directions = 3;
  cfg.speeds = {2.0};
  cfg.views = 1;
  cfg.train_per_class = 1;
  cfg.test_per_class = 1;
  return cfg;
}

}  // namespace

TEST_CASE("manifest parsing and diagnostics") {
  const auto m = parse_manifest(R"({"schema": 1, "entries": [
      {"clip": "a", "path": "clips/a", "action": "walk", "view": 0, "split": "TR", "actor": "p1"},
      {"clip": "b", "path": "/abs/b", "action": "walk", "view": 0, "split": "TE"},
      {"clip": "c", "path": "c", "action": "run", "view": 1, "split": "TR"}]})",
                                "/data");
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[0].path == fs::path("/data/clips/a"));
  CHECK(m.entries[1].path == fs::path("/abs/b"));
  CHECK(m.entries[0].actor == "p1");
  CHECK(m.views() == std::vector<int>{0, 1});
  CHECK(m.actions() == std::vector<std::string>{"run", "walk"});
  REQUIRE(m.warnings.size() == 1);
  CHECK(m.warnings[0].find("\"run\" view 1 has no TE") != std::string::npos);

  try {
    parse_manifest(R"({"schema": 2, "entries": [
        {"clip": "a", "path": "a", "action": "x", "view": -1, "split": "TR"},
        {"clip": "a", "path": "a", "action": "x", "view": 0, "split": "XX"},
        {"path": "a", "action": "x", "view": 0, "split": "TR"}]})",
                   ".");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string what = e.what();
    CHECK(what.find("4 problems") != std::string::npos);
    CHECK(what.find("\"schema\" must be 1") != std::string::npos);
    CHECK(what.find("entry 0: \"view\"") != std::string::npos);
    CHECK(what.find("entry 1: \"split\"") != std::string::npos);
    CHECK(what.find("entry 2: missing \"clip\"") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_manifest("[{\"clip\": \"a\"}", "."), InputError);
  CHECK(parse_manifest("[]", ".").entries.empty());

  CHECK(safe_file_stem("v0_walk_tr01") == "v0_walk_tr01");
  CHECK(safe_file_stem("a/b") != safe_file_stem("a_b"));
  CHECK(safe_file_stem("a/b").find('/') == std::string::npos);
}

TEST_CASE("frame listing order and preprocessing geometry") {
  TempDir dir("viewflow_test_frames");
  for (int i : {10, 2, 1}) write_pgm(dir.path / ("f" + std::to_string(i) + ".pgm"), Plane::Constant(8, 8, 0.5f));
  std::ofstream(dir.path / "notes.txt") << "x";
  const auto frames = list_frames(dir.path);
  REQUIRE(frames.size() == 3);
  CHECK(frames[0].filename() == "f1.pgm");
  CHECK(frames[1].filename() == "f2.pgm");
  CHECK(frames[2].filename() == "f10.pgm");
  CHECK_THROWS_AS(list_frames(dir.path / "missing"), DataError);

  // 320x240 -> short side 256 -> 341x256 -> centered 224 crop.
  Plane wide(240, 320);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 320; ++x) wide(y, x) = float(x) / 319.0f;
  const auto out = preprocess_frame(GrayFrame(wide), 224);
  CHECK(out.width() == 224);
  CHECK(out.height() == 224);
  // The crop is centered: its middle column samples the middle of the ramp.
  CHECK(std::abs(0.5f * (out(100, 111) + out(100, 112)) - 0.5f) < 0.01f);
  CHECK(preprocess_frame(GrayFrame(Plane::Constant(37, 37, 0.25f)), 32).intensity().isConstant(0.25f));
}

TEST_CASE("clip_network_input pads by repeating the last flow") {
  FlowField a(4, 4), b(4, 4);
  a.u.setConstant(2.0f);
  b.v.setConstant(-4.0f);
  const FlowField flows[] = {a, b};
  const auto t = clip_network_input(flows, 5);
  CHECK(t.shape() == Shape{1, 2, 5, 4, 4});
  CHECK(t(0, 0, 0, 1, 1) == 0.1f);
  for (size_t k = 1; k < 5; ++k) {
    CHECK(t(0, 1, k, 2, 2) == -0.2f);
    CHECK(t(0, 0, k, 2, 2) == 0.0f);
  }
  CHECK(clip_network_input(flows, 1).shape() == Shape{1, 2, 2, 4, 4});
}

TEST_CASE("VFEA block layout") {
  TempDir dir("viewflow_test_vfea");
  const TensorF block({2, 1, 1, 3}, {1, 2, 3, 4, 5, 6});
  write_feature_block(dir.path / "x.vfea", block);
  CHECK(fs::file_size(dir.path / "x.vfea") == 12 + 4 * 8 + 6 * 4);
  CHECK(read_feature_block(dir.path / "x.vfea") == block);
  const auto bytes = read_text(dir.path / "x.vfea");
  CHECK(bytes.substr(0, 4) == "VFEA");
  CHECK(bytes[8] == 4);
  CHECK(bytes[12] == 2);
  CHECK(bytes[36] == 3);
  std::ofstream(dir.path / "bad.vfea", std::ios::binary) << bytes.substr(0, 30);
  CHECK_THROWS_AS(read_feature_block(dir.path / "bad.vfea"), IntegrityError);
}

TEST_CASE("extract_features on synthetic clips") {
  TempDir dir("viewflow_test_extract");
  const auto manifest = generate_synthetic(tiny_synth(), dir.path / "data");
  REQUIRE(manifest.entries.size() == 6);
  const auto reloaded = load_manifest(dir.path / "data" / "manifest.json");
  REQUIRE(reloaded.entries.size() == 6);
  CHECK(reloaded.entries[3].path == manifest.entries[3].path);

  const auto spec = reduced_spec();
  const auto net = load_network(spec, random_weights(spec, 17));
  FlowCache cache(dir.path / "flow");

  Manifest three;
  three.entries.assign(manifest.entries.begin(), manifest.entries.begin() + 3);
  three.entries.push_back(manifest.entries[1]);  // listed twice
  const auto flows = compute_flows(three, cache, spec.input_size, {});
  CHECK(flows.processed == 3);
  CHECK(flows.failures.empty());
  CHECK(compute_flows(three, cache, spec.input_size, {}).skipped == 3);

  FeatureArchive archive(dir.path / "features");
  const auto report = extract_features(three, net, {}, archive, &cache);
  CHECK(report.processed == 3);
  CHECK(report.skipped == 0);
  REQUIRE(archive.size() == 3);
  const auto records = archive.records();
  Shape shape;
  for (const auto& r : records) {
    const auto block = archive.load(r.clip);
    if (shape.empty()) shape = block.shape();
    CHECK(block.shape() == shape);
    CHECK(block.all_finite());
  }
  CHECK(shape == Shape{64, 3, 1, 1});
  CHECK(records[0].label == manifest.entries[0].action);

  // Idempotent: a rerun skips everything and leaves the files untouched.
  const auto before = read_text(archive.dir() / records[0].file);
  const auto index_before = read_text(archive.dir() / "index.json");
  const auto again = extract_features(three, net, {}, archive, &cache);
  CHECK(again.skipped == 3);
  CHECK(read_text(archive.dir() / records[0].file) == before);
  CHECK(read_text(archive.dir() / "index.json") == index_before);

  // Reopened archives see the same index; cached and fresh flows agree.
  FeatureArchive reopened(dir.path / "features");
  CHECK(reopened.size() == 3);
  FeatureArchive fresh(dir.path / "fresh");
  extract_features(three, net, {}, fresh);
  CHECK(fresh.load(records[1].clip) == archive.load(records[1].clip));

  // A corrupt clip is reported, the others still land in the archive.
  Manifest mixed = three;
  mixed.entries.push_back(manifest.entries[4]);
  mixed.entries.back().clip = "corrupt";
  mixed.entries.back().path = dir.path / "corrupt";
  fs::create_directories(dir.path / "corrupt");
  std::ofstream(dir.path / "corrupt" / "0.pgm") << "P5\n8 8\n255\nxx";
  std::ofstream(dir.path / "corrupt" / "1.pgm") << "garbage";
  mixed.entries.push_back(manifest.entries[5]);
  const auto partial = extract_features(mixed, net, {}, archive, &cache);
  CHECK(partial.processed == 1);
  CHECK(partial.skipped == 3);
  REQUIRE(partial.failures.size() == 1);
  CHECK(partial.failures[0].clip == "corrupt");
  CHECK(archive.size() == 4);

  FeatureArchive empty_archive(dir.path / "empty");
  const auto none = extract_features(Manifest{}, net, {}, empty_archive);
  CHECK(none.processed == 0);
  CHECK(FeatureArchive::exists(dir.path / "empty"));
  CHECK(empty_archive.size() == 0);
}

TEST_CASE("synthetic generator is deterministic and view dependent") {
  const auto cfg = tiny_synth();
  const auto a = render_synthetic_clip(cfg, 1, 0, 0, 42);
  const auto b = render_synthetic_clip(cfg, 1, 0, 0, 42);
  REQUIRE(a.size() == size_t(cfg.frames));
  for (size_t t = 0; t < a.size(); ++t) CHECK((a[t] == b[t]).all());
  const auto c = render_synthetic_clip(cfg, 1, 0, 2, 42);
  CHECK(!(a[0] == c[0]).all());
  for (const auto& f : a) {
    CHECK(f.minCoeff() >= 0.0f);
    CHECK(f.maxCoeff() <= 1.0f);
  }
  SynthConfig bad = cfg;
  bad.frames = 1;
  CHECK_THROWS_AS(bad.validate(), InputError);
}
