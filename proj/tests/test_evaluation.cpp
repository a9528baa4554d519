#include <doctest.h>

#include <numeric>

#include "temp_dir.hpp"
#include "viewflow/error.hpp"
#include "viewflow/evaluation.hpp"
#include "viewflow/image.hpp"

using namespace viewflow;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> names(const std::vector<ProtocolSpec>& ps) {
  std::vector<std::string> out;
  for (const auto& p : ps) out.push_back(p.name());
  return out;
}

// `views` views, `classes` actions, TR/TE clips per (action, view).
Manifest moca_like(int views, int classes, int train, int test) {
  Manifest m;
  for (int v = 0; v < views; ++v)
    for (int c = 0; c < classes; ++c)
      for (int i = 0; i < train + test; ++i) {
        const bool tr = i < train;
        const std::string action = "a" + std::to_string(c);
        m.entries.push_back({"v" + std::to_string(v) + "_" + action + (tr ? "_tr" : "_te") + std::to_string(i),
                             "/nowhere", action, v, tr ? Split::Train : Split::Test, "x"});
      }
  return m;
}

// Class signal in channel c, plus a view-specific offset.
FeatureMap view_features(const Manifest& m, std::size_t channels, Rng rng) {
  FeatureMap out;
  for (const auto& e : m.entries) {
    TensorF f = uniform_tensor<float>({channels, 2, 1, 1}, rng, -0.3f, 0.3f);
    const int c = std::stoi(e.action.substr(1));
    f(std::size_t(c), 0, 0, 0) += 1.0f;
    f(std::size_t(c), 1, 0, 0) += 1.0f;
    f(channels - 1 - std::size_t(e.view), 0, 0, 0) += 0.5f;
    out.emplace(e.clip, f);
  }
  return out;
}

EvalResult result_with(const std::string& protocol, int correct, int total) {
  EvalResult r{protocol, {"a", "b"}, Eigen::MatrixXi::Zero(2, 2)};
  r.confusion(0, 0) = correct;
  r.confusion(1, 0) = total - correct;
  return r;
}

}  // namespace

TEST_CASE("protocol names") {
  const auto p = parse_protocol("2,0|1");
  CHECK(p.source_views == std::vector<int>{0, 2});
  CHECK(p.target_views == std::vector<int>{1});
  CHECK(p.name() == "0,2|1");
  CHECK(p.slug() == "0-2_to_1");
  CHECK(parse_protocol("0, 1,2|0,1,2").name() == "0,1,2|0,1,2");
  CHECK(parse_protocol("1|0").one_one());
  CHECK(!parse_protocol("1|1").one_one());
  for (const char* bad : {"0", "0|", "|1", "0|1|2", "a|1", "0,,1|2", "-1|0"})
    CHECK_THROWS_AS(parse_protocol(bad), InputError);
}

TEST_CASE("protocol generators") {
  CHECK(names(default_protocols({2, 0, 1})) ==
        std::vector<std::string>{"0|0", "1|1", "2|2", "0,1,2|0,1,2", "0,1|2", "0,2|1", "1,2|0", "0|1", "0|2", "1|0",
                                 "1|2", "2|0", "2|1"});
  CHECK(names(default_protocols({0})) == std::vector<std::string>{"0|0"});
  CHECK(names(default_protocols({0, 1})) == std::vector<std::string>{"0|0", "1|1", "0,1|0,1", "0|1", "1|0"});
  const std::vector<int> five{0, 1, 2, 3, 4};
  const auto pairs = one_one_protocols(five);
  CHECK(pairs.size() == 20);
  for (const auto& p : pairs) CHECK(p.one_one());
  CHECK(one_view_out_protocols(five).size() == 5);
  CHECK(one_view_out_protocols({3}).empty());
  CHECK(default_protocols(five).size() == 5 + 1 + 5 + 20);
}

TEST_CASE("build_split filters by split and view") {
  const auto m = moca_like(3, 2, 3, 2);
  const auto s00 = build_split(m, parse_protocol("0|0"));
  CHECK(s00.train.size() == 6);
  CHECK(s00.test.size() == 4);
  for (const auto& e : s00.train) CHECK((e.view == 0 && e.split == Split::Train));
  for (const auto& e : s00.test) CHECK((e.view == 0 && e.split == Split::Test));

  const auto all = build_split(m, parse_protocol("0,1,2|0,1,2"));
  CHECK(all.train.size() == 18);
  CHECK(all.test.size() == 12);

  const auto ovo = build_split(m, parse_protocol("1,2|0"));
  for (const auto& e : ovo.train) CHECK(e.view != 0);
  for (const auto& e : ovo.test) CHECK(e.view == 0);

  for (const auto& p : default_protocols(m.views())) {
    const auto s = build_split(m, p);
    for (const auto& a : s.train)
      for (const auto& b : s.test) CHECK(a.clip != b.clip);
  }

  CHECK_THROWS_AS(build_split(m, parse_protocol("0|3")), ProtocolError);
  auto no_test = m;
  std::erase_if(no_test.entries, [](const ClipEntry& e) { return e.view == 2 && e.split == Split::Test; });
  try {
    build_split(no_test, parse_protocol("0|2"));
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("0|2") != std::string::npos);
  }
}

TEST_CASE("confusion matrix and accuracy") {
  const std::vector<std::string> classes{"a", "b", "c"};
  const std::vector<std::string> truth{"a", "a", "b", "b", "c", "c"};
  const auto oracle = score_predictions("0|0", classes, truth, {0, 0, 1, 1, 2, 2});
  CHECK(oracle.accuracy() == 100.0);
  CHECK(oracle.confusion == Eigen::MatrixXi(Eigen::Vector3i(2, 2, 2).asDiagonal()));

  const auto constant = score_predictions("0|0", classes, truth, {1, 1, 1, 1, 1, 1});
  CHECK(constant.accuracy() == doctest::Approx(100.0 / 3));

  const auto partial = score_predictions("0|1", classes, truth, {0, 1, 1, 1, 2, 0});
  CHECK(partial.correct() == 4);
  CHECK(format_percent(partial.correct(), partial.total()) == "66.67");
  CHECK(partial.confusion.rowwise().sum() == Eigen::Vector3i(2, 2, 2));
  CHECK(partial.accuracy() == 100.0 * double(partial.confusion.trace()) / double(partial.total()));

  const auto missing = score_predictions("0|1", classes, {"a", "c"}, {0, 2});
  const auto pc = missing.per_class_accuracy();
  CHECK(pc[0] == 100.0);
  CHECK(!pc[1].has_value());
  CHECK(missing.confusion.row(1).sum() == 0);

  CHECK_THROWS_AS(score_predictions("0|0", classes, {"d"}, {0}), LabelError);
}

TEST_CASE("one-one mean") {
  CHECK(mean_one_one({result_with("0|1", 1, 2), result_with("1|0", 1, 2)}, {0, 1}) == 50.0);
  CHECK(mean_one_one({result_with("0|1", 3, 5), result_with("1|0", 4, 5), result_with("0|0", 0, 5)}, {0, 1}) ==
        doctest::Approx(70.0).epsilon(1e-12));

  const std::vector<int> five{0, 1, 2, 3, 4};
  std::vector<EvalResult> results;
  std::vector<double> values;
  Rng rng(3);
  for (const auto& p : one_one_protocols(five)) {
    const int total = 37 + int(rng.below(50));
    const int correct = int(rng.below(std::uint64_t(total) + 1));
    results.push_back(result_with(p.name(), correct, total));
    values.push_back(100.0L * correct / total);
  }
  long double direct = 0;
  for (double v : values) direct += v;
  CHECK(std::abs(mean_one_one(results, five) - double(direct / 20)) < 1e-9);

  auto short_by_one = results;
  short_by_one.pop_back();
  try {
    mean_one_one(short_by_one, five);
    FAIL("expected CoverageError");
  } catch (const CoverageError& e) {
    CHECK(std::string(e.what()).find("missing one-one pairs: 4|3") != std::string::npos);
  }
  auto doubled = results;
  doubled.push_back(results[0]);
  CHECK_THROWS_AS(mean_one_one(doubled, five), CoverageError);
}

TEST_CASE("percent formatting rounds half up") {
  CHECK(format_percent(93.25) == "93.25");
  CHECK(format_percent(93.245) == "93.25");
  CHECK(format_percent(0.0) == "0.00");
  CHECK(format_percent(100.0) == "100.00");
  CHECK(format_percent(18649, 20000) == "93.25");
  CHECK(format_percent(1, 8) == "12.50");
  CHECK(format_percent(1, 3) == "33.33");
  CHECK(format_percent(1, 400) == "0.25");
  CHECK(format_percent(1, 800) == "0.13");
}

TEST_CASE("report files") {
  TempDir dir("viewflow_test_report");
  Report report;
  report.protocols = {parse_protocol("0|0"), parse_protocol("0,1|1"), parse_protocol("0|1"), parse_protocol("1|0")};
  report.views = {0, 1};
  const std::vector<std::string> classes{"a", "b", "c"};
  ReportRow row{HeadKind::Slp, {}};
  row.results.push_back(score_predictions("0|0", classes, {"a", "b", "c", "a"}, {0, 1, 2, 0}));
  row.results.push_back(score_predictions("0,1|1", classes, {"a", "b", "c", "a"}, {0, 0, 2, 0}));
  row.results.push_back(score_predictions("0|1", classes, {"a", "c"}, {0, 0}));
  row.results.push_back(score_predictions("1|0", classes, {"a", "b", "c"}, {0, 1, 1}));
  report.rows.push_back(row);
  render_report(report, dir.path / "out");

  CHECK(read_text(dir.path / "out" / "results.csv") == "head,0|0,\"0,1|1\",0|1,1|0\nslp,100.00,75.00,50.00,66.67\n");
  CHECK(read_text(dir.path / "out" / "confusion_slp_0-1_to_1.csv") ==
        "true\\predicted,a,b,c\na,2,0,0\nb,1,0,0\nc,0,0,1\n");
  const auto summary = read_text(dir.path / "out" / "summary.json");
  CHECK(summary.find("\"mean_one_one\": 58.33") != std::string::npos);
  CHECK(summary.find("\"b\": \"n/a\"") != std::string::npos);

  const auto heat = read_frame(dir.path / "out" / "confusion_slp_0_to_0.pgm");
  const int cell = 256 / 3;
  REQUIRE(heat.height() == 3 * cell);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(heat.intensity()(i * cell + 1, j * cell + 1) == (i == j ? 1.0f : 0.0f));
  const auto sparse = read_frame(dir.path / "out" / "confusion_slp_0_to_1.pgm");
  CHECK(sparse.intensity().row(cell + 1).isZero());

  std::ofstream(dir.path / "file") << "x";
  CHECK_THROWS_AS(render_report(report, dir.path / "file" / "sub"), IoError);
  CHECK_THROWS_AS(render_report(Report{}, dir.path / "empty"), InputError);
}

TEST_CASE("protocol suite on a MoCA-shaped manifest") {
  const auto m = moca_like(3, 4, 6, 3);
  const auto features = view_features(m, 8, Rng(4));
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;
  const auto protocols = default_protocols(m.views());
  const auto results = run_protocol_suite(m, features, HeadKind::Slp, cfg, protocols, 17);
  REQUIRE(results.size() == 13);
  for (std::size_t i = 0; i < 13; ++i) {
    CHECK(results[i].protocol == protocols[i].name());
    CHECK(results[i].classes == m.actions());
    CHECK(results[i].total() == std::int64_t(build_split(m, protocols[i]).test.size()));
  }
  CHECK(results[0].accuracy() > 50.0);
  const double mean = mean_one_one(results, m.views());
  CHECK(mean >= 0.0);
  CHECK(mean <= 100.0);

  const auto parallel = run_protocol_suite(m, features, HeadKind::Slp, cfg, protocols, 17, 3);
  for (std::size_t i = 0; i < 13; ++i) CHECK(parallel[i].confusion == results[i].confusion);
  CHECK(protocol_seed(17, protocols[0], HeadKind::Slp) != protocol_seed(17, protocols[1], HeadKind::Slp));
  CHECK(protocol_seed(17, protocols[0], HeadKind::Slp) != protocol_seed(17, protocols[0], HeadKind::Conv3d));
  CHECK(protocol_seed(17, protocols[0], HeadKind::Slp) != protocol_seed(18, protocols[0], HeadKind::Slp));

  auto partial = features;
  partial.erase(m.entries[0].clip);
  CHECK_THROWS_AS(run_protocol_suite(m, partial, HeadKind::Slp, cfg, {protocols[0]}, 17), DataError);

  auto model = train_protocol(m, features, protocols[0], HeadKind::Slp, cfg, 17).model;
  model.classes.back() = "zz";
  CHECK_THROWS_AS(evaluate_protocol(model, m, features, protocols[0], 8), LabelError);
}
