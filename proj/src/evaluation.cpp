#include "viewflow/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "viewflow/error.hpp"
#include "viewflow/features.hpp"
#include "viewflow/image.hpp"
#include "viewflow/parallel.hpp"

namespace viewflow {

namespace {

using json = nlohmann::ordered_json;

std::string join_views(const std::vector<int>& views, char sep) {
  std::string out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(views[i]);
  }
  return out;
}

std::vector<int> parse_views(std::string_view text, std::string_view whole) {
  std::vector<int> views;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    auto item = text.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    int v = -1;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size() || v < 0)
      throw InputError("invalid protocol '" + std::string(whole) + "': bad view '" + std::string(item) + "'");
    views.push_back(v);
    start = end + 1;
  }
  std::sort(views.begin(), views.end());
  views.erase(std::unique(views.begin(), views.end()), views.end());
  return views;
}

bool contains(const std::vector<int>& views, int v) { return std::binary_search(views.begin(), views.end(), v); }

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// RFC 4180 field quoting.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string confusion_csv(const EvalResult& r) {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& c : r.classes) out << ',' << csv_field(c);
  out << '\n';
  for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
    out << csv_field(r.classes[std::size_t(i)]);
    for (Eigen::Index j = 0; j < r.confusion.cols(); ++j) out << ',' << r.confusion(i, j);
    out << '\n';
  }
  return out.str();
}

// Row-normalized heatmap, each cell drawn as a square block.
Plane confusion_heatmap(const Eigen::MatrixXi& confusion) {
  const Eigen::Index k = confusion.rows();
  const Eigen::Index cell = std::max<Eigen::Index>(1, 256 / std::max<Eigen::Index>(k, 1));
  Plane img = Plane::Zero(k * cell, k * cell);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double row = confusion.row(i).sum();
    if (row == 0) continue;
    for (Eigen::Index j = 0; j < k; ++j)
      img.block(i * cell, j * cell, cell, cell).setConstant(float(confusion(i, j) / row));
  }
  return img;
}

}  // namespace

std::string ProtocolSpec::name() const { return join_views(source_views, ',') + "|" + join_views(target_views, ','); }

std::string ProtocolSpec::slug() const { return join_views(source_views, '-') + "_to_" + join_views(target_views, '-'); }

ProtocolSpec parse_protocol(std::string_view text) {
  const auto bar = text.find('|');
  if (bar == std::string_view::npos || text.find('|', bar + 1) != std::string_view::npos)
    throw InputError("invalid protocol '" + std::string(text) + "': expected source|target");
  return {parse_views(text.substr(0, bar), text), parse_views(text.substr(bar + 1), text)};
}

std::vector<ProtocolSpec> one_one_protocols(const std::vector<int>& views) {
  std::vector<ProtocolSpec> out;
  for (int s : views)
    for (int t : views)
      if (s != t) out.push_back({{s}, {t}});
  return out;
}

std::vector<ProtocolSpec> one_view_out_protocols(const std::vector<int>& views) {
  std::vector<ProtocolSpec> out;
  if (views.size() < 2) return out;
  for (auto it = views.rbegin(); it != views.rend(); ++it) {
    ProtocolSpec p{{}, {*it}};
    for (int v : views)
      if (v != *it) p.source_views.push_back(v);
    out.push_back(p);
  }
  return out;
}

std::vector<ProtocolSpec> default_protocols(const std::vector<int>& input) {
  std::vector<int> views = input;
  std::sort(views.begin(), views.end());
  views.erase(std::unique(views.begin(), views.end()), views.end());
  std::vector<ProtocolSpec> out;
  auto add = [&](const ProtocolSpec& p) {
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  };
  for (int v : views) add({{v}, {v}});
  if (!views.empty()) add({views, views});
  for (const auto& p : one_view_out_protocols(views)) add(p);
  for (const auto& p : one_one_protocols(views)) add(p);
  return out;
}

ProtocolSplit build_split(const Manifest& manifest, const ProtocolSpec& protocol) {
  const auto name = protocol.name();
  if (protocol.source_views.empty() || protocol.target_views.empty())
    throw ProtocolError("protocol " + name + ": source and target views must be non-empty");
  const auto present = manifest.views();
  for (const auto* side : {&protocol.source_views, &protocol.target_views})
    for (int v : *side)
      if (!contains(present, v)) throw ProtocolError("protocol " + name + ": view " + std::to_string(v) + " is not in the manifest");
  ProtocolSplit split;
  for (const auto& e : manifest.entries) {
    if (e.split == Split::Train && contains(protocol.source_views, e.view)) split.train.push_back(e);
    if (e.split == Split::Test && contains(protocol.target_views, e.view)) split.test.push_back(e);
  }
  if (split.train.empty()) throw ProtocolError("protocol " + name + ": no TR clips in the source views");
  if (split.test.empty()) throw ProtocolError("protocol " + name + ": no TE clips in the target views");
  std::set<std::string> train_ids;
  for (const auto& e : split.train) train_ids.insert(e.clip);
  for (const auto& e : split.test)
    if (train_ids.count(e.clip)) throw ContractError("protocol " + name + ": clip " + e.clip + " is in both train and test");
  return split;
}

double EvalResult::accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : 100.0 * double(correct()) / double(n);
}

std::vector<std::optional<double>> EvalResult::per_class_accuracy() const {
  std::vector<std::optional<double>> out;
  for (Eigen::Index i = 0; i < confusion.rows(); ++i) {
    const auto n = confusion.row(i).sum();
    out.push_back(n == 0 ? std::nullopt : std::optional<double>(100.0 * confusion(i, i) / n));
  }
  return out;
}

EvalResult score_predictions(std::string protocol, const std::vector<std::string>& classes,
                             const std::vector<std::string>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw InputError("truth and predictions differ in length");
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index[classes[i]] = int(i);
  const int k = int(classes.size());
  EvalResult r{std::move(protocol), classes, Eigen::MatrixXi::Zero(k, k)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto it = index.find(truth[i]);
    if (it == index.end()) throw LabelError("test class '" + truth[i] + "' is unknown to the model");
    if (predicted[i] < 0 || predicted[i] >= k) throw LabelError("predicted class " + std::to_string(predicted[i]) + " out of range");
    ++r.confusion(it->second, predicted[i]);
  }
  return r;
}

FeatureMap load_feature_map(const FeatureArchive& archive) {
  FeatureMap out;
  for (const auto& r : archive.records()) out.emplace(r.clip, archive.load(r.clip));
  return out;
}

std::vector<TensorF> gather_features(const FeatureMap& features, const std::vector<ClipEntry>& clips) {
  std::vector<TensorF> out;
  std::vector<std::string> missing;
  for (const auto& c : clips) {
    const auto it = features.find(c.clip);
    if (it == features.end())
      missing.push_back(c.clip);
    else
      out.push_back(it->second);
  }
  if (!missing.empty()) {
    std::string msg = "no features for " + std::to_string(missing.size()) + " clip(s):";
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 10); ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " ...";
    throw DataError(msg);
  }
  return out;
}

std::uint64_t protocol_seed(std::uint64_t master_seed, const ProtocolSpec& protocol, HeadKind kind) {
  return Rng(master_seed).split(protocol.name()).split(head_kind_name(kind)).next();
}

TrainResult train_protocol(const Manifest& manifest, const FeatureMap& features, const ProtocolSpec& protocol,
                           HeadKind kind, TrainConfig config, std::uint64_t master_seed) {
  const auto split = build_split(manifest, protocol);
  std::vector<std::string> labels;
  for (const auto& e : split.train) labels.push_back(e.action);
  config.seed = protocol_seed(master_seed, protocol, kind);
  try {
    return train(kind, gather_features(features, split.train), labels, config, manifest.actions());
  } catch (const DataError& e) {
    throw DataError("protocol " + protocol.name() + ": " + e.what());
  }
}

EvalResult evaluate_protocol(const Model& model, const Manifest& manifest, const FeatureMap& features,
                             const ProtocolSpec& protocol, std::size_t batch_size) {
  const auto split = build_split(manifest, protocol);
  std::vector<std::string> truth;
  for (const auto& e : split.test) truth.push_back(e.action);
  for (const auto& t : truth)
    if (!std::binary_search(model.classes.begin(), model.classes.end(), t))
      throw LabelError("protocol " + protocol.name() + ": test class '" + t + "' is unknown to the model");
  const auto probs = predict(model, gather_features(features, split.test), batch_size);
  return score_predictions(protocol.name(), model.classes, truth, argmax_rows(probs));
}

std::vector<EvalResult> run_protocol_suite(const Manifest& manifest, const FeatureMap& features, HeadKind kind,
                                           const TrainConfig& config, const std::vector<ProtocolSpec>& protocols,
                                           std::uint64_t master_seed, std::size_t jobs) {
  std::vector<EvalResult> results(protocols.size());
  parallel_for(protocols.size(), unsigned(jobs), [&](std::size_t i) {
    const auto trained = train_protocol(manifest, features, protocols[i], kind, config, master_seed);
    results[i] = evaluate_protocol(trained.model, manifest, features, protocols[i], config.batch_size);
  });
  return results;
}

double mean_one_one(const std::vector<EvalResult>& results, const std::vector<int>& views) {
  std::map<std::string, std::vector<double>> seen;
  for (const auto& r : results) {
    const auto p = parse_protocol(r.protocol);
    if (p.one_one()) seen[r.protocol].push_back(r.accuracy());
  }
  std::vector<std::string> missing, duplicated;
  double sum = 0;
  std::size_t count = 0;
  for (const auto& p : one_one_protocols(views)) {
    const auto it = seen.find(p.name());
    if (it == seen.end()) {
      missing.push_back(p.name());
    } else {
      if (it->second.size() > 1) duplicated.push_back(p.name());
      sum += it->second.front();
      ++count;
      seen.erase(it);
    }
  }
  std::string msg;
  if (!missing.empty()) {
    msg += "missing one-one pairs:";
    for (const auto& m : missing) msg += " " + m;
  }
  if (!duplicated.empty()) {
    msg += std::string(msg.empty() ? "" : "; ") + "duplicated pairs:";
    for (const auto& d : duplicated) msg += " " + d;
  }
  if (!seen.empty()) {
    msg += std::string(msg.empty() ? "" : "; ") + "pairs outside the view set:";
    for (const auto& [name, _] : seen) msg += " " + name;
  }
  if (!msg.empty()) throw CoverageError(msg);
  if (count == 0) throw CoverageError("no one-one pairs for fewer than two views");
  return sum / double(count);
}

std::string format_percent(double value) {
  if (!std::isfinite(value)) return "nan";
  const double cents = std::floor(std::abs(value) * 100.0 + 0.5 + 1e-9);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%.0f.%02d", value < 0 && cents > 0 ? "-" : "", std::floor(cents / 100),
                int(std::fmod(cents, 100.0)));
  return buf;
}

std::string format_percent(std::int64_t num, std::int64_t den) {
  if (den <= 0 || num < 0) throw InputError("format_percent: need num >= 0 and den > 0");
  const std::int64_t cents = (20000 * num + den) / (2 * den);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%lld.%02lld", (long long)(cents / 100), (long long)(cents % 100));
  return buf;
}

void render_report(const Report& report, const std::filesystem::path& dir) {
  if (report.rows.empty()) throw InputError("nothing to report");
  for (const auto& row : report.rows)
    if (row.results.size() != report.protocols.size())
      throw ContractError("report row " + std::string(head_kind_name(row.head)) + " does not cover every protocol");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::ostringstream csv;
  csv << "head";
  for (const auto& p : report.protocols) csv << ',' << csv_field(p.name());
  csv << '\n';
  json summary = {{"views", report.views}, {"protocols", json::array()}, {"heads", json::array()}};
  for (const auto& p : report.protocols) summary["protocols"].push_back(p.name());
  for (const auto& row : report.rows) {
    const std::string head(head_kind_name(row.head));
    csv << head;
    json accuracy = json::object(), per_class = json::object();
    for (const auto& r : row.results) {
      json classes = json::object();
      const auto pc = r.per_class_accuracy();
      for (std::size_t c = 0; c < pc.size(); ++c)
        classes[r.classes[c]] = pc[c] ? json(std::stod(format_percent(*pc[c]))) : json("n/a");
      per_class[r.protocol] = classes;
      const auto text = r.total() ? format_percent(r.correct(), r.total()) : std::string("n/a");
      csv << ',' << text;
      accuracy[r.protocol] = r.total() ? json(std::stod(text)) : json(nullptr);
      write_file(dir / ("confusion_" + head + "_" + parse_protocol(r.protocol).slug() + ".csv"), confusion_csv(r));
      write_pgm(dir / ("confusion_" + head + "_" + parse_protocol(r.protocol).slug() + ".pgm"),
                confusion_heatmap(r.confusion));
    }
    csv << '\n';
    json entry = {{"head", head}, {"accuracy", accuracy}, {"mean_one_one", nullptr}, {"per_class", per_class}};
    if (report.views.size() >= 2) {
      try {
        entry["mean_one_one"] = std::stod(format_percent(mean_one_one(row.results, report.views)));
      } catch (const CoverageError& e) {
        entry["mean_one_one_error"] = e.what();
      }
    }
    summary["heads"].push_back(entry);
  }
  write_file(dir / "results.csv", csv.str());
  write_file(dir / "summary.json", summary.dump(1) + "\n");
}

}  // namespace viewflow
