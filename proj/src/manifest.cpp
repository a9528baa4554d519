#include "viewflow/manifest.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "viewflow/error.hpp"
#include "viewflow/random.hpp"

namespace viewflow {

using nlohmann::json;

std::string_view split_name(Split s) { return s == Split::Train ? "TR" : "TE"; }

std::vector<int> Manifest::views() const {
  std::set<int> v;
  for (const auto& e : entries) v.insert(e.view);
  return {v.begin(), v.end()};
}

std::vector<std::string> Manifest::actions() const {
  std::set<std::string> a;
  for (const auto& e : entries) a.insert(e.action);
  return {a.begin(), a.end()};
}

const ClipEntry* Manifest::find(std::string_view clip) const {
  for (const auto& e : entries)
    if (e.clip == clip) return &e;
  return nullptr;
}

Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("manifest is not valid JSON: ") + e.what());
  }
  std::vector<std::string> problems;
  const json* list = nullptr;
  if (j.is_array()) {
    list = &j;
  } else if (j.is_object()) {
    if (!j.contains("schema") || j["schema"] != 1) problems.push_back("\"schema\" must be 1");
    if (j.contains("entries") && j["entries"].is_array())
      list = &j["entries"];
    else
      problems.push_back("\"entries\" must be an array");
  } else {
    problems.push_back("top level must be an object or an array");
  }

  Manifest m;
  std::set<std::string> seen;
  if (list) {
    for (std::size_t i = 0; i < list->size(); ++i) {
      const auto& e = (*list)[i];
      const std::string where = "entry " + std::to_string(i);
      if (!e.is_object()) {
        problems.push_back(where + ": not an object");
        continue;
      }
      ClipEntry c;
      bool ok = true;
      auto text_field = [&](const char* key, std::string& out, bool required) {
        if (!e.contains(key)) {
          if (required) problems.push_back(where + ": missing \"" + key + "\""), ok = false;
          return;
        }
        if (!e[key].is_string() || (required && e[key].get<std::string>().empty())) {
          problems.push_back(where + ": \"" + key + "\" must be a non-empty string");
          ok = false;
          return;
        }
        out = e[key].get<std::string>();
      };
      std::string path, split;
      text_field("clip", c.clip, true);
      text_field("path", path, true);
      text_field("action", c.action, true);
      text_field("split", split, true);
      text_field("actor", c.actor, false);
      if (!e.contains("view") || !e["view"].is_number_integer() || e["view"].get<int>() < 0) {
        problems.push_back(where + ": \"view\" must be a non-negative integer");
        ok = false;
      } else {
        c.view = e["view"].get<int>();
      }
      if (ok && split != "TR" && split != "TE") {
        problems.push_back(where + ": \"split\" must be \"TR\" or \"TE\", got \"" + split + "\"");
        ok = false;
      }
      if (!ok) continue;
      c.split = split == "TR" ? Split::Train : Split::Test;
      c.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base_dir / path;
      if (!seen.insert(c.clip).second) {
        problems.push_back(where + ": duplicate clip id \"" + c.clip + "\"");
        continue;
      }
      m.entries.push_back(std::move(c));
    }
  }
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << "invalid manifest (" << problems.size() << " problem" << (problems.size() == 1 ? "" : "s") << ")";
    for (const auto& p : problems) msg << "\n  " << p;
    throw InputError(msg.str());
  }

  std::map<std::pair<std::string, int>, std::pair<int, int>> counts;
  for (const auto& e : m.entries) {
    auto& c = counts[{e.action, e.view}];
    (e.split == Split::Train ? c.first : c.second)++;
  }
  for (const auto& [key, c] : counts) {
    if (c.first == 0 || c.second == 0)
      m.warnings.push_back("action \"" + key.first + "\" view " + std::to_string(key.second) + " has no " +
                           (c.first == 0 ? "TR" : "TE") + " clips");
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  json entries = json::array();
  const auto base = path.parent_path();
  for (const auto& e : manifest.entries) {
    auto rel = e.path.lexically_relative(base.empty() ? std::filesystem::path(".") : base);
    if (rel.empty() || *rel.begin() == "..") rel = e.path;
    entries.push_back({{"clip", e.clip},
                       {"path", rel.generic_string()},
                       {"action", e.action},
                       {"view", e.view},
                       {"split", split_name(e.split)},
                       {"actor", e.actor}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << json{{"schema", 1}, {"entries", std::move(entries)}}.dump(1) << '\n';
}

std::string safe_file_stem(std::string_view clip) {
  std::string out = clip.empty() ? std::string("_") : std::string(clip);
  bool changed = clip.empty();
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-') c = '_', changed = true;
  if (out.front() == '.') out.front() = '_', changed = true;
  if (changed) {
    char suffix[20];
    std::snprintf(suffix, sizeof suffix, "-%08llx", static_cast<unsigned long long>(Rng::hash(clip) & 0xFFFFFFFF));
    out += suffix;
  }
  return out;
}

}  // namespace viewflow
