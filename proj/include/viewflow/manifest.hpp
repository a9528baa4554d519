#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace viewflow {

enum class Split { Train, Test };

std::string_view split_name(Split s);  // "TR" / "TE"

struct ClipEntry {
  std::string clip;
  std::filesystem::path path;  // absolute or relative to the working directory
  std::string action;
  int view = 0;
  Split split = Split::Train;
  std::string actor;
};

/// Dataset listing. On disk:
///   {"schema": 1, "entries": [{"clip", "path", "action", "view", "split", "actor"}, ...]}
/// with `path` relative to the manifest's directory.
struct Manifest {
  std::vector<ClipEntry> entries;
  /// (action, view) pairs missing from one of the splits.
  std::vector<std::string> warnings;

  std::vector<int> views() const;
  std::vector<std::string> actions() const;  // sorted
  const ClipEntry* find(std::string_view clip) const;
};

/// Collects every schema problem into one InputError.
Manifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest directory when possible.
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Name usable as a file name: anything outside [A-Za-z0-9._-] becomes '_',
/// followed by a short hash when something was replaced.
std::string safe_file_stem(std::string_view clip);

}  // namespace viewflow
