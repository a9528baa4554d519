#pragma once

// Moving-shape clips rendered under several simulated camera views.

#include <filesystem>
#include <string>
#include <vector>

#include "viewflow/image.hpp"
#include "viewflow/manifest.hpp"

namespace viewflow {

struct SynthConfig {
  /// Actions are (direction, speed) pairs: directions * speeds classes.
  int directions = 10;
  std::vector<double> speeds{1.2, 2.8};  // world pixels per frame
  int views = 3;                         // 0 lateral, 1 egocentric, 2 frontal
  int train_per_class = 10;
  int test_per_class = 5;
  int frames = 9;
  int size = 48;
  std::uint64_t seed = 17;

  void validate() const;
  int classes() const { return directions * int(speeds.size()); }
};

std::string synth_action_name(int direction, int speed_index);

/// Frames of one clip as seen from `view`. Deterministic in (config.seed, rng_key).
std::vector<Plane> render_synthetic_clip(const SynthConfig& config, int direction, int speed_index, int view,
                                         std::uint64_t rng_key);

/// Writes <out>/<clip>/frame_NNNN.pgm for every clip and <out>/manifest.json.
Manifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace viewflow
