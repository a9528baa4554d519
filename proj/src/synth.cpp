#include "viewflow/synth.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>

#include "viewflow/error.hpp"
#include "viewflow/random.hpp"

namespace viewflow {

namespace {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

Mat2 rotation(double deg) {
  const double a = deg * M_PI / 180.0;
  Mat2 r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

// World -> image linear part of each simulated camera.
Mat2 view_matrix(int view) {
  Mat2 m;
  switch (view) {
    case 0:
      return Mat2::Identity();
    case 1:
      return 1.35 * rotation(70.0);
    case 2:
      m << 0.45, 0.25, 0.0, 1.0;
      return m;
    default:
      return (1.0 + 0.1 * view) * rotation(37.0 * view);
  }
}

double view_jitter(int view) { return view == 1 ? 0.6 : 0.0; }

}  // namespace

void SynthConfig::validate() const {
  if (directions < 1 || speeds.empty() || classes() < 2) throw InputError("synthetic data needs at least 2 classes");
  if (views < 1) throw InputError("synthetic data needs at least 1 view");
  if (train_per_class < 1 || test_per_class < 1) throw InputError("need at least one TR and one TE clip per class");
  if (frames < 2) throw InputError("clips need at least 2 frames");
  if (size < 16) throw InputError("frame size must be at least 16");
  for (double s : speeds)
    if (!(s > 0)) throw InputError("speeds must be positive");
}

std::string synth_action_name(int direction, int speed_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "dir%02d_speed%d", direction, speed_index);
  return buf;
}

std::vector<Plane> render_synthetic_clip(const SynthConfig& config, int direction, int speed_index, int view,
                                         std::uint64_t rng_key) {
  Rng rng = Rng(config.seed).split(rng_key);
  const double S = config.size;
  const Vec2 center(S / 2.0, S / 2.0);

  double freq[4][2], phase[4], amp[4];
  for (int k = 0; k < 4; ++k) {
    const double a = rng.uniform(0, 2 * M_PI), f = rng.uniform(0.15, 0.4);
    freq[k][0] = f * std::cos(a);
    freq[k][1] = f * std::sin(a);
    phase[k] = rng.uniform(0, 2 * M_PI);
    amp[k] = rng.uniform(0.03, 0.07);
  }
  const bool disk = rng.uniform() < 0.5;
  const double radius = rng.uniform(5.0, 7.0);
  const double level = rng.uniform() < 0.5 ? rng.uniform(0.1, 0.2) : rng.uniform(0.8, 0.9);
  const double theta = 2 * M_PI * direction / config.directions;
  const Vec2 velocity = config.speeds[speed_index] * Vec2(std::cos(theta), std::sin(theta));
  const Vec2 start = center - 0.5 * (config.frames - 1) * velocity + Vec2(rng.uniform(-3, 3), rng.uniform(-3, 3));

  const Mat2 inverse = view_matrix(view).inverse();
  const double jitter = view_jitter(view);

  std::vector<Plane> frames;
  for (int t = 0; t < config.frames; ++t) {
    const Vec2 shake(jitter * rng.normal(), jitter * rng.normal());
    const Vec2 pos = start + t * velocity;
    Plane img(config.size, config.size);
    for (int y = 0; y < config.size; ++y)
      for (int x = 0; x < config.size; ++x) {
        const Vec2 w = inverse * (Vec2(x, y) - center - shake) + center;
        double v = 0.5;
        for (int k = 0; k < 4; ++k) v += amp[k] * std::sin(freq[k][0] * w.x() + freq[k][1] * w.y() + phase[k]);
        const Vec2 d = w - pos;
        const double dist = disk ? d.norm() - radius : d.cwiseAbs().maxCoeff() - radius;
        const double cover = std::clamp(0.5 - dist, 0.0, 1.0);
        v = (1 - cover) * v + cover * level;
        img(y, x) = float(std::clamp(v, 0.0, 1.0));
      }
    frames.push_back(std::move(img));
  }
  return frames;
}

Manifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  Manifest manifest;
  for (int view = 0; view < config.views; ++view)
    for (int d = 0; d < config.directions; ++d)
      for (int s = 0; s < int(config.speeds.size()); ++s)
        for (int split = 0; split < 2; ++split) {
          const int count = split == 0 ? config.train_per_class : config.test_per_class;
          for (int i = 0; i < count; ++i) {
            ClipEntry e;
            e.action = synth_action_name(d, s);
            e.view = view;
            e.split = split == 0 ? Split::Train : Split::Test;
            e.actor = "synthetic";
            char id[64];
            std::snprintf(id, sizeof id, "v%d_%s_%s%02d", view, e.action.c_str(), split == 0 ? "tr" : "te", i);
            e.clip = id;
            e.path = out_dir / "clips" / e.clip;
            std::filesystem::create_directories(e.path);
            const auto frames = render_synthetic_clip(config, d, s, view, Rng::hash(e.clip));
            for (std::size_t t = 0; t < frames.size(); ++t) {
              char name[32];
              std::snprintf(name, sizeof name, "frame_%04zu.pgm", t);
              write_pgm(e.path / name, frames[t]);
            }
            manifest.entries.push_back(std::move(e));
          }
        }
  save_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace viewflow
