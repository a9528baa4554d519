#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "viewflow/image.hpp"
#include "viewflow/tensor.hpp"

namespace viewflow {

/// Per-pixel displacement (u right, v down) in pixels.
struct FlowField {
  Plane u, v;

  FlowField() = default;
  FlowField(int width, int height) : u(Plane::Zero(height, width)), v(Plane::Zero(height, width)) {}
  FlowField(Plane u_, Plane v_);

  int width() const noexcept { return int(u.cols()); }
  int height() const noexcept { return int(u.rows()); }
  bool all_finite() const { return u.isFinite().all() && v.isFinite().all(); }
};

/// TV-L1 solver settings. `lambda` weighs the data term for intensities on
/// the 0..255 scale; frames are handed in on [0, 1] and rescaled internally.
struct FlowParams {
  double lambda = 0.15;
  double theta = 0.3;
  double tau = 0.125;
  int n_scales = 5;
  double scale_factor = 0.5;
  int n_warps = 5;
  int n_iters = 30;
  double stop_eps = 0.01;
  bool median_filter = true;
  /// Reject a warp whose result raises the level energy; the step is halved
  /// up to three times before falling back to the previous flow.
  bool monotone_warps = true;

  /// Throws InputError on values outside their valid ranges.
  void validate() const;
};

/// Smallest pyramid level side accepted by the solver.
inline constexpr int kMinLevelSize = 16;

/// Level 0 is `frame`; each further level is blurred with a sigma derived
/// from `scale_factor` and resampled. Levels that would drop below 16x16
/// are not generated.
std::vector<GrayFrame> build_pyramid(const GrayFrame& frame, int n_scales, double scale_factor);

/// Bilinear sample of `frame` at (x + u, y + v), clamped to the border.
GrayFrame warp_image(const GrayFrame& frame, const FlowField& flow);
Plane warp_plane(const Plane& img, const FlowField& flow);

/// TV-L1 energy: sum |grad u| + |grad v| + lambda * sum |I1(x + w) - I0(x)|
/// with forward differences, intensities on the 0..255 scale.
double tvl1_energy(const Plane& i0, const Plane& i1, const FlowField& flow, double lambda);

struct FlowTrace {
  struct Level {
    int width = 0, height = 0;
    /// energies[0] is the energy of the initial (upsampled) flow; entry k is
    /// the energy after warp k.
    std::vector<double> energies;
    int rejected_warps = 0;
    int iterations = 0;
  };
  /// Coarsest level first.
  std::vector<Level> levels;
};

/// Duality-based TV-L1 optical flow from `a` to `b` (b(x + w) ~ a(x)).
FlowField tvl1_flow(const GrayFrame& a, const GrayFrame& b, const FlowParams& params = {},
                    FlowTrace* trace = nullptr);

/// Stacks flows as [1, 2, T, H, W]: channel 0 = u, channel 1 = v, each
/// clipped to +-clip_bound and scaled to [-1, 1].
TensorF flow_to_network_input(std::span<const FlowField> flows, float clip_bound = 20.0f);

/// "VFLO" flow cache file: magic, u32 version, u32 width, u32 height, then
/// the u plane and the v plane as little-endian float32, row-major.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

}  // namespace viewflow
