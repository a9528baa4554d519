#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <utility>

namespace viewflow {

/// Single-channel float image; rows are image rows (y), columns are x.
using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale frame with intensities in [0, 1].
class GrayFrame {
 public:
  GrayFrame() = default;
  /// Throws InputError when a value lies outside [0, 1].
  explicit GrayFrame(Plane intensity);

  int width() const noexcept { return int(intensity_.cols()); }
  int height() const noexcept { return int(intensity_.rows()); }
  const Plane& intensity() const noexcept { return intensity_; }
  float operator()(int y, int x) const { return intensity_(y, x); }

 private:
  Plane intensity_;
};

/// ITU-R 601 luma.
inline float luma601(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

/// Bilinear sample at (x, y) with coordinates clamped to the image border.
float sample_bilinear(const Plane& img, float x, float y);

/// Separable Gaussian blur with replicated borders.
Plane gaussian_blur(const Plane& img, double sigma);

/// Bilinear resampling onto a width x height grid (pixel centers aligned).
Plane resize_bilinear(const Plane& img, int width, int height);

/// Central differences with replicated borders; returns (d/dx, d/dy).
std::pair<Plane, Plane> central_gradient(const Plane& img);

/// Reads a binary or ASCII PGM/PPM (P2, P3, P5, P6) or, when built with
/// libpng, a PNG. Color images are converted with luma601.
GrayFrame read_frame(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM.
void write_pgm(const std::filesystem::path& path, const Plane& img);

}  // namespace viewflow
