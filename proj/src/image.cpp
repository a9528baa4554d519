#include "viewflow/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "viewflow/error.hpp"

#ifdef VIEWFLOW_HAVE_PNG
#include <png.h>
#endif

namespace viewflow {

GrayFrame::GrayFrame(Plane intensity) : intensity_(std::move(intensity)) {
  if (intensity_.size() > 0 && (!(intensity_.minCoeff() >= 0.0f) || !(intensity_.maxCoeff() <= 1.0f)))
    throw InputError("frame intensities must lie in [0, 1]");
}

float sample_bilinear(const Plane& img, float x, float y) {
  const int w = int(img.cols()), h = int(img.rows());
  x = std::clamp(x, 0.0f, float(w - 1));
  y = std::clamp(y, 0.0f, float(h - 1));
  const int x0 = std::min(int(x), w - 1), y0 = std::min(int(y), h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const float fx = x - float(x0), fy = y - float(y0);
  const float top = img(y0, x0) + fx * (img(y0, x1) - img(y0, x0));
  const float bottom = img(y1, x0) + fx * (img(y1, x1) - img(y1, x0));
  return top + fy * (bottom - top);
}

Plane gaussian_blur(const Plane& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= total;

  const int w = int(img.cols()), h = int(img.rows());
  Plane tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * img(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = float(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = float(acc);
    }
  return out;
}

Plane resize_bilinear(const Plane& img, int width, int height) {
  if (width <= 0 || height <= 0) throw DimensionError("resize target must be positive");
  const float sx = float(img.cols()) / float(width), sy = float(img.rows()) / float(height);
  Plane out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out(y, x) = sample_bilinear(img, (float(x) + 0.5f) * sx - 0.5f, (float(y) + 0.5f) * sy - 0.5f);
  return out;
}

std::pair<Plane, Plane> central_gradient(const Plane& img) {
  const int w = int(img.cols()), h = int(img.rows());
  Plane gx(h, w), gy(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      gx(y, x) = 0.5f * (img(y, std::min(x + 1, w - 1)) - img(y, std::max(x - 1, 0)));
      gy(y, x) = 0.5f * (img(std::min(y + 1, h - 1), x) - img(std::max(y - 1, 0), x));
    }
  return {gx, gy};
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  throw IoError("truncated PNM header");
}

GrayFrame read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw IoError(path.string() + ": unsupported PNM magic " + magic);
  const int w = std::stoi(next_token(in)), h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError(path.string() + ": bad PNM header");
  const bool color = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  const int channels = color ? 3 : 1;
  const std::size_t count = std::size_t(w) * h * channels;
  std::vector<float> samples(count);
  if (binary) {
    in.get();  // single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(count * bytes);
    if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size())))
      throw IoError(path.string() + ": truncated PNM payload");
    for (std::size_t i = 0; i < count; ++i)
      samples[i] = bytes == 2 ? float((raw[2 * i] << 8) | raw[2 * i + 1]) : float(raw[i]);
  } else {
    for (auto& s : samples) s = float(std::stoi(next_token(in)));
  }
  Plane img(h, w);
  for (int i = 0; i < w * h; ++i) {
    const float* px = samples.data() + std::size_t(i) * channels;
    const float v = color ? luma601(px[0], px[1], px[2]) : px[0];
    img(i / w, i % w) = std::clamp(v / float(maxval), 0.0f, 1.0f);
  }
  return GrayFrame(std::move(img));
}

#ifdef VIEWFLOW_HAVE_PNG
GrayFrame read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw IoError(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path.string() + ": " + image.message);
  }
  const int w = int(image.width), h = int(image.height);
  Plane img(h, w);
  for (int i = 0; i < w * h; ++i)
    img(i / w, i % w) = std::clamp(luma601(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]) / 255.0f, 0.0f, 1.0f);
  return GrayFrame(std::move(img));
}
#endif

}  // namespace

GrayFrame read_frame(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (ext == ".png") {
#ifdef VIEWFLOW_HAVE_PNG
    return read_png(path);
#else
    throw IoError(path.string() + ": built without PNG support");
#endif
  }
  return read_pnm(path);
}

void write_pgm(const std::filesystem::path& path, const Plane& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::vector<unsigned char> bytes(std::size_t(img.size()));
  for (Eigen::Index i = 0; i < img.size(); ++i)
    bytes[std::size_t(i)] = (unsigned char)std::lround(std::clamp(img(i / img.cols(), i % img.cols()), 0.0f, 1.0f) * 255.0f);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace viewflow
