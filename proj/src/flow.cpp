#include "viewflow/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "viewflow/binary_io.hpp"
#include "viewflow/error.hpp"

namespace viewflow {

namespace {

constexpr float kIntensityScale = 255.0f;

// Forward differences, zero on the last column/row.
void forward_gradient(const Plane& f, Plane& fx, Plane& fy) {
  const Eigen::Index h = f.rows(), w = f.cols();
  fx.resize(h, w);
  fy.resize(h, w);
  fx.rightCols(1).setZero();
  fx.leftCols(w - 1) = f.rightCols(w - 1) - f.leftCols(w - 1);
  fy.bottomRows(1).setZero();
  fy.topRows(h - 1) = f.bottomRows(h - 1) - f.topRows(h - 1);
}

// Negative adjoint of forward_gradient.
void divergence(const Plane& px, const Plane& py, Plane& div) {
  const Eigen::Index h = px.rows(), w = px.cols();
  div.resize(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      float d = 0;
      if (x == 0) d += px(y, x);
      else if (x == w - 1) d -= px(y, x - 1);
      else d += px(y, x) - px(y, x - 1);
      if (y == 0) d += py(y, x);
      else if (y == h - 1) d -= py(y - 1, x);
      else d += py(y, x) - py(y - 1, x);
      div(y, x) = d;
    }
}

Plane median5(const Plane& f) {
  const int h = int(f.rows()), w = int(f.cols());
  Plane out(h, w);
  std::array<float, 5> v;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      v = {f(y, x), f(y, std::max(x - 1, 0)), f(y, std::min(x + 1, w - 1)), f(std::max(y - 1, 0), x),
           f(std::min(y + 1, h - 1), x)};
      std::nth_element(v.begin(), v.begin() + 2, v.end());
      out(y, x) = v[2];
    }
  return out;
}

FlowField upsample_flow(const FlowField& flow, int width, int height) {
  const float sx = float(width) / float(flow.width());
  const float sy = float(height) / float(flow.height());
  return FlowField(resize_bilinear(flow.u, width, height) * sx, resize_bilinear(flow.v, width, height) * sy);
}

struct LevelImages {
  const Plane& i0;
  const Plane& i1;
  Plane i1x, i1y;
};

// Runs the warps of one pyramid level in place on `flow`.
void solve_level(LevelImages& img, FlowField& flow, const FlowParams& p, int level, FlowTrace::Level* trace) {
  const Eigen::Index h = img.i0.rows(), w = img.i0.cols();
  const float lt = float(p.lambda * p.theta);
  const float theta = float(p.theta);
  const float taut = float(p.tau / p.theta);
  const double stop = p.stop_eps * p.stop_eps;
  const double n = double(h * w);

  Plane p11 = Plane::Zero(h, w), p12 = Plane::Zero(h, w), p21 = Plane::Zero(h, w), p22 = Plane::Zero(h, w);
  Plane div1, div2, u1x, u1y, u2x, u2y;

  double energy = tvl1_energy(img.i0, img.i1, flow, p.lambda);
  if (trace) trace->energies.push_back(energy);

  for (int warp = 0; warp < p.n_warps; ++warp) {
    const FlowField start = flow;
    const Plane i1w = warp_plane(img.i1, flow);
    const Plane gx = warp_plane(img.i1x, flow);
    const Plane gy = warp_plane(img.i1y, flow);
    const Plane grad = gx.square() + gy.square();
    const Plane rho_c = i1w - gx * flow.u - gy * flow.v - img.i0;

    for (int iter = 0; iter < p.n_iters; ++iter) {
      const Plane rho = rho_c + gx * flow.u + gy * flow.v;
      // Thresholding step on the auxiliary field v = u + d.
      Plane d1(h, w), d2(h, w);
      for (Eigen::Index i = 0; i < rho.size(); ++i) {
        const float r = rho(i), g = grad(i);
        if (r < -lt * g) {
          d1(i) = lt * gx(i);
          d2(i) = lt * gy(i);
        } else if (r > lt * g) {
          d1(i) = -lt * gx(i);
          d2(i) = -lt * gy(i);
        } else if (g > 1e-10f) {
          d1(i) = -r * gx(i) / g;
          d2(i) = -r * gy(i) / g;
        } else {
          d1(i) = d2(i) = 0;
        }
      }
      divergence(p11, p12, div1);
      divergence(p21, p22, div2);
      const Plane u_prev = flow.u, v_prev = flow.v;
      flow.u = flow.u + d1 + theta * div1;
      flow.v = flow.v + d2 + theta * div2;
      const double change = double((flow.u - u_prev).square().sum() + (flow.v - v_prev).square().sum()) / n;

      // Dual ascent for the TV term.
      forward_gradient(flow.u, u1x, u1y);
      forward_gradient(flow.v, u2x, u2y);
      const Plane ng1 = 1.0f + taut * (u1x.square() + u1y.square()).sqrt();
      const Plane ng2 = 1.0f + taut * (u2x.square() + u2y.square()).sqrt();
      p11 = (p11 + taut * u1x) / ng1;
      p12 = (p12 + taut * u1y) / ng1;
      p21 = (p21 + taut * u2x) / ng2;
      p22 = (p22 + taut * u2y) / ng2;

      if (trace) ++trace->iterations;
      if (!flow.all_finite())
        throw NumericError("tvl1_flow: non-finite flow at level " + std::to_string(level) + ", warp " +
                           std::to_string(warp) + ", iteration " + std::to_string(iter));
      if (change < stop) break;
    }

    if (p.median_filter) {
      flow.u = median5(flow.u);
      flow.v = median5(flow.v);
    }

    double next = tvl1_energy(img.i0, img.i1, flow, p.lambda);
    if (p.monotone_warps && next > energy) {
      const FlowField candidate = flow;
      bool accepted = false;
      for (float step = 0.5f; step > 0.06f && !accepted; step *= 0.5f) {
        flow = FlowField(start.u + step * (candidate.u - start.u), start.v + step * (candidate.v - start.v));
        next = tvl1_energy(img.i0, img.i1, flow, p.lambda);
        accepted = next <= energy;
      }
      if (!accepted) {
        flow = start;
        next = energy;
      }
      if (trace) ++trace->rejected_warps;
    }
    energy = next;
    if (trace) trace->energies.push_back(energy);
  }
}

}  // namespace

FlowField::FlowField(Plane u_, Plane v_) : u(std::move(u_)), v(std::move(v_)) {
  if (u.rows() != v.rows() || u.cols() != v.cols()) throw DimensionError("flow u and v planes differ in size");
}

void FlowParams::validate() const {
  if (!(lambda > 0)) throw InputError("flow lambda must be > 0");
  if (!(theta > 0)) throw InputError("flow theta must be > 0");
  if (!(tau > 0 && tau <= 0.125)) throw InputError("flow tau must lie in (0, 0.125]");
  if (!(scale_factor > 0 && scale_factor < 1)) throw InputError("flow scale_factor must lie in (0, 1)");
  if (n_scales < 1 || n_warps < 1 || n_iters < 1) throw InputError("flow scale/warp/iteration counts must be >= 1");
  if (!(stop_eps >= 0)) throw InputError("flow stop_eps must be >= 0");
}

std::vector<GrayFrame> build_pyramid(const GrayFrame& frame, int n_scales, double scale_factor) {
  if (frame.width() < kMinLevelSize || frame.height() < kMinLevelSize)
    throw InputError("frame " + std::to_string(frame.width()) + "x" + std::to_string(frame.height()) +
                     " is smaller than 16x16");
  if (!(scale_factor > 0 && scale_factor < 1)) throw InputError("scale_factor must lie in (0, 1)");
  const double sigma = 0.6 * std::sqrt(1.0 / (scale_factor * scale_factor) - 1.0);
  std::vector<GrayFrame> levels{frame};
  for (int s = 1; s < n_scales; ++s) {
    const int w = int(std::lround(frame.width() * std::pow(scale_factor, s)));
    const int h = int(std::lround(frame.height() * std::pow(scale_factor, s)));
    if (w < kMinLevelSize || h < kMinLevelSize) break;
    const Plane smooth = gaussian_blur(levels.back().intensity(), sigma);
    levels.emplace_back(resize_bilinear(smooth, w, h).cwiseMax(0.0f).cwiseMin(1.0f));
  }
  return levels;
}

Plane warp_plane(const Plane& img, const FlowField& flow) {
  if (flow.width() != img.cols() || flow.height() != img.rows())
    throw DimensionError("warp: flow size does not match image size");
  Plane out(img.rows(), img.cols());
  for (Eigen::Index y = 0; y < img.rows(); ++y)
    for (Eigen::Index x = 0; x < img.cols(); ++x)
      out(y, x) = sample_bilinear(img, float(x) + flow.u(y, x), float(y) + flow.v(y, x));
  return out;
}

GrayFrame warp_image(const GrayFrame& frame, const FlowField& flow) {
  return GrayFrame(warp_plane(frame.intensity(), flow));
}

double tvl1_energy(const Plane& i0, const Plane& i1, const FlowField& flow, double lambda) {
  Plane ux, uy, vx, vy;
  forward_gradient(flow.u, ux, uy);
  forward_gradient(flow.v, vx, vy);
  const double tv = (ux.square() + uy.square()).sqrt().cast<double>().sum() +
                    (vx.square() + vy.square()).sqrt().cast<double>().sum();
  const double data = (warp_plane(i1, flow) - i0).abs().cast<double>().sum();
  return tv + lambda * data;
}

FlowField tvl1_flow(const GrayFrame& a, const GrayFrame& b, const FlowParams& params, FlowTrace* trace) {
  params.validate();
  if (a.width() != b.width() || a.height() != b.height())
    throw DimensionError("tvl1_flow: frames differ in size");
  const auto pyr_a = build_pyramid(a, params.n_scales, params.scale_factor);
  const auto pyr_b = build_pyramid(b, params.n_scales, params.scale_factor);
  if (trace) trace->levels.clear();

  FlowField flow;
  for (int level = int(pyr_a.size()) - 1; level >= 0; --level) {
    const Plane i0 = pyr_a[std::size_t(level)].intensity() * kIntensityScale;
    const Plane i1 = pyr_b[std::size_t(level)].intensity() * kIntensityScale;
    const int w = int(i0.cols()), h = int(i0.rows());
    flow = flow.u.size() == 0 ? FlowField(w, h) : upsample_flow(flow, w, h);

    auto [gx, gy] = central_gradient(i1);
    LevelImages img{i0, i1, std::move(gx), std::move(gy)};
    FlowTrace::Level* lt = nullptr;
    if (trace) {
      trace->levels.push_back({w, h, {}, 0, 0});
      lt = &trace->levels.back();
    }
    solve_level(img, flow, params, level, lt);
  }
  return flow;
}

TensorF flow_to_network_input(std::span<const FlowField> flows, float clip_bound) {
  if (flows.empty()) throw InputError("flow_to_network_input: no flow fields");
  if (!(clip_bound > 0)) throw InputError("flow_to_network_input: clip_bound must be > 0");
  const std::size_t h = std::size_t(flows[0].height()), w = std::size_t(flows[0].width());
  const std::size_t t = flows.size();
  TensorF out(Shape{1, 2, t, h, w});
  for (std::size_t k = 0; k < t; ++k) {
    const auto& f = flows[k];
    if (std::size_t(f.width()) != w || std::size_t(f.height()) != h)
      throw DimensionError("flow_to_network_input: flow fields differ in size");
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        out(0, 0, k, y, x) = std::clamp(f.u(y, x), -clip_bound, clip_bound) / clip_bound;
        out(0, 1, k, y, x) = std::clamp(f.v(y, x), -clip_bound, clip_bound) / clip_bound;
      }
  }
  return out;
}

void write_flow(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  binary::Writer wr(out);
  wr.magic("VFLO");
  wr.uint<std::uint32_t>(1);
  wr.uint<std::uint32_t>(std::uint32_t(flow.width()));
  wr.uint<std::uint32_t>(std::uint32_t(flow.height()));
  wr.floats({flow.u.data(), std::size_t(flow.u.size())});
  wr.floats({flow.v.data(), std::size_t(flow.v.size())});
  if (!wr.good()) throw IoError("failed writing " + path.string());
}

FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  binary::Reader rd(in);
  rd.expect_magic("VFLO");
  const auto version = rd.uint<std::uint32_t>("version");
  if (version != 1) throw IntegrityError("unsupported VFLO version " + std::to_string(version), 4);
  const auto w = rd.uint<std::uint32_t>("width");
  const auto h = rd.uint<std::uint32_t>("height");
  if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15) throw IntegrityError("bad VFLO dimensions", 8);
  FlowField flow{int(w), int(h)};
  rd.floats({flow.u.data(), std::size_t(flow.u.size())}, "u plane");
  rd.floats({flow.v.data(), std::size_t(flow.v.size())}, "v plane");
  return flow;
}

}  // namespace viewflow
