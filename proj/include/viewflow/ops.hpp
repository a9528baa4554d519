#pragma once

// Forward and backward kernels for the fixed op vocabulary used by the
// feature extractor and the classifier heads. All functions are pure.

#include <Eigen/Core>

#include <array>
#include <limits>
#include <span>
#include <vector>

#include "viewflow/tensor.hpp"

namespace viewflow {

using Triple = std::array<std::size_t, 3>;

struct ConvGeometry {
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

struct PoolGeometry {
  Triple window{2, 2, 2};
  Triple stride{2, 2, 2};
  Triple padding{0, 0, 0};
};

namespace detail {

template <typename Acc>
using RowMatrix = Eigen::Matrix<Acc, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::size_t window_output(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                                 const char* op) {
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be >= 1");
  if (k == 0 || k > in + 2 * pad)
    throw DimensionError(std::string(op) + ": window " + std::to_string(k) + " exceeds padded extent " +
                         std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(s));
}

struct ConvPlan {
  std::size_t n, c, t, h, w;        // input
  std::size_t k, kt, kh, kw;        // kernel
  std::size_t ot, oh, ow;           // output
  std::size_t patch() const { return c * kt * kh * kw; }
  std::size_t positions() const { return ot * oh * ow; }
};

inline ConvPlan plan_conv(const Shape& in, const Shape& kernel, const ConvGeometry& g) {
  require_rank(in, 5, "conv3d input");
  require_rank(kernel, 5, "conv3d kernel");
  if (in[1] != kernel[1])
    throw DimensionError("conv3d: input channels " + std::to_string(in[1]) + " != kernel channels " +
                         std::to_string(kernel[1]));
  ConvPlan p{in[0], in[1], in[2], in[3], in[4], kernel[0], kernel[2], kernel[3], kernel[4], 0, 0, 0};
  p.ot = window_output(p.t, p.kt, g.stride[0], g.padding[0], "conv3d");
  p.oh = window_output(p.h, p.kh, g.stride[1], g.padding[1], "conv3d");
  p.ow = window_output(p.w, p.kw, g.stride[2], g.padding[2], "conv3d");
  return p;
}

// Visits every (patch row, output column, input offset) triple of one sample;
// offset is -1 for padded cells.
template <typename Fn>
void for_each_patch_cell(const ConvPlan& p, const ConvGeometry& g, Fn&& fn) {
  const std::ptrdiff_t st = g.stride[0], sh = g.stride[1], sw = g.stride[2];
  const std::ptrdiff_t pt = g.padding[0], ph = g.padding[1], pw = g.padding[2];
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.c; ++c)
    for (std::size_t a = 0; a < p.kt; ++a)
      for (std::size_t b = 0; b < p.kh; ++b)
        for (std::size_t e = 0; e < p.kw; ++e, ++row) {
          std::size_t col = 0;
          for (std::size_t ot = 0; ot < p.ot; ++ot) {
            const std::ptrdiff_t it = std::ptrdiff_t(ot) * st - pt + std::ptrdiff_t(a);
            for (std::size_t oh = 0; oh < p.oh; ++oh) {
              const std::ptrdiff_t ih = std::ptrdiff_t(oh) * sh - ph + std::ptrdiff_t(b);
              for (std::size_t ow = 0; ow < p.ow; ++ow, ++col) {
                const std::ptrdiff_t iw = std::ptrdiff_t(ow) * sw - pw + std::ptrdiff_t(e);
                const bool inside = it >= 0 && it < std::ptrdiff_t(p.t) && ih >= 0 &&
                                    ih < std::ptrdiff_t(p.h) && iw >= 0 && iw < std::ptrdiff_t(p.w);
                const std::ptrdiff_t off =
                    inside ? ((std::ptrdiff_t(c) * std::ptrdiff_t(p.t) + it) * std::ptrdiff_t(p.h) + ih) *
                                     std::ptrdiff_t(p.w) +
                                 iw
                           : -1;
                fn(row, col, off);
              }
            }
          }
        }
}

template <typename Acc, typename Scalar>
RowMatrix<Acc> im2col(const Scalar* sample, const ConvPlan& p, const ConvGeometry& g) {
  RowMatrix<Acc> cols(p.patch(), p.positions());
  for_each_patch_cell(p, g, [&](std::size_t r, std::size_t c, std::ptrdiff_t off) {
    cols(r, c) = off < 0 ? Acc(0) : Acc(sample[off]);
  });
  return cols;
}

}  // namespace detail

/// 3-D cross-correlation (no kernel flip).
/// input [N,C,T,H,W], kernel [K,C,kt,kh,kw] -> [N,K,T',H',W'].
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, const ConvGeometry& g = {}) {
  using Acc = Accumulator<Scalar>;
  const auto p = detail::plan_conv(input.shape(), kernel.shape(), g);
  const detail::RowMatrix<Acc> km =
      Eigen::Map<const detail::RowMatrix<Scalar>>(kernel.data().data(), Eigen::Index(p.k), Eigen::Index(p.patch()))
          .template cast<Acc>();
  Tensor<Scalar> out(Shape{p.n, p.k, p.ot, p.oh, p.ow});
  const std::size_t in_stride = p.c * p.t * p.h * p.w;
  const std::size_t out_stride = p.k * p.positions();
  for (std::size_t n = 0; n < p.n; ++n) {
    const auto cols = detail::im2col<Acc>(input.data().data() + n * in_stride, p, g);
    const detail::RowMatrix<Acc> prod = km * cols;
    Eigen::Map<detail::RowMatrix<Scalar>>(out.data().data() + n * out_stride, Eigen::Index(p.k),
                                          Eigen::Index(p.positions())) = prod.template cast<Scalar>();
  }
  ensure_finite(out, "conv3d");
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv3d_grad_input(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& kernel,
                                 const Shape& input_shape, const ConvGeometry& g = {}) {
  using Acc = Accumulator<Scalar>;
  const auto p = detail::plan_conv(input_shape, kernel.shape(), g);
  const detail::RowMatrix<Acc> km =
      Eigen::Map<const detail::RowMatrix<Scalar>>(kernel.data().data(), Eigen::Index(p.k), Eigen::Index(p.patch()))
          .template cast<Acc>();
  std::vector<Acc> acc(shape_size(input_shape), Acc(0));
  const std::size_t in_stride = p.c * p.t * p.h * p.w;
  const std::size_t out_stride = p.k * p.positions();
  for (std::size_t n = 0; n < p.n; ++n) {
    const detail::RowMatrix<Acc> go =
        Eigen::Map<const detail::RowMatrix<Scalar>>(grad_out.data().data() + n * out_stride, Eigen::Index(p.k),
                                                    Eigen::Index(p.positions()))
            .template cast<Acc>();
    const detail::RowMatrix<Acc> dcols = km.transpose() * go;
    Acc* dst = acc.data() + n * in_stride;
    detail::for_each_patch_cell(p, g, [&](std::size_t r, std::size_t c, std::ptrdiff_t off) {
      if (off >= 0) dst[off] += dcols(r, c);
    });
  }
  Tensor<Scalar> out(input_shape);
  std::transform(acc.begin(), acc.end(), out.data().begin(), [](Acc v) { return Scalar(v); });
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv3d_grad_kernel(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& input,
                                  const Shape& kernel_shape, const ConvGeometry& g = {}) {
  using Acc = Accumulator<Scalar>;
  const auto p = detail::plan_conv(input.shape(), kernel_shape, g);
  detail::RowMatrix<Acc> dk = detail::RowMatrix<Acc>::Zero(p.k, p.patch());
  const std::size_t in_stride = p.c * p.t * p.h * p.w;
  const std::size_t out_stride = p.k * p.positions();
  for (std::size_t n = 0; n < p.n; ++n) {
    const auto cols = detail::im2col<Acc>(input.data().data() + n * in_stride, p, g);
    const detail::RowMatrix<Acc> go =
        Eigen::Map<const detail::RowMatrix<Scalar>>(grad_out.data().data() + n * out_stride, Eigen::Index(p.k),
                                                    Eigen::Index(p.positions()))
            .template cast<Acc>();
    dk.noalias() += go * cols.transpose();
  }
  Tensor<Scalar> out(kernel_shape);
  Eigen::Map<detail::RowMatrix<Scalar>>(out.data().data(), Eigen::Index(p.k), Eigen::Index(p.patch())) =
      dk.template cast<Scalar>();
  return out;
}

/// Adds bias[c] to every element of channel c (axis 1) of x [N,C,...].
template <typename Scalar>
Tensor<Scalar> add_channel_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  if (x.ndim() < 2 || bias.size() != x.dim(1))
    throw DimensionError("add_channel_bias: bias " + shape_string(bias.shape()) + " vs input " +
                         shape_string(x.shape()));
  Tensor<Scalar> out = x;
  const std::size_t inner = x.size() / (x.dim(0) * x.dim(1));
  auto d = out.data();
  for (std::size_t n = 0, i = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t j = 0; j < inner; ++j, ++i) d[i] += bias[c];
  ensure_finite(out, "add_channel_bias");
  return out;
}

template <typename Scalar>
Tensor<Scalar> channel_sum(const Tensor<Scalar>& x) {
  using Acc = Accumulator<Scalar>;
  std::vector<Acc> acc(x.dim(1), Acc(0));
  const std::size_t inner = x.size() / (x.dim(0) * x.dim(1));
  for (std::size_t n = 0, i = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t j = 0; j < inner; ++j, ++i) acc[c] += x[i];
  Tensor<Scalar> out(Shape{x.dim(1)});
  for (std::size_t c = 0; c < acc.size(); ++c) out[c] = Scalar(acc[c]);
  return out;
}

namespace detail {

struct PoolPlan {
  std::size_t outer, t, h, w, ot, oh, ow;
};

inline PoolPlan plan_pool(const Shape& in, const PoolGeometry& g, const char* op) {
  require_rank(in, 5, op);
  for (int i = 0; i < 3; ++i)
    if (g.padding[i] >= g.window[i]) throw DimensionError(std::string(op) + ": padding must be < window");
  PoolPlan p{in[0] * in[1], in[2], in[3], in[4], 0, 0, 0};
  p.ot = window_output(p.t, g.window[0], g.stride[0], g.padding[0], op);
  p.oh = window_output(p.h, g.window[1], g.stride[1], g.padding[1], op);
  p.ow = window_output(p.w, g.window[2], g.stride[2], g.padding[2], op);
  return p;
}

// Calls fn(out_index, window_offsets) for every output cell; offsets are
// flat input indices of the in-bounds window cells.
template <typename Fn>
void for_each_pool_window(const PoolPlan& p, const PoolGeometry& g, Fn&& fn) {
  std::vector<std::size_t> offsets;
  offsets.reserve(g.window[0] * g.window[1] * g.window[2]);
  std::size_t out = 0;
  for (std::size_t s = 0; s < p.outer; ++s) {
    const std::size_t base = s * p.t * p.h * p.w;
    for (std::size_t ot = 0; ot < p.ot; ++ot)
      for (std::size_t oh = 0; oh < p.oh; ++oh)
        for (std::size_t ow = 0; ow < p.ow; ++ow, ++out) {
          offsets.clear();
          for (std::size_t a = 0; a < g.window[0]; ++a) {
            const std::ptrdiff_t it = std::ptrdiff_t(ot * g.stride[0] + a) - std::ptrdiff_t(g.padding[0]);
            if (it < 0 || it >= std::ptrdiff_t(p.t)) continue;
            for (std::size_t b = 0; b < g.window[1]; ++b) {
              const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.stride[1] + b) - std::ptrdiff_t(g.padding[1]);
              if (ih < 0 || ih >= std::ptrdiff_t(p.h)) continue;
              for (std::size_t e = 0; e < g.window[2]; ++e) {
                const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.stride[2] + e) - std::ptrdiff_t(g.padding[2]);
                if (iw < 0 || iw >= std::ptrdiff_t(p.w)) continue;
                offsets.push_back(base + (std::size_t(it) * p.h + std::size_t(ih)) * p.w + std::size_t(iw));
              }
            }
          }
          fn(out, std::span<const std::size_t>(offsets));
        }
  }
}

}  // namespace detail

/// Max pooling. `argmax`, when given, receives the flat input index chosen
/// for each output cell (first maximum wins).
template <typename Scalar>
Tensor<Scalar> maxpool3d(const Tensor<Scalar>& input, const PoolGeometry& g,
                         std::vector<std::size_t>* argmax = nullptr) {
  const auto p = detail::plan_pool(input.shape(), g, "maxpool3d");
  Tensor<Scalar> out(Shape{input.dim(0), input.dim(1), p.ot, p.oh, p.ow});
  if (argmax) argmax->assign(out.size(), 0);
  detail::for_each_pool_window(p, g, [&](std::size_t o, std::span<const std::size_t> cells) {
    std::size_t best = cells[0];
    for (auto c : cells)
      if (input[c] > input[best]) best = c;
    out[o] = input[best];
    if (argmax) (*argmax)[o] = best;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool3d_grad(const Tensor<Scalar>& grad_out, const std::vector<std::size_t>& argmax,
                              const Shape& input_shape) {
  Tensor<Scalar> out(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) out[argmax[o]] += grad_out[o];
  return out;
}

/// Average pooling over in-bounds cells (padding is not counted).
template <typename Scalar>
Tensor<Scalar> avgpool3d(const Tensor<Scalar>& input, const PoolGeometry& g) {
  using Acc = Accumulator<Scalar>;
  const auto p = detail::plan_pool(input.shape(), g, "avgpool3d");
  Tensor<Scalar> out(Shape{input.dim(0), input.dim(1), p.ot, p.oh, p.ow});
  detail::for_each_pool_window(p, g, [&](std::size_t o, std::span<const std::size_t> cells) {
    Acc s = 0;
    for (auto c : cells) s += input[c];
    out[o] = Scalar(s / Acc(cells.size()));
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> avgpool3d_grad(const Tensor<Scalar>& grad_out, const Shape& input_shape, const PoolGeometry& g) {
  const auto p = detail::plan_pool(input_shape, g, "avgpool3d");
  Tensor<Scalar> out(input_shape);
  detail::for_each_pool_window(p, g, [&](std::size_t o, std::span<const std::size_t> cells) {
    const Scalar share = grad_out[o] / Scalar(cells.size());
    for (auto c : cells) out[c] += share;
  });
  return out;
}

/// Mean over every axis after the channel axis: [N,C,...] -> [N,C].
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  using Acc = Accumulator<Scalar>;
  if (x.ndim() < 2) throw DimensionError("global_avg_pool: need [N,C,...], got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t inner = x.size() / rows;
  Tensor<Scalar> out(Shape{x.dim(0), x.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    Acc s = 0;
    for (std::size_t j = 0; j < inner; ++j) s += x[r * inner + j];
    out[r] = Scalar(s / Acc(inner));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_grad(const Tensor<Scalar>& grad_out, const Shape& input_shape) {
  Tensor<Scalar> out(input_shape);
  const std::size_t rows = input_shape[0] * input_shape[1];
  const std::size_t inner = out.size() / rows;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < inner; ++j) out[r * inner + j] = grad_out[r] / Scalar(inner);
  return out;
}

enum class Transpose { None, Left, Right };

/// Matrix product with optional transposition of one operand; products are
/// accumulated in Accumulator<Scalar>.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Transpose tr = Transpose::None) {
  using Acc = Accumulator<Scalar>;
  detail::require_rank(a.shape(), 2, "matmul lhs");
  detail::require_rank(b.shape(), 2, "matmul rhs");
  const auto am = a.matrix().template cast<Acc>();
  const auto bm = b.matrix().template cast<Acc>();
  const std::size_t ak = tr == Transpose::Left ? a.dim(0) : a.dim(1);
  const std::size_t bk = tr == Transpose::Right ? b.dim(1) : b.dim(0);
  if (ak != bk)
    throw DimensionError("matmul: inner dims differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  detail::RowMatrix<Acc> prod;
  switch (tr) {
    case Transpose::None: prod = am * bm; break;
    case Transpose::Left: prod = am.transpose() * bm; break;
    case Transpose::Right: prod = am * bm.transpose(); break;
  }
  Tensor<Scalar> out(Shape{std::size_t(prod.rows()), std::size_t(prod.cols())});
  out.matrix() = prod.template cast<Scalar>();
  ensure_finite(out, "matmul");
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = x;
  for (auto& v : out.data()) v = v > Scalar(0) ? v : Scalar(0);
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu_grad(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& x) {
  Tensor<Scalar> out = grad_out;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(x[i] > Scalar(0))) out[i] = Scalar(0);
  return out;
}

/// Row-wise softmax over the last axis of [N,C], max-subtracted.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  using Acc = Accumulator<Scalar>;
  detail::require_rank(x.shape(), 2, "softmax");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor<Scalar> out(x.shape());
  std::vector<Acc> e(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = x.data().data() + r * cols;
    const Scalar mx = *std::max_element(row, row + cols);
    Acc total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += (e[c] = std::exp(Acc(row[c]) - Acc(mx)));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = Scalar(e[c] / total);
  }
  ensure_finite(out, "softmax");
  return out;
}

/// Given probabilities p = softmax(x) and dL/dp, returns dL/dx.
template <typename Scalar>
Tensor<Scalar> softmax_grad(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& probs) {
  using Acc = Accumulator<Scalar>;
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  Tensor<Scalar> out(probs.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    Acc dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += Acc(grad_out[r * cols + c]) * Acc(probs[r * cols + c]);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      out[i] = Scalar(Acc(probs[i]) * (Acc(grad_out[i]) - dot));
    }
  }
  return out;
}

inline void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || std::size_t(y) >= classes)
      throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

/// Mean negative log-likelihood of `labels` under row probabilities [N,C].
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& probs, std::span<const int> labels) {
  using Acc = Accumulator<Scalar>;
  detail::require_rank(probs.shape(), 2, "cross_entropy");
  check_labels(labels, probs.dim(0), probs.dim(1));
  Acc total = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const Acc p = std::max(Acc(probs(r, std::size_t(labels[r]))), Acc(std::numeric_limits<Scalar>::min()));
    total -= std::log(p);
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(Scalar(total / Acc(labels.size())));
  ensure_finite(out, "cross_entropy");
  return out;
}

template <typename Scalar>
Tensor<Scalar> cross_entropy_grad(Scalar grad_out, const Tensor<Scalar>& probs, std::span<const int> labels) {
  Tensor<Scalar> out(probs.shape());
  const Scalar scale = grad_out / Scalar(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const std::size_t c = std::size_t(labels[r]);
    const Scalar p = std::max(probs(r, c), std::numeric_limits<Scalar>::min());
    out(r, c) = -scale / p;
  }
  return out;
}

/// Per-batch normalization state kept for the backward pass.
template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> normalized;        // (x - mean) / sqrt(var + eps)
  std::vector<double> inv_std;      // per channel
};

/// Batch normalization with statistics taken from the current batch only.
/// x [N,C,...] with N >= 2; gamma, beta [C].
template <typename Scalar>
Tensor<Scalar> batchnorm_batch(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                               double eps = 1e-5, BatchNormCache<Scalar>* cache = nullptr) {
  if (x.ndim() < 2) throw DimensionError("batchnorm_batch: need [N,C,...], got " + shape_string(x.shape()));
  if (x.dim(0) < 2) throw BatchSizeError("batchnorm_batch: per-batch statistics need N >= 2, got N = " +
                                         std::to_string(x.dim(0)));
  const std::size_t n = x.dim(0), channels = x.dim(1);
  if (gamma.size() != channels || beta.size() != channels)
    throw DimensionError("batchnorm_batch: gamma/beta must have " + std::to_string(channels) + " entries");
  const std::size_t inner = x.size() / (n * channels);
  const double count = double(n * inner);

  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> out(x.shape());
  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < inner; ++j) mean += double(x[(s * channels + c) * inner + j]);
    mean /= count;
    double var = 0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < inner; ++j) {
        const double d = double(x[(s * channels + c) * inner + j]) - mean;
        var += d * d;
      }
    var /= count;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = (s * channels + c) * inner + j;
        const double nh = (double(x[i]) - mean) * inv_std[c];
        xhat[i] = Scalar(nh);
        out[i] = Scalar(double(gamma[c]) * nh + double(beta[c]));
      }
  }
  ensure_finite(out, "batchnorm_batch");
  if (cache) *cache = {std::move(xhat), std::move(inv_std)};
  return out;
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input, gamma, beta;
};

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_batch_grad(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& gamma,
                                            const BatchNormCache<Scalar>& cache) {
  const auto& xhat = cache.normalized;
  const std::size_t n = xhat.dim(0), channels = xhat.dim(1);
  const std::size_t inner = xhat.size() / (n * channels);
  const double count = double(n * inner);
  BatchNormGrads<Scalar> g{Tensor<Scalar>(xhat.shape()), Tensor<Scalar>(gamma.shape()), Tensor<Scalar>(gamma.shape())};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_g = 0, sum_gx = 0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = (s * channels + c) * inner + j;
        sum_g += double(grad_out[i]);
        sum_gx += double(grad_out[i]) * double(xhat[i]);
      }
    g.beta[c] = Scalar(sum_g);
    g.gamma[c] = Scalar(sum_gx);
    const double scale = double(gamma[c]) * cache.inv_std[c] / count;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = (s * channels + c) * inner + j;
        g.input[i] = Scalar(scale * (count * double(grad_out[i]) - sum_g - double(xhat[i]) * sum_gx));
      }
  }
  return g;
}

/// Inference-time normalization with stored statistics (used by backbones
/// converted from checkpoints): y = gamma (x - mean) / sqrt(var + eps) + beta.
template <typename Scalar>
Tensor<Scalar> batchnorm_frozen(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                                const Tensor<Scalar>& mean, const Tensor<Scalar>& var, double eps = 1e-5) {
  const std::size_t channels = x.dim(1);
  if (gamma.size() != channels || beta.size() != channels || mean.size() != channels || var.size() != channels)
    throw DimensionError("batchnorm: statistics must have " + std::to_string(channels) + " entries");
  const std::size_t inner = x.size() / (x.dim(0) * channels);
  Tensor<Scalar> out(x.shape());
  for (std::size_t s = 0, i = 0; s < x.dim(0); ++s)
    for (std::size_t c = 0; c < channels; ++c) {
      const double scale = double(gamma[c]) / std::sqrt(double(var[c]) + eps);
      for (std::size_t j = 0; j < inner; ++j, ++i)
        out[i] = Scalar((double(x[i]) - double(mean[c])) * scale + double(beta[c]));
    }
  ensure_finite(out, "batchnorm");
  return out;
}

/// Concatenates [N,C_i,...] tensors along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: nothing to concatenate");
  Shape shape = parts[0].shape();
  shape[1] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    a[1] = b[1] = 0;
    if (a != b) throw DimensionError("concat_channels: incompatible shape " + shape_string(p.shape()));
    shape[1] += p.dim(1);
  }
  Tensor<Scalar> out(shape);
  const std::size_t inner = out.size() / (shape[0] * shape[1]);
  std::size_t dst = 0;
  for (std::size_t n = 0; n < shape[0]; ++n)
    for (const auto& p : parts) {
      const std::size_t block = p.dim(1) * inner;
      std::copy_n(p.data().begin() + n * block, block, out.data().begin() + dst);
      dst += block;
    }
  return out;
}

}  // namespace viewflow
