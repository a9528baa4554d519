#pragma once

// Naive reference implementations used only by the test suites. They are
// written independently of the library kernels: plain nested loops with
// double accumulation.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "viewflow/ops.hpp"

namespace oracle {

using viewflow::Shape;
using viewflow::Tensor;

template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& k, viewflow::Triple stride, viewflow::Triple pad) {
  const long N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const long K = k.dim(0), kt = k.dim(2), kh = k.dim(3), kw = k.dim(4);
  const long OT = (T + 2 * long(pad[0]) - kt) / long(stride[0]) + 1;
  const long OH = (H + 2 * long(pad[1]) - kh) / long(stride[1]) + 1;
  const long OW = (W + 2 * long(pad[2]) - kw) / long(stride[2]) + 1;
  Tensor<S> out(Shape{size_t(N), size_t(K), size_t(OT), size_t(OH), size_t(OW)});
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < K; ++o)
      for (long t = 0; t < OT; ++t)
        for (long h = 0; h < OH; ++h)
          for (long w = 0; w < OW; ++w) {
            double acc = 0;
            for (long c = 0; c < C; ++c)
              for (long a = 0; a < kt; ++a)
                for (long b = 0; b < kh; ++b)
                  for (long e = 0; e < kw; ++e) {
                    const long it = t * long(stride[0]) - long(pad[0]) + a;
                    const long ih = h * long(stride[1]) - long(pad[1]) + b;
                    const long iw = w * long(stride[2]) - long(pad[2]) + e;
                    if (it < 0 || it >= T || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                    acc += double(x(n, c, it, ih, iw)) * double(k(o, c, a, b, e));
                  }
            out(n, o, t, h, w) = S(acc);
          }
  return out;
}

template <typename S>
Tensor<S> pool3d(const Tensor<S>& x, viewflow::Triple win, viewflow::Triple stride, bool max) {
  const size_t N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const size_t OT = (T - win[0]) / stride[0] + 1, OH = (H - win[1]) / stride[1] + 1,
               OW = (W - win[2]) / stride[2] + 1;
  Tensor<S> out(Shape{N, C, OT, OH, OW});
  for (size_t n = 0; n < N; ++n)
    for (size_t c = 0; c < C; ++c)
      for (size_t t = 0; t < OT; ++t)
        for (size_t h = 0; h < OH; ++h)
          for (size_t w = 0; w < OW; ++w) {
            double best = -std::numeric_limits<double>::infinity(), sum = 0;
            for (size_t a = 0; a < win[0]; ++a)
              for (size_t b = 0; b < win[1]; ++b)
                for (size_t e = 0; e < win[2]; ++e) {
                  const double v = x(n, c, t * stride[0] + a, h * stride[1] + b, w * stride[2] + e);
                  best = std::max(best, v);
                  sum += v;
                }
            out(n, c, t, h, w) = S(max ? best : sum / double(win[0] * win[1] * win[2]));
          }
  return out;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(Shape{a.dim(0), b.dim(1)});
  for (size_t i = 0; i < a.dim(0); ++i)
    for (size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0;
      for (size_t k = 0; k < a.dim(1); ++k) acc += double(a(i, k)) * double(b(k, j));
      out(i, j) = S(acc);
    }
  return out;
}

/// Two-pass per-channel mean/variance normalization.
template <typename S>
Tensor<S> batchnorm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps) {
  const size_t N = x.dim(0), C = x.dim(1), inner = x.size() / (N * C);
  Tensor<S> out(x.shape());
  for (size_t c = 0; c < C; ++c) {
    std::vector<double> vals;
    for (size_t n = 0; n < N; ++n)
      for (size_t j = 0; j < inner; ++j) vals.push_back(x[(n * C + c) * inner + j]);
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= double(vals.size());
    for (size_t n = 0; n < N; ++n)
      for (size_t j = 0; j < inner; ++j) {
        const size_t i = (n * C + c) * inner + j;
        out[i] = S(double(gamma[c]) * (double(x[i]) - mean) / std::sqrt(var + eps) + double(beta[c]));
      }
  }
  return out;
}

/// Largest elementwise |a-b| / max(|a|,|b|,floor).
template <typename S>
double max_rel_err(const Tensor<S>& a, const Tensor<S>& b, double floor = 1e-6) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

/// Central finite-difference gradient of a scalar function of `x`.
template <typename S>
Tensor<S> numeric_gradient(Tensor<S> x, const std::function<double(const Tensor<S>&)>& f, double h = 1e-3) {
  Tensor<S> g(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    const S orig = x[i];
    x[i] = S(double(orig) + h);
    const double up = f(x);
    x[i] = S(double(orig) - h);
    const double down = f(x);
    x[i] = orig;
    g[i] = S((up - down) / (2 * h));
  }
  return g;
}

}  // namespace oracle
