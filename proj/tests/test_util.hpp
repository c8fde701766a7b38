// Copyright 2026 The SNIDER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Independent reference implementations used as test oracles. These are
// written as plain nested loops on purpose and must stay independent of the
// library's im2col/GEMM path.

#ifndef SNIDER_TESTS_TEST_UTIL_HPP_
#define SNIDER_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <random>
#include <vector>

#include "snider/ops.hpp"
#include "snider/tensor.hpp"

namespace snider::testing {

template <typename T>
Tensor<T> random_tensor(const std::vector<int64_t>& shape, std::mt19937_64& rng,
                        T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& x : t.mutable_data()) x = static_cast<T>(dist(rng));
  return t;
}

// Quadruple-loop cross-correlation oracle.
template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& input, const Tensor<T>& kernel,
                           const Tensor<T>& bias, int stride, AxisPad pad_h,
                           AxisPad pad_w) {
  int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  int64_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  int64_t oh = (h + pad_h.begin + pad_h.end - kh) / stride + 1;
  int64_t ow = (w + pad_w.begin + pad_w.end - kw) / stride + 1;
  Tensor<T> out({b, o, oh, ow});
  auto in = input.data();
  auto k = kernel.data();
  auto bi = bias.data();
  auto y = out.mutable_data();
  for (int64_t n = 0; n < b; ++n)
    for (int64_t oc = 0; oc < o; ++oc)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = bi[oc];
          for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy * stride + ky - pad_h.begin;
                int64_t ix = ox * stride + kx - pad_w.begin;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(in[((n * c + ic) * h + iy) * w + ix]) *
                       static_cast<double>(k[((oc * c + ic) * kh + ky) * kw + kx]);
              }
          y[((n * o + oc) * oh + oy) * ow + ox] = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& input, const Tensor<T>& kernel,
                           const Tensor<T>& bias, int stride, int padding) {
  return conv2d_reference(input, kernel, bias, stride, AxisPad{padding, padding},
                          AxisPad{padding, padding});
}

// Scatter-accumulate oracle for the transposed convolution. Geometry matches
// the library's up_factor convention: stride = up, pad = ceil((K-up)/2),
// output = up * input extent.
template <typename T>
Tensor<T> conv_transpose2d_reference(const Tensor<T>& input,
                                     const Tensor<T>& kernel,
                                     const Tensor<T>& bias, int up) {
  int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  int64_t o = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  int64_t ph = std::max<int64_t>(0, (kh - up + 1) / 2);  // ceil((kh-up)/2)
  int64_t pw = std::max<int64_t>(0, (kw - up + 1) / 2);
  int64_t oh = up * h, ow = up * w;
  Tensor<T> out({b, o, oh, ow});
  auto in = input.data();
  auto k = kernel.data();
  auto bi = bias.data();
  auto y = out.mutable_data();
  for (int64_t n = 0; n < b; ++n)
    for (int64_t oc = 0; oc < o; ++oc)
      for (int64_t i = 0; i < oh * ow; ++i)
        y[(n * o + oc) * oh * ow + i] = bi[oc];
  for (int64_t n = 0; n < b; ++n)
    for (int64_t ic = 0; ic < c; ++ic)
      for (int64_t iy = 0; iy < h; ++iy)
        for (int64_t ix = 0; ix < w; ++ix) {
          T v = in[((n * c + ic) * h + iy) * w + ix];
          for (int64_t oc = 0; oc < o; ++oc)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t oy = iy * up + ky - ph;
                int64_t ox = ix * up + kx - pw;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                y[((n * o + oc) * oh + oy) * ow + ox] +=
                    v * k[((ic * o + oc) * kh + ky) * kw + kx];
              }
        }
  return out;
}

// Per-block scan oracle for 2x2 max pooling.
template <typename T>
Tensor<T> maxpool2x2_reference(const Tensor<T>& input) {
  int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor<T> out({b, c, h / 2, w / 2});
  auto in = input.data();
  auto y = out.mutable_data();
  int64_t idx = 0;
  for (int64_t n = 0; n < b; ++n)
    for (int64_t ic = 0; ic < c; ++ic)
      for (int64_t oy = 0; oy < h / 2; ++oy)
        for (int64_t ox = 0; ox < w / 2; ++ox) {
          T best = in[((n * c + ic) * h + 2 * oy) * w + 2 * ox];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              T v = in[((n * c + ic) * h + 2 * oy + dy) * w + 2 * ox + dx];
              if (v > best) best = v;
            }
          y[idx++] = best;
        }
  return out;
}

// Scalar-loop loss oracles.
template <typename T>
double mse_reference(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

template <typename T>
double l1_reference(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    s += std::abs(static_cast<double>(a.data()[i]) -
                  static_cast<double>(b.data()[i]));
  return s / static_cast<double>(a.numel());
}

template <typename T>
double bce_reference(const Tensor<T>& p, const Tensor<T>& t) {
  double s = 0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    double pi = std::min(1.0 - 1e-7, std::max(1e-7, static_cast<double>(p.data()[i])));
    double ti = static_cast<double>(t.data()[i]);
    s += -(ti * std::log(pi) + (1.0 - ti) * std::log(1.0 - pi));
  }
  return s / static_cast<double>(p.numel());
}

// Central finite difference of f w.r.t. one entry of a parameter buffer.
template <typename F>
double central_difference(F&& f, double* slot, double h = 1e-3) {
  double saved = *slot;
  *slot = saved + h;
  double up = f();
  *slot = saved - h;
  double down = f();
  *slot = saved;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace snider::testing

#endif  // SNIDER_TESTS_TEST_UTIL_HPP_
