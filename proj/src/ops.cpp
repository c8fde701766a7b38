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

#include "snider/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "gemm.hpp"
#include "snider/threading.hpp"

namespace snider {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
void require_rank4(const Tensor<T>& t, const char* what) {
  require(t.rank() == 4, std::string(what) + ": expected a 4-D tensor, got " +
                             shape_str(t.shape()));
}

// Gathers sliding-window patches of src[C x H x W] into
// col[(C*kh*kw) x (n_h*n_w)]; out-of-range source pixels contribute zero.
// The position count is passed in explicitly so the same routine serves both
// the convolution (exact division) and the transposed-convolution adjoint.
template <typename T>
void im2col(const T* src, int64_t C, int64_t H, int64_t W, int64_t kh,
            int64_t kw, int stride, int pad_h, int pad_w, int64_t n_h,
            int64_t n_w, T* col) {
  const int64_t P = n_h * n_w;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        T* row = col + ((c * kh + ky) * kw + kx) * P;
        for (int64_t py = 0; py < n_h; ++py) {
          const int64_t iy = py * stride + ky - pad_h;
          T* out = row + py * n_w;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + n_w, T(0));
            continue;
          }
          const T* in = src + (c * H + iy) * W;
          for (int64_t px = 0; px < n_w; ++px) {
            const int64_t ix = px * stride + kx - pad_w;
            out[px] = (ix < 0 || ix >= W) ? T(0) : in[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into dst[C x H x W] with accumulation.
template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh,
                int64_t kw, int stride, int pad_h, int pad_w, int64_t n_h,
                int64_t n_w, T* dst) {
  const int64_t P = n_h * n_w;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        const T* row = col + ((c * kh + ky) * kw + kx) * P;
        for (int64_t py = 0; py < n_h; ++py) {
          const int64_t iy = py * stride + ky - pad_h;
          if (iy < 0 || iy >= H) continue;
          T* out = dst + (c * H + iy) * W;
          const T* in = row + py * n_w;
          for (int64_t px = 0; px < n_w; ++px) {
            const int64_t ix = px * stride + kx - pad_w;
            if (ix >= 0 && ix < W) out[ix] += in[px];
          }
        }
      }
    }
  }
}

template <typename T>
const T* raw(const std::shared_ptr<std::vector<T>>& sp) {
  return sp->data();
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, const ConvGeom& geom) {
  require_rank4(input, "conv2d input");
  require_rank4(kernel, "conv2d kernel");
  require(bias.rank() == 1, "conv2d bias: expected a 1-D tensor, got " +
                                shape_str(bias.shape()));
  const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                W = input.dim(3);
  const int64_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  require(kernel.dim(1) == C,
          "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
              " input channels but input has " + std::to_string(C) + " " +
              shape_str(input.shape()) + " vs " + shape_str(kernel.shape()));
  require(bias.dim(0) == O, "conv2d: bias length " + std::to_string(bias.dim(0)) +
                                " does not match " + std::to_string(O) +
                                " output channels");
  require(geom.stride >= 1, "conv2d: stride must be positive");
  require(geom.pad_h.begin >= 0 && geom.pad_h.end >= 0 && geom.pad_w.begin >= 0 &&
              geom.pad_w.end >= 0,
          "conv2d: padding must be non-negative");
  const int64_t eh = H + geom.pad_h.begin + geom.pad_h.end - KH;
  const int64_t ew = W + geom.pad_w.begin + geom.pad_w.end - KW;
  require(eh >= 0 && ew >= 0, "conv2d: kernel " + shape_str(kernel.shape()) +
                                  " larger than padded input " +
                                  shape_str(input.shape()));
  require(eh % geom.stride == 0 && ew % geom.stride == 0,
          "conv2d: output size is not integral for input " +
              shape_str(input.shape()) + ", kernel " + shape_str(kernel.shape()) +
              ", stride " + std::to_string(geom.stride));
  const int64_t OH = eh / geom.stride + 1, OW = ew / geom.stride + 1;
  const int64_t P = OH * OW, CKK = C * KH * KW;

  Tensor<T> out({B, O, OH, OW});
  {
    const T* in = input.data().data();
    const T* k = kernel.data().data();
    const T* bi = bias.data().data();
    T* y = out.mutable_data().data();
    parallel_for(B, [&](int64_t b0, int64_t b1) {
      std::vector<T> col(static_cast<size_t>(CKK * P));
      for (int64_t b = b0; b < b1; ++b) {
        im2col(in + b * C * H * W, C, H, W, KH, KW, geom.stride,
               geom.pad_h.begin, geom.pad_w.begin, OH, OW, col.data());
        T* yb = y + b * O * P;
        for (int64_t o = 0; o < O; ++o)
          std::fill(yb + o * P, yb + (o + 1) * P, bi[o]);
        detail::gemm_accum(O, P, CKK, k, col.data(), yb);
      }
    });
  }

  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input), nk = tp->track(kernel), nb = tp->track(bias);
    if (ni >= 0 || nk >= 0 || nb >= 0) {
      const int no = tp->emit(out);
      auto in_sp = input.storage();
      auto k_sp = kernel.storage();
      const auto g = geom;
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        if (nb >= 0) {
          T* gb = t.grad_accum(nb, O).data();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < O; ++o) {
              T s(0);
              const T* row = go + (b * O + o) * P;
              for (int64_t i = 0; i < P; ++i) s += row[i];
              gb[o] += s;
            }
        }
        if (nk >= 0) {
          T* gk = t.grad_accum(nk, O * CKK).data();
          std::vector<T> col(static_cast<size_t>(CKK * P));
          for (int64_t b = 0; b < B; ++b) {
            im2col(raw(in_sp) + b * C * H * W, C, H, W, KH, KW, g.stride,
                   g.pad_h.begin, g.pad_w.begin, OH, OW, col.data());
            detail::gemm_accum_nt(O, CKK, P, go + b * O * P, col.data(), gk);
          }
        }
        if (ni >= 0) {
          T* gi = t.grad_accum(ni, B * C * H * W).data();
          std::vector<T> kt(static_cast<size_t>(CKK * O));
          detail::transpose(O, CKK, raw(k_sp), kt.data());
          parallel_for(B, [&](int64_t b0, int64_t b1) {
            std::vector<T> colg(static_cast<size_t>(CKK * P));
            for (int64_t b = b0; b < b1; ++b) {
              std::fill(colg.begin(), colg.end(), T(0));
              detail::gemm_accum(CKK, P, O, kt.data(), go + b * O * P,
                                 colg.data());
              col2im_add(colg.data(), C, H, W, KH, KW, g.stride, g.pad_h.begin,
                         g.pad_w.begin, OH, OW, gi + b * C * H * W);
            }
          });
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding) {
  return conv2d(input, kernel, bias,
                ConvGeom{stride, {padding, padding}, {padding, padding}});
}

// ---------------------------------------------------------------------------
// conv_transpose2d

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel,
                           const Tensor<T>& bias, int up_factor) {
  require_rank4(input, "conv_transpose2d input");
  require_rank4(kernel, "conv_transpose2d kernel");
  require(bias.rank() == 1, "conv_transpose2d bias: expected a 1-D tensor");
  require(up_factor >= 1, "conv_transpose2d: up_factor must be positive");
  const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                W = input.dim(3);
  const int64_t O = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  require(kernel.dim(0) == C,
          "conv_transpose2d: kernel expects " + std::to_string(kernel.dim(0)) +
              " input channels but input has " + std::to_string(C));
  require(bias.dim(0) == O, "conv_transpose2d: bias length " +
                                std::to_string(bias.dim(0)) +
                                " does not match output channels");
  // Padding pins the output extent to exactly up_factor * input extent.
  const int ph = static_cast<int>(std::max<int64_t>(0, (KH - up_factor + 1) / 2));
  const int pw = static_cast<int>(std::max<int64_t>(0, (KW - up_factor + 1) / 2));
  const int64_t OH = up_factor * H, OW = up_factor * W;
  const int64_t P_in = H * W, OKK = O * KH * KW;

  Tensor<T> out({B, O, OH, OW});
  {
    const T* in = input.data().data();
    const T* bi = bias.data().data();
    T* y = out.mutable_data().data();
    // Kernel is C x (O*KH*KW); the column matrix needs its transpose.
    std::vector<T> kt(static_cast<size_t>(OKK * C));
    detail::transpose(C, OKK, kernel.data().data(), kt.data());
    parallel_for(B, [&](int64_t b0, int64_t b1) {
      std::vector<T> col(static_cast<size_t>(OKK * P_in));
      for (int64_t b = b0; b < b1; ++b) {
        std::fill(col.begin(), col.end(), T(0));
        detail::gemm_accum(OKK, P_in, C, kt.data(), in + b * C * P_in,
                           col.data());
        T* yb = y + b * O * OH * OW;
        for (int64_t o = 0; o < O; ++o)
          std::fill(yb + o * OH * OW, yb + (o + 1) * OH * OW, bi[o]);
        col2im_add(col.data(), O, OH, OW, KH, KW, up_factor, ph, pw, H, W, yb);
      }
    });
  }

  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input), nk = tp->track(kernel), nb = tp->track(bias);
    if (ni >= 0 || nk >= 0 || nb >= 0) {
      const int no = tp->emit(out);
      auto in_sp = input.storage();
      auto k_sp = kernel.storage();
      const int up = up_factor;
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        if (nb >= 0) {
          T* gb = t.grad_accum(nb, O).data();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < O; ++o) {
              T s(0);
              const T* row = go + (b * O + o) * OH * OW;
              for (int64_t i = 0; i < OH * OW; ++i) s += row[i];
              gb[o] += s;
            }
        }
        // Both remaining adjoints read patches of the upstream gradient.
        std::vector<T> col(static_cast<size_t>(OKK * P_in));
        if (nk >= 0) {
          T* gk = t.grad_accum(nk, C * OKK).data();
          for (int64_t b = 0; b < B; ++b) {
            im2col(go + b * O * OH * OW, O, OH, OW, KH, KW, up, ph, pw, H, W,
                   col.data());
            detail::gemm_accum_nt(C, OKK, P_in, raw(in_sp) + b * C * P_in,
                                  col.data(), gk);
          }
        }
        if (ni >= 0) {
          // Gradient w.r.t. input is the forward convolution with the same
          // kernel (adjoint property).
          T* gi = t.grad_accum(ni, B * C * P_in).data();
          for (int64_t b = 0; b < B; ++b) {
            im2col(go + b * O * OH * OW, O, OH, OW, KH, KW, up, ph, pw, H, W,
                   col.data());
            detail::gemm_accum(C, P_in, OKK, raw(k_sp), col.data(),
                               gi + b * C * P_in);
          }
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2x2 / upsample_nearest2x

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input) {
  require_rank4(input, "maxpool2x2");
  const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                W = input.dim(3);
  require(H % 2 == 0 && W % 2 == 0,
          "maxpool2x2: spatial dims must be even, got " + shape_str(input.shape()));
  const int64_t OH = H / 2, OW = W / 2;
  Tensor<T> out({B, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(B * C * OH * OW));
  {
    const T* in = input.data().data();
    T* y = out.mutable_data().data();
    int64_t* am = argmax->data();
    parallel_for(B * C, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p) {
        const T* plane = in + p * H * W;
        for (int64_t oy = 0; oy < OH; ++oy)
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t base = 2 * oy * W + 2 * ox;
            // Row-major scan; strict > keeps the first of tied maxima.
            int64_t best = base;
            T bv = plane[base];
            for (int64_t idx : {base + 1, base + W, base + W + 1}) {
              if (plane[idx] > bv) {
                bv = plane[idx];
                best = idx;
              }
            }
            y[p * OH * OW + oy * OW + ox] = bv;
            am[p * OH * OW + oy * OW + ox] = p * H * W + best;
          }
      }
    });
  }
  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input);
    if (ni >= 0) {
      const int no = tp->emit(out);
      tp->record(no, [=](GradientTape<T>& t) {
        const auto& go = t.grad(no);
        T* gi = t.grad_accum(ni, B * C * H * W).data();
        const int64_t* am = argmax->data();
        for (size_t i = 0; i < go.size(); ++i) gi[am[i]] += go[i];
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
  require_rank4(input, "upsample_nearest2x");
  const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                W = input.dim(3);
  Tensor<T> out({B, C, 2 * H, 2 * W});
  {
    const T* in = input.data().data();
    T* y = out.mutable_data().data();
    parallel_for(B * C, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p)
        for (int64_t iy = 0; iy < H; ++iy)
          for (int64_t ix = 0; ix < W; ++ix) {
            T v = in[p * H * W + iy * W + ix];
            T* o = y + p * 4 * H * W + 2 * iy * 2 * W + 2 * ix;
            o[0] = v;
            o[1] = v;
            o[2 * W] = v;
            o[2 * W + 1] = v;
          }
    });
  }
  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input);
    if (ni >= 0) {
      const int no = tp->emit(out);
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        T* gi = t.grad_accum(ni, B * C * H * W).data();
        for (int64_t p = 0; p < B * C; ++p)
          for (int64_t iy = 0; iy < H; ++iy)
            for (int64_t ix = 0; ix < W; ++ix) {
              const T* g = go + p * 4 * H * W + 2 * iy * 2 * W + 2 * ix;
              gi[p * H * W + iy * W + ix] += g[0] + g[1] + g[2 * W] + g[2 * W + 1];
            }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat / slice / add / sum

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: batch/spatial mismatch " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
  const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2),
                W = a.dim(3);
  const int64_t S = H * W;
  Tensor<T> out({B, Ca + Cb, H, W});
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* y = out.mutable_data().data();
    for (int64_t n = 0; n < B; ++n) {
      std::copy(pa + n * Ca * S, pa + (n + 1) * Ca * S,
                y + n * (Ca + Cb) * S);
      std::copy(pb + n * Cb * S, pb + (n + 1) * Cb * S,
                y + n * (Ca + Cb) * S + Ca * S);
    }
  }
  if (auto* tp = GradientTape<T>::active()) {
    const int na = tp->track(a), nb = tp->track(b);
    if (na >= 0 || nb >= 0) {
      const int no = tp->emit(out);
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        if (na >= 0) {
          T* ga = t.grad_accum(na, B * Ca * S).data();
          for (int64_t n = 0; n < B; ++n)
            for (int64_t i = 0; i < Ca * S; ++i)
              ga[n * Ca * S + i] += go[n * (Ca + Cb) * S + i];
        }
        if (nb >= 0) {
          T* gb = t.grad_accum(nb, B * Cb * S).data();
          for (int64_t n = 0; n < B; ++n)
            for (int64_t i = 0; i < Cb * S; ++i)
              gb[n * Cb * S + i] += go[n * (Ca + Cb) * S + Ca * S + i];
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int64_t from, int64_t to) {
  require_rank4(input, "slice_channels");
  const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                W = input.dim(3);
  require(0 <= from && from < to && to <= C,
          "slice_channels: range [" + std::to_string(from) + ", " +
              std::to_string(to) + ") invalid for " + std::to_string(C) +
              " channels");
  const int64_t S = H * W, Cs = to - from;
  Tensor<T> out({B, Cs, H, W});
  {
    const T* in = input.data().data();
    T* y = out.mutable_data().data();
    for (int64_t n = 0; n < B; ++n)
      std::copy(in + (n * C + from) * S, in + (n * C + to) * S, y + n * Cs * S);
  }
  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input);
    if (ni >= 0) {
      const int no = tp->emit(out);
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        T* gi = t.grad_accum(ni, B * C * S).data();
        for (int64_t n = 0; n < B; ++n)
          for (int64_t i = 0; i < Cs * S; ++i)
            gi[(n * C + from) * S + i] += go[n * Cs * S + i];
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* y = out.mutable_data().data();
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = pa[i] + pb[i];
  if (auto* tp = GradientTape<T>::active()) {
    const int na = tp->track(a), nb = tp->track(b);
    if (na >= 0 || nb >= 0) {
      const int no = tp->emit(out);
      const int64_t n = a.numel();
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        if (na >= 0) {
          T* ga = t.grad_accum(na, n).data();
          for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
        }
        if (nb >= 0) {
          T* gb = t.grad_accum(nb, n).data();
          for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& input) {
  T s(0);
  for (T v : input.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input);
    if (ni >= 0) {
      const int no = tp->emit(out);
      const int64_t n = input.numel();
      tp->record(no, [=](GradientTape<T>& t) {
        const T go = t.grad(no)[0];
        T* gi = t.grad_accum(ni, n).data();
        for (int64_t i = 0; i < n; ++i) gi[i] += go;
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, Parameter<T>& gamma,
                      Parameter<T>& beta, BatchNormState<T>& state, Mode mode) {
  require_rank4(input, "batchnorm2d");
  const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                W = input.dim(3);
  require(gamma.numel() == C && beta.numel() == C,
          "batchnorm2d: gamma/beta length must equal channel count " +
              std::to_string(C));
  require(static_cast<int64_t>(state.running_mean.size()) == C,
          "batchnorm2d: running stats sized for a different channel count");
  const int64_t M = B * H * W;
  if (mode == Mode::kTrain)
    require(M >= 2, "batchnorm2d: train mode needs batch*H*W >= 2, got " +
                        std::to_string(M));

  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  const T* x = input.data().data();
  if (mode == Mode::kTrain) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (int64_t n = 0; n < B; ++n) {
        const T* plane = x + (n * C + c) * H * W;
        for (int64_t i = 0; i < H * W; ++i) s += static_cast<double>(plane[i]);
      }
      const double mu = s / static_cast<double>(M);
      double vs = 0;
      for (int64_t n = 0; n < B; ++n) {
        const T* plane = x + (n * C + c) * H * W;
        for (int64_t i = 0; i < H * W; ++i) {
          const double d = static_cast<double>(plane[i]) - mu;
          vs += d * d;
        }
      }
      const double var = vs / static_cast<double>(M);  // population variance
      (*mean)[static_cast<size_t>(c)] = static_cast<T>(mu);
      (*invstd)[static_cast<size_t>(c)] =
          static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
      state.running_mean[static_cast<size_t>(c)] = static_cast<T>(
          kBatchNormMomentum * state.running_mean[static_cast<size_t>(c)] +
          (1.0 - kBatchNormMomentum) * mu);
      state.running_var[static_cast<size_t>(c)] = static_cast<T>(
          kBatchNormMomentum * state.running_var[static_cast<size_t>(c)] +
          (1.0 - kBatchNormMomentum) * var);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      (*mean)[static_cast<size_t>(c)] = state.running_mean[static_cast<size_t>(c)];
      (*invstd)[static_cast<size_t>(c)] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(
                              state.running_var[static_cast<size_t>(c)]) +
                          kBatchNormEps));
    }
  }

  Tensor<T> out(input.shape());
  {
    const T* g = gamma.value().data().data();
    const T* be = beta.value().data().data();
    T* y = out.mutable_data().data();
    parallel_for(B * C, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p) {
        const int64_t c = p % C;
        const T mu = (*mean)[static_cast<size_t>(c)];
        const T is = (*invstd)[static_cast<size_t>(c)];
        const T gc = g[c], bc = be[c];
        const T* xi = x + p * H * W;
        T* yo = y + p * H * W;
        for (int64_t i = 0; i < H * W; ++i)
          yo[i] = gc * ((xi[i] - mu) * is) + bc;
      }
    });
  }

  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input);
    const int ng = tp->track(gamma.value());
    const int nb = tp->track(beta.value());
    if (ni >= 0 || ng >= 0 || nb >= 0) {
      const int no = tp->emit(out);
      auto x_sp = input.storage();
      auto g_sp = gamma.value().storage();
      const bool train = mode == Mode::kTrain;
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        const T* xd = raw(x_sp);
        const T* gd = raw(g_sp);
        std::vector<double> s1(static_cast<size_t>(C), 0.0);
        std::vector<double> s2(static_cast<size_t>(C), 0.0);
        for (int64_t n = 0; n < B; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t off = (n * C + c) * H * W;
            const double mu = (*mean)[static_cast<size_t>(c)];
            const double is = (*invstd)[static_cast<size_t>(c)];
            double a = 0, b2 = 0;
            for (int64_t i = 0; i < H * W; ++i) {
              const double g1 = go[off + i];
              a += g1;
              b2 += g1 * (static_cast<double>(xd[off + i]) - mu) * is;
            }
            s1[static_cast<size_t>(c)] += a;
            s2[static_cast<size_t>(c)] += b2;
          }
        if (nb >= 0) {
          T* gbeta = t.grad_accum(nb, C).data();
          for (int64_t c = 0; c < C; ++c)
            gbeta[c] += static_cast<T>(s1[static_cast<size_t>(c)]);
        }
        if (ng >= 0) {
          T* ggamma = t.grad_accum(ng, C).data();
          for (int64_t c = 0; c < C; ++c)
            ggamma[c] += static_cast<T>(s2[static_cast<size_t>(c)]);
        }
        if (ni >= 0) {
          T* gi = t.grad_accum(ni, B * C * H * W).data();
          for (int64_t n = 0; n < B; ++n)
            for (int64_t c = 0; c < C; ++c) {
              const int64_t off = (n * C + c) * H * W;
              const double mu = (*mean)[static_cast<size_t>(c)];
              const double is = (*invstd)[static_cast<size_t>(c)];
              const double gc = gd[c];
              if (train) {
                const double m1 = s1[static_cast<size_t>(c)] / static_cast<double>(M);
                const double m2 = s2[static_cast<size_t>(c)] / static_cast<double>(M);
                for (int64_t i = 0; i < H * W; ++i) {
                  const double xh = (static_cast<double>(xd[off + i]) - mu) * is;
                  gi[off + i] += static_cast<T>(
                      gc * is * (static_cast<double>(go[off + i]) - m1 - xh * m2));
                }
              } else {
                for (int64_t i = 0; i < H * W; ++i)
                  gi[off + i] += static_cast<T>(gc * is * go[off + i]);
              }
            }
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
  Tensor<T> out(input.shape());
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input);
    if (ni >= 0) {
      const int no = tp->emit(out);
      auto x_sp = input.storage();
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        const T* xd = raw(x_sp);
        T* gi = t.grad_accum(ni, n).data();
        for (int64_t i = 0; i < n; ++i)
          gi[i] += go[i] * (xd[i] > T(0) ? T(1) : slope);
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) {
    // Branch on sign so the exponential never overflows.
    const T v = x[i];
    if (v >= T(0)) {
      const T e = std::exp(-v);
      y[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  if (auto* tp = GradientTape<T>::active()) {
    const int ni = tp->track(input);
    if (ni >= 0) {
      const int no = tp->emit(out);
      auto y_sp = out.storage();
      tp->record(no, [=](GradientTape<T>& t) {
        const T* go = t.grad(no).data();
        const T* yd = raw(y_sp);
        T* gi = t.grad_accum(ni, n).data();
        for (int64_t i = 0; i < n; ++i)
          gi[i] += go[i] * yd[i] * (T(1) - yd[i]);
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

namespace {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}
}  // namespace

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mse_loss");
  const int64_t n = pred.numel();
  require(n > 0, "mse_loss: empty tensors");
  const T* p = pred.data().data();
  const T* t = target.data().data();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    s += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
  if (auto* tp = GradientTape<T>::active()) {
    const int np = tp->track(pred), nt = tp->track(target);
    if (np >= 0 || nt >= 0) {
      const int no = tp->emit(out);
      auto p_sp = pred.storage();
      auto t_sp = target.storage();
      tp->record(no, [=](GradientTape<T>& tape) {
        const T go = tape.grad(no)[0];
        const T* pd = raw(p_sp);
        const T* td = raw(t_sp);
        const T scale = go * T(2) / static_cast<T>(n);
        if (np >= 0) {
          T* g = tape.grad_accum(np, n).data();
          for (int64_t i = 0; i < n; ++i) g[i] += scale * (pd[i] - td[i]);
        }
        if (nt >= 0) {
          T* g = tape.grad_accum(nt, n).data();
          for (int64_t i = 0; i < n; ++i) g[i] -= scale * (pd[i] - td[i]);
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "l1_loss");
  const int64_t n = pred.numel();
  require(n > 0, "l1_loss: empty tensors");
  const T* p = pred.data().data();
  const T* t = target.data().data();
  double s = 0;
  for (int64_t i = 0; i < n; ++i)
    s += std::abs(static_cast<double>(p[i]) - static_cast<double>(t[i]));
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
  if (auto* tp = GradientTape<T>::active()) {
    const int np = tp->track(pred);
    if (np >= 0) {
      const int no = tp->emit(out);
      auto p_sp = pred.storage();
      auto t_sp = target.storage();
      tp->record(no, [=](GradientTape<T>& tape) {
        const T go = tape.grad(no)[0];
        const T* pd = raw(p_sp);
        const T* td = raw(t_sp);
        const T scale = go / static_cast<T>(n);
        T* g = tape.grad_accum(np, n).data();
        for (int64_t i = 0; i < n; ++i) {
          const T d = pd[i] - td[i];
          // Subgradient 0 at equality.
          g[i] += d > T(0) ? scale : (d < T(0) ? -scale : T(0));
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target) {
  require_same_shape(prob, target, "bce_loss");
  const int64_t n = prob.numel();
  require(n > 0, "bce_loss: empty tensors");
  const T* p = prob.data().data();
  const T* t = target.data().data();
  for (int64_t i = 0; i < n; ++i)
    require(t[i] == T(0) || t[i] == T(1),
            "bce_loss: target entries must be exactly 0 or 1");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double pc = std::clamp(static_cast<double>(p[i]), lo, hi);
    s -= static_cast<double>(t[i]) * std::log(pc) +
         (1.0 - static_cast<double>(t[i])) * std::log(1.0 - pc);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
  if (auto* tp = GradientTape<T>::active()) {
    const int np = tp->track(prob);
    if (np >= 0) {
      const int no = tp->emit(out);
      auto p_sp = prob.storage();
      auto t_sp = target.storage();
      tp->record(no, [=](GradientTape<T>& tape) {
        const T go = tape.grad(no)[0];
        const T* pd = raw(p_sp);
        const T* td = raw(t_sp);
        T* g = tape.grad_accum(np, n).data();
        const double scale = static_cast<double>(go) / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
          const double pv = static_cast<double>(pd[i]);
          if (pv <= lo || pv >= hi) continue;  // clamp region: zero slope
          const double tv = static_cast<double>(td[i]);
          g[i] += static_cast<T>(scale * (-tv / pv + (1.0 - tv) / (1.0 - pv)));
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(const std::vector<T>& weights,
                       const std::vector<Tensor<T>>& terms) {
  require(weights.size() == terms.size(),
          "weighted_sum: weight/term count mismatch");
  require(!terms.empty(), "weighted_sum: no terms");
  double s = 0;
  for (size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].numel() == 1, "weighted_sum: terms must be scalars");
    s += static_cast<double>(weights[i]) * static_cast<double>(terms[i].item());
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  if (auto* tp = GradientTape<T>::active()) {
    std::vector<int> nodes(terms.size());
    bool any = false;
    for (size_t i = 0; i < terms.size(); ++i) {
      nodes[i] = tp->track(terms[i]);
      any = any || nodes[i] >= 0;
    }
    if (any) {
      const int no = tp->emit(out);
      auto w = weights;
      tp->record(no, [=](GradientTape<T>& tape) {
        const T go = tape.grad(no)[0];
        for (size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] < 0) continue;
          tape.grad_accum(nodes[i], 1)[0] += w[i] * go;
        }
      });
    }
  }
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss, GradientTape<T>& tape) {
  tape.backward(loss);
}

// ---------------------------------------------------------------------------

#define SNIDER_INSTANTIATE_OPS(T)                                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, const ConvGeom&);             \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, int, int);                    \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&,   \
                                         const Tensor<T>&, int);               \
  template Tensor<T> maxpool2x2<T>(const Tensor<T>&);                          \
  template Tensor<T> upsample_nearest2x<T>(const Tensor<T>&);                  \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int64_t, int64_t);    \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                             \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, Parameter<T>&,           \
                                    Parameter<T>&, BatchNormState<T>&, Mode);  \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                       \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                             \
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> weighted_sum<T>(const std::vector<T>&,                    \
                                     const std::vector<Tensor<T>>&);           \
  template void backward<T>(const Tensor<T>&, GradientTape<T>&);

SNIDER_INSTANTIATE_OPS(float)
SNIDER_INSTANTIATE_OPS(double)

#undef SNIDER_INSTANTIATE_OPS

}  // namespace snider
