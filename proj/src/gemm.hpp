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
// Small blocked matrix kernels backing the convolution path. Row-major,
// accumulate-into-C semantics, written so the inner loops autovectorize.

#ifndef SNIDER_SRC_GEMM_HPP_
#define SNIDER_SRC_GEMM_HPP_

#include <algorithm>
#include <cstdint>

namespace snider::detail {

// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_accum(int64_t M, int64_t N, int64_t K, const T* __restrict__ A,
                const T* __restrict__ B, T* __restrict__ C) {
  constexpr int64_t MR = 4;
  constexpr int64_t NR = 48;
  for (int64_t j0 = 0; j0 < N; j0 += NR) {
    const int64_t nr = std::min(NR, N - j0);
    for (int64_t i0 = 0; i0 < M; i0 += MR) {
      const int64_t mr = std::min(MR, M - i0);
      if (mr == MR && nr == NR) {
        T acc[MR][NR];
        for (int64_t m = 0; m < MR; ++m)
          for (int64_t j = 0; j < NR; ++j) acc[m][j] = C[(i0 + m) * N + j0 + j];
        for (int64_t k = 0; k < K; ++k) {
          const T* __restrict__ brow = B + k * N + j0;
          for (int64_t m = 0; m < MR; ++m) {
            const T a = A[(i0 + m) * K + k];
            for (int64_t j = 0; j < NR; ++j) acc[m][j] += a * brow[j];
          }
        }
        for (int64_t m = 0; m < MR; ++m)
          for (int64_t j = 0; j < NR; ++j) C[(i0 + m) * N + j0 + j] = acc[m][j];
      } else {
        for (int64_t m = 0; m < mr; ++m) {
          T* __restrict__ crow = C + (i0 + m) * N + j0;
          for (int64_t k = 0; k < K; ++k) {
            const T a = A[(i0 + m) * K + k];
            const T* __restrict__ brow = B + k * N + j0;
            for (int64_t j = 0; j < nr; ++j) crow[j] += a * brow[j];
          }
        }
      }
    }
  }
}

// C[M x N] += A[M x K] * B^T, with B stored as [N x K]. The dot products
// run over fixed lane-split partial sums so the compiler can vectorize the
// reduction without reassociating it; the combine order never varies.
template <typename T>
void gemm_accum_nt(int64_t M, int64_t N, int64_t K, const T* __restrict__ A,
                   const T* __restrict__ B, T* __restrict__ C) {
  constexpr int64_t L = 16;
  constexpr int64_t MB = 8;  // rows sharing one pass over B
  for (int64_t m0 = 0; m0 < M; m0 += MB) {
    const int64_t mb = std::min(MB, M - m0);
    for (int64_t n = 0; n < N; ++n) {
      const T* __restrict__ brow = B + n * K;
      if (mb == MB) {
        T lanes[MB][L] = {};
        int64_t k = 0;
        for (; k + L <= K; k += L)
          for (int64_t m = 0; m < MB; ++m)
            for (int64_t l = 0; l < L; ++l)
              lanes[m][l] += A[(m0 + m) * K + k + l] * brow[k + l];
        for (int64_t m = 0; m < MB; ++m) {
          T s(0);
          for (int64_t l = 0; l < L; ++l) s += lanes[m][l];
          for (int64_t kt = k; kt < K; ++kt)
            s += A[(m0 + m) * K + kt] * brow[kt];
          C[(m0 + m) * N + n] += s;
        }
      } else {
        for (int64_t m = 0; m < mb; ++m) {
          const T* __restrict__ arow = A + (m0 + m) * K;
          T lanes[L] = {};
          int64_t k = 0;
          for (; k + L <= K; k += L)
            for (int64_t l = 0; l < L; ++l) lanes[l] += arow[k + l] * brow[k + l];
          T s(0);
          for (int64_t l = 0; l < L; ++l) s += lanes[l];
          for (; k < K; ++k) s += arow[k] * brow[k];
          C[(m0 + m) * N + n] += s;
        }
      }
    }
  }
}

// dst[N x M] = src[M x N]
template <typename T>
void transpose(int64_t M, int64_t N, const T* __restrict__ src,
               T* __restrict__ dst) {
  constexpr int64_t BS = 32;
  for (int64_t i0 = 0; i0 < M; i0 += BS)
    for (int64_t j0 = 0; j0 < N; j0 += BS) {
      const int64_t ie = std::min(M, i0 + BS), je = std::min(N, j0 + BS);
      for (int64_t i = i0; i < ie; ++i)
        for (int64_t j = j0; j < je; ++j) dst[j * M + i] = src[i * N + j];
    }
}

}  // namespace snider::detail

#endif  // SNIDER_SRC_GEMM_HPP_
