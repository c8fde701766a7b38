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

#ifndef SNIDER_OPS_HPP_
#define SNIDER_OPS_HPP_

#include <vector>

#include "snider/tensor.hpp"

namespace snider {

/// Padding of one spatial axis; begin and end may differ (SAME-style layers
/// with even extents and odd kernels need the asymmetric form).
struct AxisPad {
  int begin = 0;
  int end = 0;
};

struct ConvGeom {
  int stride = 1;
  AxisPad pad_h, pad_w;
};

/// Cross-correlation of a BxCxHxW input with an OxCxKhxKw kernel plus a
/// per-output-channel bias. Output spatial dims must divide exactly:
/// H' = (H + pad.begin + pad.end - Kh)/stride + 1, and likewise for W.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, const ConvGeom& geom);

/// Symmetric-padding convenience form.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding);

/// Transposed convolution that enlarges spatial dims by exactly `up_factor`.
/// Kernel layout is CxOxKhxKw (input channels first). The gradient of the
/// output w.r.t. the input is the corresponding forward convolution with the
/// same kernel.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel,
                           const Tensor<T>& bias, int up_factor);

/// 2x2 max pooling with stride 2; requires even H and W. The backward pass
/// routes gradient to the first maximal element of each block in row-major
/// scan order.
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input);

/// Duplicates every pixel into a 2x2 block: (B,C,H,W) -> (B,C,2H,2W).
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input);

/// Concatenates along the channel axis; a's channels come first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Channel range [from, to) of a BxCxHxW tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int64_t from, int64_t to);

/// Elementwise sum of two tensors of identical shape.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Sum over all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& input);

/// Running batch-norm statistics of one layer (per-channel mean/variance).
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormState(int64_t channels = 0) { reset(channels); }
  void reset(int64_t channels) {
    running_mean.assign(static_cast<size_t>(channels), T(0));
    running_var.assign(static_cast<size_t>(channels), T(1));
  }
};

enum class Mode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Per-channel normalization over batch and spatial dims (epsilon 1e-5).
/// Train mode uses batch statistics and folds them into the running stats
/// with momentum 0.9; eval mode applies the running stats. Train mode
/// requires batch*H*W >= 2 per channel.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, Parameter<T>& gamma,
                      Parameter<T>& beta, BatchNormState<T>& state, Mode mode);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope = T(0.2));

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

/// Mean over all elements of the squared difference.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean absolute difference; subgradient 0 where pred == target.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean binary cross-entropy -[t log p + (1-t) log(1-p)] with probabilities
/// clamped to [1e-7, 1-1e-7]. Targets must be exactly 0 or 1.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target);

/// Fixed-order weighted sum of scalar tensors: sum_i weights[i]*terms[i].
template <typename T>
Tensor<T> weighted_sum(const std::vector<T>& weights,
                       const std::vector<Tensor<T>>& terms);

/// Reverse pass: populates the gradient of every parameter reachable from
/// `loss`; unreachable parameters keep their gradients untouched.
template <typename T>
void backward(const Tensor<T>& loss, GradientTape<T>& tape);

}  // namespace snider

#endif  // SNIDER_OPS_HPP_
