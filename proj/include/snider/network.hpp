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

#ifndef SNIDER_NETWORK_HPP_
#define SNIDER_NETWORK_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "snider/ops.hpp"
#include "snider/tensor.hpp"

namespace snider {

enum class NetworkVariant { kSnider, kSniderTiny };

std::string variant_name(NetworkVariant v);
NetworkVariant variant_from_name(const std::string& name);

enum class LayerOp { kConv, kTConv, kPool, kUpsampleConcat };

/// One entry of an architecture plan.
struct LayerDesc {
  LayerOp op = LayerOp::kConv;
  int kernel = 3;          // 0 = full spatial extent (global convolution)
  int out_channels = 0;
  int stride = 1;          // conv stride, or the up factor of a kTConv
  bool batch_norm = true;
  bool activation = true;  // LeakyReLU
  bool sigmoid_out = false;
  int skip = -1;           // encoder stage concatenated by kUpsampleConcat
};

/// Architecture plans for one variant. The decoder plan is shared by the two
/// image heads and the segmentation head; only the head's output channel
/// count differs.
struct VariantSpec {
  NetworkVariant name;
  std::vector<LayerDesc> encoder;
  std::vector<LayerDesc> decoder;   // out_channels 0 in the final head layer
  std::vector<LayerDesc> counting;
  int downsample_factor = 1;        // spatial reduction at the bottleneck
  int bottleneck_channels = 0;
};

VariantSpec variant_spec(NetworkVariant v);

/// Convolution (or transposed convolution) with its normalization and
/// activation, as instantiated from one LayerDesc.
template <typename T>
struct ConvUnit {
  LayerDesc desc;
  AxisPad pad_h, pad_w;  // forward convolutions only
  Parameter<T> weight, bias;
  Parameter<T> bn_gamma, bn_beta;
  BatchNormState<T> bn_state;
};

/// A plan plus its instantiated units (one per kConv/kTConv entry).
template <typename T>
struct Net {
  std::vector<LayerDesc> plan;
  std::vector<ConvUnit<T>> units;
};

template <typename T>
struct MainNet {
  Net<T> encoder;
  Net<T> decoder;
};

/// Result of running an encoder: bottleneck feature plus the per-stage
/// pre-pooling features consumed by decoder skip connections.
template <typename T>
struct EncodeResult {
  Tensor<T> bottleneck;
  std::vector<Tensor<T>> skips;
};

/// The four sub-networks. The two image heads share an architecture but not
/// parameters; the auxiliary heads consume the elementwise sum of the two
/// encoders' features.
template <typename T>
struct SniderModel {
  NetworkVariant variant = NetworkVariant::kSniderTiny;
  int input_size = 0;
  MainNet<T> denoise;       // low-quality image -> clean image, same rotation
  MainNet<T> rectify;       // denoised image -> unrotated clean image
  Net<T> segment_head;      // fused feature -> 1-channel plate probability map
  Net<T> count_head;        // fused feature -> character count per item

  /// All trainable parameters in a fixed registration order.
  std::vector<Parameter<T>*> parameters();
  /// Named running batch-norm statistics, in registration order.
  std::vector<std::pair<std::string, BatchNormState<T>*>> bn_states();
  int64_t parameter_count();
};

/// Builds the variant with conv weights drawn from N(0, 0.01^2), zero biases,
/// and identity batch-norm affine terms. Deterministic in the seed.
template <typename T>
SniderModel<T> build_snider(NetworkVariant variant, int input_size,
                            uint64_t seed);

template <typename T>
EncodeResult<T> run_encoder(Net<T>& encoder, const Tensor<T>& x, Mode mode);

template <typename T>
Tensor<T> run_decoder(Net<T>& decoder, const Tensor<T>& bottleneck,
                      const std::vector<Tensor<T>>& skips, Mode mode);

template <typename T>
struct MainForward {
  Tensor<T> denoised;
  Tensor<T> rectified;
  Tensor<T> fused;                    // sum of the encoders' bottlenecks
  std::vector<Tensor<T>> fused_skips; // per-stage sums (empty for Tiny)
};

/// denoised = denoise(x); rectified = rectify(denoised); image outputs pass
/// through a final sigmoid so they live in [0,1].
template <typename T>
MainForward<T> forward_main(SniderModel<T>& model, const Tensor<T>& x, Mode mode);

template <typename T>
struct AuxForward {
  Tensor<T> segment;  // (B,1,H,W), values in (0,1)
  Tensor<T> count;    // (B,1), unbounded
};

template <typename T>
AuxForward<T> forward_aux(SniderModel<T>& model, const MainForward<T>& main,
                          Mode mode);

/// Test-time composition: rectify(denoise(x)) in eval mode, auxiliary heads
/// not invoked.
template <typename T>
Tensor<T> recover(SniderModel<T>& model, const Tensor<T>& x);

}  // namespace snider

#endif  // SNIDER_NETWORK_HPP_
