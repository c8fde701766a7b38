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

#include "snider/network.hpp"

#include <random>
#include <stdexcept>

namespace snider {

std::string variant_name(NetworkVariant v) {
  return v == NetworkVariant::kSnider ? "snider" : "snider-tiny";
}

NetworkVariant variant_from_name(const std::string& name) {
  if (name == "snider" || name == "full") return NetworkVariant::kSnider;
  if (name == "snider-tiny" || name == "tiny") return NetworkVariant::kSniderTiny;
  throw std::invalid_argument("unknown network variant '" + name + "'");
}

namespace {

LayerDesc conv(int kernel, int channels, int stride = 1) {
  LayerDesc d;
  d.op = LayerOp::kConv;
  d.kernel = kernel;
  d.out_channels = channels;
  d.stride = stride;
  return d;
}

LayerDesc tconv(int kernel, int channels, int up) {
  LayerDesc d;
  d.op = LayerOp::kTConv;
  d.kernel = kernel;
  d.out_channels = channels;
  d.stride = up;
  return d;
}

LayerDesc pool() {
  LayerDesc d;
  d.op = LayerOp::kPool;
  return d;
}

LayerDesc upconcat(int skip) {
  LayerDesc d;
  d.op = LayerOp::kUpsampleConcat;
  d.skip = skip;
  return d;
}

LayerDesc head(LayerDesc d) {
  d.batch_norm = false;
  d.activation = false;
  d.sigmoid_out = true;
  return d;
}

}  // namespace

VariantSpec variant_spec(NetworkVariant v) {
  VariantSpec s;
  s.name = v;
  if (v == NetworkVariant::kSnider) {
    s.downsample_factor = 16;
    s.bottleneck_channels = 512;
    s.encoder = {conv(3, 32),  conv(3, 32),  pool(),
                 conv(3, 64),  conv(3, 64),  pool(),
                 conv(3, 128), conv(3, 128), pool(),
                 conv(3, 256), conv(3, 256), pool(),
                 conv(3, 512), conv(3, 512)};
    s.decoder = {upconcat(3), conv(3, 256), conv(3, 256),
                 upconcat(2), conv(3, 128), conv(3, 128),
                 upconcat(1), conv(3, 64),  conv(3, 64),
                 upconcat(0), conv(3, 32),  conv(3, 32),
                 head(conv(1, 0))};
    s.counting = {conv(0, 512), conv(1, 256), conv(1, 128), conv(1, 64)};
  } else {
    s.downsample_factor = 4;
    s.bottleneck_channels = 128;
    s.encoder = {conv(7, 32, 2), conv(7, 64, 2), conv(5, 128)};
    s.decoder = {conv(5, 64), tconv(7, 32, 2), head(tconv(7, 0, 2))};
    s.counting = {conv(0, 128), conv(1, 64)};
  }
  // The counting stack reduces to 1x1 spatial extent right away, where
  // train-mode batch statistics degenerate for small batches; it runs on
  // bias + LeakyReLU alone. The final layer is a bare linear read-out.
  for (auto& d : s.counting) d.batch_norm = false;
  LayerDesc last = conv(1, 1);
  last.batch_norm = false;
  last.activation = false;
  s.counting.push_back(last);
  return s;
}

namespace {

// Padding that preserves the extent for stride 1 and halves an even extent
// for stride 2 (SAME-style: total = kernel - stride, end-heavy when odd).
AxisPad same_pad(int kernel, int stride) {
  int total = kernel - stride;
  if (total < 0) total = 0;
  return {total / 2, total - total / 2};
}

struct InitState {
  std::mt19937_64 rng;
  std::normal_distribution<double> gauss{0.0, 0.01};
};

template <typename T>
ConvUnit<T> make_unit(const std::string& name, LayerDesc desc, int in_channels,
                      int spatial, InitState& init) {
  ConvUnit<T> u;
  u.desc = desc;
  const bool global = desc.kernel == 0;  // full-extent kernel, reduces to 1x1
  int k = global ? spatial : desc.kernel;
  u.desc.kernel = k;
  std::vector<int64_t> wshape =
      desc.op == LayerOp::kTConv
          ? std::vector<int64_t>{in_channels, desc.out_channels, k, k}
          : std::vector<int64_t>{desc.out_channels, in_channels, k, k};
  Tensor<T> w(wshape);
  for (T& x : w.mutable_data()) x = static_cast<T>(init.gauss(init.rng));
  u.weight = Parameter<T>(name + ".weight", std::move(w));
  u.bias = Parameter<T>(name + ".bias", Tensor<T>({desc.out_channels}));
  if (desc.op == LayerOp::kConv) {
    u.pad_h = global ? AxisPad{0, 0} : same_pad(k, desc.stride);
    u.pad_w = u.pad_h;
  }
  if (desc.batch_norm) {
    u.bn_gamma = Parameter<T>(name + ".bn.gamma",
                              Tensor<T>::full({desc.out_channels}, T(1)));
    u.bn_beta = Parameter<T>(name + ".bn.beta", Tensor<T>({desc.out_channels}));
    u.bn_state.reset(desc.out_channels);
  }
  return u;
}

// Channel count of each encoder skip (the feature concatenated by upconcat i).
std::vector<int> encoder_skip_channels(const std::vector<LayerDesc>& enc) {
  std::vector<int> skips;
  int cur = 3;
  for (const auto& d : enc) {
    if (d.op == LayerOp::kPool)
      skips.push_back(cur);
    else
      cur = d.out_channels;
  }
  return skips;
}

template <typename T>
Net<T> make_net(const std::string& name, std::vector<LayerDesc> plan,
                int in_channels, int out_channels,
                const std::vector<int>& skip_channels, int spatial,
                InitState& init) {
  Net<T> net;
  net.plan = std::move(plan);
  int cur = in_channels;
  int idx = 0;
  for (auto& d : net.plan) {
    switch (d.op) {
      case LayerOp::kPool:
        break;
      case LayerOp::kUpsampleConcat:
        cur += skip_channels.at(static_cast<size_t>(d.skip));
        break;
      case LayerOp::kConv:
      case LayerOp::kTConv: {
        if (d.out_channels == 0) d.out_channels = out_channels;  // head layer
        net.units.push_back(make_unit<T>(name + ".c" + std::to_string(idx), d,
                                         cur, spatial, init));
        cur = d.out_channels;
        ++idx;
        break;
      }
    }
  }
  return net;
}

template <typename T>
Tensor<T> run_unit(ConvUnit<T>& u, const Tensor<T>& x, Mode mode) {
  Tensor<T> y;
  if (u.desc.op == LayerOp::kTConv) {
    y = conv_transpose2d(x, u.weight.value(), u.bias.value(), u.desc.stride);
  } else {
    y = conv2d(x, u.weight.value(), u.bias.value(),
               ConvGeom{u.desc.stride, u.pad_h, u.pad_w});
  }
  if (u.desc.batch_norm) y = batchnorm2d(y, u.bn_gamma, u.bn_beta, u.bn_state, mode);
  if (u.desc.activation) y = leaky_relu(y);
  if (u.desc.sigmoid_out) y = sigmoid(y);
  return y;
}

template <typename T>
void collect(Net<T>& net, std::vector<Parameter<T>*>& out) {
  for (auto& u : net.units) {
    out.push_back(&u.weight);
    out.push_back(&u.bias);
    if (u.desc.batch_norm) {
      out.push_back(&u.bn_gamma);
      out.push_back(&u.bn_beta);
    }
  }
}

template <typename T>
void collect_bn(Net<T>& net, const std::string& name,
                std::vector<std::pair<std::string, BatchNormState<T>*>>& out) {
  int idx = 0;
  for (auto& u : net.units) {
    if (u.desc.batch_norm)
      out.emplace_back(name + ".c" + std::to_string(idx) + ".bn", &u.bn_state);
    ++idx;
  }
}

}  // namespace

template <typename T>
std::vector<Parameter<T>*> SniderModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  collect(denoise.encoder, out);
  collect(denoise.decoder, out);
  collect(rectify.encoder, out);
  collect(rectify.decoder, out);
  collect(segment_head, out);
  collect(count_head, out);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, BatchNormState<T>*>>
SniderModel<T>::bn_states() {
  std::vector<std::pair<std::string, BatchNormState<T>*>> out;
  collect_bn(denoise.encoder, "denoise.enc", out);
  collect_bn(denoise.decoder, "denoise.dec", out);
  collect_bn(rectify.encoder, "rectify.enc", out);
  collect_bn(rectify.decoder, "rectify.dec", out);
  collect_bn(segment_head, "segment", out);
  collect_bn(count_head, "count", out);
  return out;
}

template <typename T>
int64_t SniderModel<T>::parameter_count() {
  int64_t n = 0;
  for (auto* p : parameters()) n += p->numel();
  return n;
}

template <typename T>
SniderModel<T> build_snider(NetworkVariant variant, int input_size,
                            uint64_t seed) {
  VariantSpec spec = variant_spec(variant);
  if (input_size <= 0 || input_size % spec.downsample_factor != 0) {
    throw std::invalid_argument(
        "build_snider: input size " + std::to_string(input_size) +
        " must be a positive multiple of " +
        std::to_string(spec.downsample_factor) + " for " +
        variant_name(variant));
  }
  const int bottleneck_extent = input_size / spec.downsample_factor;
  const auto skips = encoder_skip_channels(spec.encoder);

  SniderModel<T> m;
  m.variant = variant;
  m.input_size = input_size;
  InitState init{std::mt19937_64(seed)};
  m.denoise.encoder = make_net<T>("denoise.enc", spec.encoder, 3, 3, skips,
                                  bottleneck_extent, init);
  m.denoise.decoder = make_net<T>("denoise.dec", spec.decoder,
                                  spec.bottleneck_channels, 3, skips,
                                  bottleneck_extent, init);
  m.rectify.encoder = make_net<T>("rectify.enc", spec.encoder, 3, 3, skips,
                                  bottleneck_extent, init);
  m.rectify.decoder = make_net<T>("rectify.dec", spec.decoder,
                                  spec.bottleneck_channels, 3, skips,
                                  bottleneck_extent, init);
  m.segment_head = make_net<T>("segment", spec.decoder, spec.bottleneck_channels,
                               1, skips, bottleneck_extent, init);
  m.count_head = make_net<T>("count", spec.counting, spec.bottleneck_channels, 1,
                             skips, bottleneck_extent, init);
  return m;
}

template <typename T>
EncodeResult<T> run_encoder(Net<T>& encoder, const Tensor<T>& x, Mode mode) {
  EncodeResult<T> r;
  Tensor<T> cur = x;
  size_t unit = 0;
  for (const auto& d : encoder.plan) {
    if (d.op == LayerOp::kPool) {
      r.skips.push_back(cur);  // pre-pooling feature feeds the skip path
      cur = maxpool2x2(cur);
    } else {
      cur = run_unit(encoder.units[unit++], cur, mode);
    }
  }
  r.bottleneck = cur;
  return r;
}

template <typename T>
Tensor<T> run_decoder(Net<T>& decoder, const Tensor<T>& bottleneck,
                      const std::vector<Tensor<T>>& skips, Mode mode) {
  Tensor<T> cur = bottleneck;
  size_t unit = 0;
  for (const auto& d : decoder.plan) {
    if (d.op == LayerOp::kUpsampleConcat) {
      cur = upsample_nearest2x(cur);
      cur = concat_channels(cur, skips.at(static_cast<size_t>(d.skip)));
    } else {
      cur = run_unit(decoder.units[unit++], cur, mode);
    }
  }
  return cur;
}

template <typename T>
MainForward<T> forward_main(SniderModel<T>& model, const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != model.input_size ||
      x.dim(3) != model.input_size) {
    throw_shape_error("forward_main: expected (B,3," +
                      std::to_string(model.input_size) + "," +
                      std::to_string(model.input_size) + "), got " +
                      shape_str(x.shape()));
  }
  MainForward<T> out;
  auto e_d = run_encoder(model.denoise.encoder, x, mode);
  out.denoised = run_decoder(model.denoise.decoder, e_d.bottleneck, e_d.skips, mode);
  auto e_r = run_encoder(model.rectify.encoder, out.denoised, mode);
  out.rectified = run_decoder(model.rectify.decoder, e_r.bottleneck, e_r.skips, mode);
  out.fused = add(e_d.bottleneck, e_r.bottleneck);
  out.fused_skips.reserve(e_d.skips.size());
  for (size_t i = 0; i < e_d.skips.size(); ++i)
    out.fused_skips.push_back(add(e_d.skips[i], e_r.skips[i]));
  return out;
}

template <typename T>
AuxForward<T> forward_aux(SniderModel<T>& model, const MainForward<T>& main,
                          Mode mode) {
  if (!main.fused.defined() || main.fused.rank() != 4 ||
      main.fused.dim(1) != variant_spec(model.variant).bottleneck_channels) {
    throw_shape_error("forward_aux: fused feature has unexpected shape " +
                      shape_str(main.fused.shape()));
  }
  AuxForward<T> out;
  out.segment = run_decoder(model.segment_head, main.fused, main.fused_skips, mode);
  Tensor<T> c = main.fused;
  size_t unit = 0;
  for (const auto& d : model.count_head.plan) {
    (void)d;
    c = run_unit(model.count_head.units[unit++], c, mode);
  }
  out.count = c.reshaped({c.dim(0), 1});
  return out;
}

template <typename T>
Tensor<T> recover(SniderModel<T>& model, const Tensor<T>& x) {
  auto e_d = run_encoder(model.denoise.encoder, x, Mode::kEval);
  auto den = run_decoder(model.denoise.decoder, e_d.bottleneck, e_d.skips,
                         Mode::kEval);
  auto e_r = run_encoder(model.rectify.encoder, den, Mode::kEval);
  return run_decoder(model.rectify.decoder, e_r.bottleneck, e_r.skips,
                     Mode::kEval);
}

#define SNIDER_INSTANTIATE_NET(T)                                              \
  template struct SniderModel<T>;                                              \
  template SniderModel<T> build_snider<T>(NetworkVariant, int, uint64_t);      \
  template EncodeResult<T> run_encoder<T>(Net<T>&, const Tensor<T>&, Mode);    \
  template Tensor<T> run_decoder<T>(Net<T>&, const Tensor<T>&,                 \
                                    const std::vector<Tensor<T>>&, Mode);      \
  template MainForward<T> forward_main<T>(SniderModel<T>&, const Tensor<T>&,   \
                                          Mode);                               \
  template AuxForward<T> forward_aux<T>(SniderModel<T>&,                       \
                                        const MainForward<T>&, Mode);          \
  template Tensor<T> recover<T>(SniderModel<T>&, const Tensor<T>&);

SNIDER_INSTANTIATE_NET(float)
SNIDER_INSTANTIATE_NET(double)

#undef SNIDER_INSTANTIATE_NET

}  // namespace snider
