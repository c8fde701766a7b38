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

#include "snider/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "snider/optim.hpp"

namespace snider {

namespace fs = std::filesystem;

std::vector<StageSpec> default_stage_schedule(int64_t max_iterations,
                                              double stage1_frac,
                                              double stage2_frac) {
  const int64_t s1 = static_cast<int64_t>(max_iterations * stage1_frac);
  const int64_t s2 = static_cast<int64_t>(max_iterations * (stage1_frac + stage2_frac));
  std::vector<StageSpec> stages(3);
  stages[0] = {"denoise", 0, s1, {true, false, false, false}};
  stages[1] = {"main", s1, s2, {true, true, false, false}};
  stages[2] = {"all", s2, max_iterations, {true, true, true, true}};
  return stages;
}

template <typename T>
Batch<T> make_batch(const std::vector<const TrainingSample*>& samples) {
  if (samples.empty())
    throw std::invalid_argument("make_batch: batch must not be empty");
  const int64_t b = static_cast<int64_t>(samples.size());
  const int h = samples[0]->i_lq.height, w = samples[0]->i_lq.width;
  Batch<T> out;
  out.i_lq = Tensor<T>({b, 3, h, w});
  out.i_hq = Tensor<T>({b, 3, h, w});
  out.i_hq_0 = Tensor<T>({b, 3, h, w});
  out.i_seg = Tensor<T>({b, 1, h, w});
  out.count = Tensor<T>({b, 1});
  const size_t plane = static_cast<size_t>(3) * h * w;
  for (int64_t i = 0; i < b; ++i) {
    const TrainingSample& s = *samples[static_cast<size_t>(i)];
    if (s.i_lq.height != h || s.i_lq.width != w)
      throw std::invalid_argument("make_batch: samples disagree on image size");
    for (size_t j = 0; j < plane; ++j) {
      out.i_lq.mutable_data()[i * plane + j] = static_cast<T>(s.i_lq.data[j]);
      out.i_hq.mutable_data()[i * plane + j] = static_cast<T>(s.i_hq.data[j]);
      out.i_hq_0.mutable_data()[i * plane + j] = static_cast<T>(s.i_hq_0.data[j]);
    }
    for (size_t j = 0; j < plane / 3; ++j)
      out.i_seg.mutable_data()[i * (plane / 3) + j] = static_cast<T>(s.i_seg.data[j]);
    out.count.mutable_data()[i] = static_cast<T>(s.count);
  }
  return out;
}

template <typename T>
LossResult<T> compute_losses(SniderModel<T>& model, const Batch<T>& batch,
                             const LossWeights& weights, Mode mode,
                             const LossTerms& active) {
  if (!batch.i_lq.defined() || batch.i_lq.dim(0) < 1)
    throw std::invalid_argument("compute_losses: empty batch");

  const bool need_rectify = active.gr || active.ds || active.dc;
  const bool need_fused = active.ds || active.dc;

  auto zero = Tensor<T>::scalar(T(0));
  Tensor<T> l_gd = zero, l_gr = zero, l_ds = zero, l_dc = zero;

  auto e_d = run_encoder(model.denoise.encoder, batch.i_lq, mode);
  auto denoised =
      run_decoder(model.denoise.decoder, e_d.bottleneck, e_d.skips, mode);
  if (active.gd) l_gd = mse_loss(denoised, batch.i_hq);

  if (need_rectify) {
    auto e_r = run_encoder(model.rectify.encoder, denoised, mode);
    if (active.gr) {
      auto rectified =
          run_decoder(model.rectify.decoder, e_r.bottleneck, e_r.skips, mode);
      l_gr = l1_loss(rectified, batch.i_hq_0);
    }
    if (need_fused) {
      auto fused = add(e_d.bottleneck, e_r.bottleneck);
      std::vector<Tensor<T>> fused_skips;
      for (size_t i = 0; i < e_d.skips.size(); ++i)
        fused_skips.push_back(add(e_d.skips[i], e_r.skips[i]));
      if (active.ds) {
        auto seg = run_decoder(model.segment_head, fused, fused_skips, mode);
        l_ds = bce_loss(seg, batch.i_seg);
      }
      if (active.dc) {
        Tensor<T> c = fused;
        for (auto& unit : model.count_head.units) {
          c = conv2d(c, unit.weight.value(), unit.bias.value(),
                     ConvGeom{unit.desc.stride, unit.pad_h, unit.pad_w});
          if (unit.desc.batch_norm)
            c = batchnorm2d(c, unit.bn_gamma, unit.bn_beta, unit.bn_state, mode);
          if (unit.desc.activation) c = leaky_relu(c);
        }
        l_dc = mse_loss(c.reshaped({c.dim(0), 1}), batch.count);
      }
    }
  }

  LossResult<T> out;
  out.total = weighted_sum<T>(
      {static_cast<T>(weights.lambda_gd), static_cast<T>(weights.lambda_gr),
       static_cast<T>(weights.lambda_ds), static_cast<T>(weights.lambda_dc)},
      {l_gd, l_gr, l_ds, l_dc});
  out.values.l_gd = static_cast<double>(l_gd.item());
  out.values.l_gr = static_cast<double>(l_gr.item());
  out.values.l_ds = static_cast<double>(l_ds.item());
  out.values.l_dc = static_cast<double>(l_dc.item());
  out.values.total = static_cast<double>(out.total.item());
  return out;
}

template <typename T>
LossBreakdown train_step(SniderModel<T>& model, GradientTape<T>& tape,
                         const Batch<T>& batch, const LossWeights& weights,
                         double lr, double clip_norm, const LossTerms& active) {
  // Snapshot running stats so an aborted step leaves no trace.
  auto states = model.bn_states();
  std::vector<std::vector<T>> saved;
  saved.reserve(states.size() * 2);
  for (auto& [name, st] : states) {
    saved.push_back(st->running_mean);
    saved.push_back(st->running_var);
  }

  LossBreakdown values;
  {
    TapeScope<T> scope(tape);
    auto loss = compute_losses(model, batch, weights, Mode::kTrain, active);
    values = loss.values;
    const bool finite =
        std::isfinite(values.total) && std::isfinite(values.l_gd) &&
        std::isfinite(values.l_gr) && std::isfinite(values.l_ds) &&
        std::isfinite(values.l_dc);
    if (!finite) {
      size_t k = 0;
      for (auto& [name, st] : states) {
        st->running_mean = saved[k++];
        st->running_var = saved[k++];
      }
      tape.reset();
      throw TrainingDiverged(
          "train_step: non-finite loss (total=" + std::to_string(values.total) +
          "); step aborted without mutating parameters");
    }
    backward(loss.total, tape);
  }
  auto params = model.parameters();
  values.grad_norm = clip_gradients(params, clip_norm);
  AdamConfig adam;
  adam.lr = lr;
  adam_step(params, adam);
  zero_gradients(params);
  tape.reset();
  return values;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "SNDR" | u32 version | u32 variant | u32 input_size |
// u64 iteration | u32 record_count | records. Record: u32 name_len | name |
// u32 rank | u64 dims[rank] | f32 payload. Little-endian throughout.

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32s(std::vector<uint8_t>& out, const float* p, size_t n) {
  const size_t base = out.size();
  out.resize(base + 4 * n);
  std::memcpy(out.data() + base, p, 4 * n);  // little-endian host
}

void put_record(std::vector<uint8_t>& out, const std::string& name,
                const std::vector<int64_t>& dims, const float* p, size_t n) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<uint32_t>(dims.size()));
  for (int64_t d : dims) put_u64(out, static_cast<uint64_t>(d));
  put_f32s(out, p, n);
}

struct ByteReader {
  const std::vector<uint8_t>& bytes;
  size_t off = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint parse error at offset " +
                             std::to_string(off) + ": " + what);
  }
  void need(size_t n, const char* what) const {
    if (off + n > bytes.size())
      throw std::runtime_error("checkpoint parse error at offset " +
                               std::to_string(off) + ": truncated " +
                               std::string(what));
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(bytes[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + off), n);
    off += n;
    return s;
  }
  void f32s(float* dst, size_t n, const char* what) {
    need(4 * n, what);
    std::memcpy(dst, bytes.data() + off, 4 * n);
    off += 4 * n;
  }
};

}  // namespace

std::vector<uint8_t> checkpoint_bytes(SniderModel<float>& model,
                                      int64_t iteration) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'S', 'N', 'D', 'R'});
  put_u32(out, kCheckpointVersion);
  put_u32(out, model.variant == NetworkVariant::kSnider ? 0u : 1u);
  put_u32(out, static_cast<uint32_t>(model.input_size));
  put_u64(out, static_cast<uint64_t>(iteration));

  auto params = model.parameters();
  auto states = model.bn_states();
  put_u32(out, static_cast<uint32_t>(params.size() * 4 + states.size() * 2));
  for (auto* p : params) {
    const auto& shape = p->value().shape();
    const size_t n = static_cast<size_t>(p->numel());
    put_record(out, p->name(), shape, p->value().data().data(), n);
    put_record(out, p->name() + ".adam_m", {static_cast<int64_t>(n)},
               p->adam_m().data(), n);
    put_record(out, p->name() + ".adam_v", {static_cast<int64_t>(n)},
               p->adam_v().data(), n);
    const float t = static_cast<float>(p->step_count());
    put_record(out, p->name() + ".adam_t", {1}, &t, 1);
  }
  for (auto& [name, st] : states) {
    put_record(out, name + ".mean",
               {static_cast<int64_t>(st->running_mean.size())},
               st->running_mean.data(), st->running_mean.size());
    put_record(out, name + ".var",
               {static_cast<int64_t>(st->running_var.size())},
               st->running_var.data(), st->running_var.size());
  }
  return out;
}

void save_checkpoint(SniderModel<float>& model, int64_t iteration,
                     const std::string& path) {
  auto bytes = checkpoint_bytes(model, iteration);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("save_checkpoint: short write to '" + path + "'");
}

LoadedCheckpoint load_checkpoint_bytes(const std::vector<uint8_t>& bytes,
                                       std::optional<NetworkVariant> expect) {
  ByteReader r{bytes};
  if (r.str(4, "magic") != "SNDR") {
    r.off = 0;
    r.fail("bad magic, not a snider checkpoint");
  }
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    r.off -= 4;
    r.fail("unsupported version " + std::to_string(version));
  }
  const uint32_t variant_tag = r.u32("variant");
  if (variant_tag > 1) {
    r.off -= 4;
    r.fail("unknown variant tag " + std::to_string(variant_tag));
  }
  const NetworkVariant variant =
      variant_tag == 0 ? NetworkVariant::kSnider : NetworkVariant::kSniderTiny;
  if (expect && *expect != variant)
    throw std::runtime_error("checkpoint variant mismatch: file holds " +
                             variant_name(variant) + ", expected " +
                             variant_name(*expect));
  const int input_size = static_cast<int>(r.u32("input size"));
  const int64_t iteration = static_cast<int64_t>(r.u64("iteration"));
  const uint32_t n_records = r.u32("record count");

  LoadedCheckpoint out{build_snider<float>(variant, input_size, 0), iteration};

  // Route records by name.
  std::map<std::string, Parameter<float>*> by_name;
  for (auto* p : out.model.parameters()) by_name[p->name()] = p;
  std::map<std::string, BatchNormState<float>*> bn_by_name;
  for (auto& [name, st] : out.model.bn_states()) bn_by_name[name] = st;

  std::set<std::string> seen;
  for (uint32_t i = 0; i < n_records; ++i) {
    const uint32_t name_len = r.u32("record name length");
    const std::string name = r.str(name_len, "record name");
    const uint32_t rank = r.u32("record rank");
    int64_t numel = 1;
    std::vector<int64_t> dims(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      dims[d] = static_cast<int64_t>(r.u64("record dims"));
      numel *= dims[d];
    }
    if (!seen.insert(name).second) r.fail("duplicate record '" + name + "'");

    auto expect_numel = [&](int64_t want) {
      if (numel != want)
        r.fail("record '" + name + "' holds " + std::to_string(numel) +
               " values, expected " + std::to_string(want));
    };
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() > s.size() &&
             name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    auto strip = [&](const char* suffix) {
      return name.substr(0, name.size() - std::strlen(suffix));
    };

    if (ends_with(".adam_m") && by_name.count(strip(".adam_m"))) {
      auto* p = by_name[strip(".adam_m")];
      expect_numel(p->numel());
      r.f32s(p->adam_m().data(), static_cast<size_t>(numel), "adam m payload");
    } else if (ends_with(".adam_v") && by_name.count(strip(".adam_v"))) {
      auto* p = by_name[strip(".adam_v")];
      expect_numel(p->numel());
      r.f32s(p->adam_v().data(), static_cast<size_t>(numel), "adam v payload");
    } else if (ends_with(".adam_t") && by_name.count(strip(".adam_t"))) {
      auto* p = by_name[strip(".adam_t")];
      expect_numel(1);
      float t = 0;
      r.f32s(&t, 1, "step count payload");
      p->set_step_count(static_cast<int64_t>(t));
    } else if (ends_with(".mean") && bn_by_name.count(strip(".mean"))) {
      auto* st = bn_by_name[strip(".mean")];
      expect_numel(static_cast<int64_t>(st->running_mean.size()));
      r.f32s(st->running_mean.data(), static_cast<size_t>(numel), "bn mean");
    } else if (ends_with(".var") && bn_by_name.count(strip(".var"))) {
      auto* st = bn_by_name[strip(".var")];
      expect_numel(static_cast<int64_t>(st->running_var.size()));
      r.f32s(st->running_var.data(), static_cast<size_t>(numel), "bn var");
    } else if (by_name.count(name)) {
      auto* p = by_name[name];
      expect_numel(p->numel());
      if (dims != p->value().shape())
        r.fail("record '" + name + "' shape does not match the architecture");
      r.f32s(p->value().mutable_data().data(), static_cast<size_t>(numel),
             "parameter payload");
    } else {
      r.fail("unknown record '" + name + "'");
    }
  }
  const size_t expected =
      out.model.parameters().size() * 4 + out.model.bn_states().size() * 2;
  if (seen.size() != expected) {
    r.fail("checkpoint incomplete: " + std::to_string(seen.size()) + " of " +
           std::to_string(expected) + " records present");
  }
  if (r.off != bytes.size()) r.fail("trailing bytes after final record");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<NetworkVariant> expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return load_checkpoint_bytes(bytes, expect);
}

uint64_t state_hash(SniderModel<float>& model) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto* p : model.parameters()) {
    mix(p->value().data().data(), static_cast<size_t>(p->numel()) * 4);
    mix(p->adam_m().data(), p->adam_m().size() * 4);
    mix(p->adam_v().data(), p->adam_v().size() * 4);
    const int64_t t = p->step_count();
    mix(&t, sizeof t);
  }
  for (auto& [name, st] : model.bn_states()) {
    mix(st->running_mean.data(), st->running_mean.size() * 4);
    mix(st->running_var.data(), st->running_var.size() * 4);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

const StageSpec& stage_at(const std::vector<StageSpec>& stages, int64_t iter) {
  for (const auto& s : stages)
    if (iter >= s.begin && iter < s.end) return s;
  return stages.back();
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::string& manifest_path) {
  if (config.out_dir.empty())
    throw std::invalid_argument("train: out_dir must be set");
  if (config.max_iterations < 0)
    throw std::invalid_argument("train: max_iterations must be >= 0");
  if (config.lr_final > config.lr_initial)
    throw std::invalid_argument("train: lr_final must not exceed lr_initial");

  Manifest manifest = read_manifest(manifest_path);
  if (manifest.records.empty())
    throw std::runtime_error("train: manifest '" + manifest_path +
                             "' holds no samples");
  if (manifest.size != config.input_size)
    throw std::runtime_error(
        "train: dataset size " + std::to_string(manifest.size) +
        " does not match configured input size " +
        std::to_string(config.input_size));
  const std::string data_dir = fs::path(manifest_path).parent_path().string();
  std::vector<TrainingSample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& rec : manifest.records)
    samples.push_back(load_sample(data_dir, rec));

  SniderModel<float> model;
  int64_t start_iter = 0;
  if (!config.resume.empty()) {
    auto loaded = load_checkpoint(config.resume, config.variant);
    if (loaded.model.input_size != config.input_size)
      throw std::runtime_error("train: resume checkpoint input size " +
                               std::to_string(loaded.model.input_size) +
                               " does not match config");
    model = std::move(loaded.model);
    start_iter = loaded.iteration;
  } else {
    model = build_snider<float>(config.variant, config.input_size, config.seed);
  }

  const auto stages =
      config.stages.empty()
          ? default_stage_schedule(config.max_iterations, config.stage1_frac,
                                   config.stage2_frac)
          : config.stages;

  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t batch = std::min<int64_t>(std::max(1, config.batch_size), n);
  const int64_t iters_per_epoch = std::max<int64_t>(1, n / batch);
  const int64_t lr_switch =
      config.lr_switch_iteration >= 0
          ? config.lr_switch_iteration
          : static_cast<int64_t>(config.lr_switch_epoch) * iters_per_epoch;

  fs::create_directories(config.out_dir);
  const std::string metrics_path =
      (fs::path(config.out_dir) / "metrics.csv").string();
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("train: cannot open '" + metrics_path + "'");
  metrics << "iter,stage,lr,l_gd,l_gr,l_ds,l_dc,total,grad_norm\n";

  GradientTape<float> tape;
  LossBreakdown last;
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  int64_t perm_epoch = -1;

  for (int64_t iter = start_iter; iter < config.max_iterations; ++iter) {
    const int64_t epoch = iter / iters_per_epoch;
    const int64_t within = iter % iters_per_epoch;
    if (epoch != perm_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(config.seed * 0x9e3779b97f4a7c15ULL + uint64_t(epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      perm_epoch = epoch;
    }
    std::vector<const TrainingSample*> picks;
    picks.reserve(static_cast<size_t>(batch));
    for (int64_t i = 0; i < batch; ++i)
      picks.push_back(&samples[static_cast<size_t>(perm[static_cast<size_t>(
          within * batch + i)])]);
    auto batch_t = make_batch<float>(picks);

    const StageSpec& stage = stage_at(stages, iter);
    const double lr = iter < lr_switch ? config.lr_initial : config.lr_final;
    last = train_step(model, tape, batch_t, config.weights, lr,
                      config.clip_norm, stage.active);

    size_t stage_idx = 0;
    for (size_t s = 0; s < stages.size(); ++s)
      if (&stages[s] == &stage) stage_idx = s + 1;
    metrics << (iter + 1) << "," << stage_idx << "," << format_g(lr) << ","
            << format_g(last.l_gd) << "," << format_g(last.l_gr) << ","
            << format_g(last.l_ds) << "," << format_g(last.l_dc) << ","
            << format_g(last.total) << "," << format_g(last.grad_norm) << "\n";

    if (config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0 &&
        iter + 1 < config.max_iterations) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%08lld.snck",
                    static_cast<long long>(iter + 1));
      save_checkpoint(model, iter + 1, (fs::path(config.out_dir) / name).string());
    }
  }
  metrics.close();

  const std::string final_path =
      (fs::path(config.out_dir) / "final.snck").string();
  save_checkpoint(model, config.max_iterations, final_path);

  TrainResult result;
  result.final_losses = last;
  result.iterations = config.max_iterations - start_iter;
  result.checkpoint_path = final_path;
  result.metrics_path = metrics_path;
  return result;
}

#define SNIDER_INSTANTIATE_TRAIN(T)                                            \
  template Batch<T> make_batch<T>(const std::vector<const TrainingSample*>&);  \
  template LossResult<T> compute_losses<T>(SniderModel<T>&, const Batch<T>&,   \
                                           const LossWeights&, Mode,           \
                                           const LossTerms&);                  \
  template LossBreakdown train_step<T>(SniderModel<T>&, GradientTape<T>&,      \
                                       const Batch<T>&, const LossWeights&,    \
                                       double, double, const LossTerms&);

SNIDER_INSTANTIATE_TRAIN(float)
SNIDER_INSTANTIATE_TRAIN(double)

#undef SNIDER_INSTANTIATE_TRAIN

}  // namespace snider
