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

#ifndef SNIDER_TRAINING_HPP_
#define SNIDER_TRAINING_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "snider/data_synthesis.hpp"
#include "snider/network.hpp"
#include "snider/ops.hpp"
#include "snider/tensor.hpp"

namespace snider {

struct LossWeights {
  double lambda_gd = 0.4;
  double lambda_gr = 0.4;
  double lambda_ds = 0.15;
  double lambda_dc = 0.05;
};

/// The four loss components and their weighted total. Components that were
/// inactive in the current stage are reported as zero.
struct LossBreakdown {
  double l_gd = 0;   // denoising MSE
  double l_gr = 0;   // rectification L1
  double l_ds = 0;   // segmentation BCE
  double l_dc = 0;   // counting squared error
  double total = 0;
  double grad_norm = 0;  // pre-clip norm, filled by train_step
};

struct LossTerms {
  bool gd = true, gr = true, ds = true, dc = true;
};

struct StageSpec {
  std::string name;
  int64_t begin = 0, end = 0;  // iteration span [begin, end)
  LossTerms active;
};

/// Three-stage curriculum: denoising alone, both image heads, then all four
/// terms. Fractions give the first two spans; the rest is the final stage.
std::vector<StageSpec> default_stage_schedule(int64_t max_iterations,
                                              double stage1_frac = 0.2,
                                              double stage2_frac = 0.3);

struct TrainConfig {
  NetworkVariant variant = NetworkVariant::kSniderTiny;
  int input_size = 64;
  int batch_size = 16;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  int lr_switch_epoch = 100;         // dataset passes until the rate drops
  int64_t lr_switch_iteration = -1;  // takes precedence when >= 0
  int64_t max_iterations = 0;
  double clip_norm = 5.0;
  uint64_t seed = 0;
  LossWeights weights;
  double stage1_frac = 0.2, stage2_frac = 0.3;
  std::vector<StageSpec> stages;  // empty: default_stage_schedule
  int64_t checkpoint_every = 0;   // 0: final checkpoint only
  std::string out_dir;
  std::string resume;  // checkpoint to continue from
};

template <typename T>
struct Batch {
  Tensor<T> i_lq, i_hq, i_hq_0, i_seg, count;
};

template <typename T>
Batch<T> make_batch(const std::vector<const TrainingSample*>& samples);

template <typename T>
struct LossResult {
  LossBreakdown values;
  Tensor<T> total;  // scalar on the active tape
};

/// Runs the forward passes required by the active terms and forms the
/// weighted total. The rectification target is the unrotated clean plate.
template <typename T>
LossResult<T> compute_losses(SniderModel<T>& model, const Batch<T>& batch,
                             const LossWeights& weights, Mode mode,
                             const LossTerms& active = {});

/// Signals a non-finite loss; the step it interrupted mutated nothing.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Forward, backward, gradient clip, Adam update, gradient reset. Returns the
/// pre-step losses with the pre-clip gradient norm.
template <typename T>
LossBreakdown train_step(SniderModel<T>& model, GradientTape<T>& tape,
                         const Batch<T>& batch, const LossWeights& weights,
                         double lr, double clip_norm,
                         const LossTerms& active = {});

struct TrainResult {
  LossBreakdown final_losses;
  int64_t iterations = 0;
  std::string checkpoint_path;
  std::string metrics_path;
};

/// Full staged run over a dataset manifest. Writes per-iteration metrics CSV
/// (header iter,stage,lr,l_gd,l_gr,l_ds,l_dc,total,grad_norm) and periodic
/// plus final checkpoints under config.out_dir.
TrainResult train(const TrainConfig& config, const std::string& manifest_path);

// --- checkpointing ---------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

std::vector<uint8_t> checkpoint_bytes(SniderModel<float>& model,
                                      int64_t iteration);
void save_checkpoint(SniderModel<float>& model, int64_t iteration,
                     const std::string& path);

struct LoadedCheckpoint {
  SniderModel<float> model;
  int64_t iteration = 0;
};

/// Parses and validates a checkpoint; malformed input raises a parse error
/// naming the byte offset. When `expect` is set, a checkpoint of any other
/// variant is rejected.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<NetworkVariant> expect = {});
LoadedCheckpoint load_checkpoint_bytes(const std::vector<uint8_t>& bytes,
                                       std::optional<NetworkVariant> expect = {});

/// Order-sensitive FNV-1a hash over parameters, optimizer state and running
/// statistics; two models with equal state hash equal.
uint64_t state_hash(SniderModel<float>& model);

}  // namespace snider

#endif  // SNIDER_TRAINING_HPP_
