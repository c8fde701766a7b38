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

#include "snider/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "snider/training.hpp"

namespace snider {

GradCheckReport gradcheck_tiny(int input_size, uint64_t seed,
                               int entries_per_param, double h,
                               double tolerance) {
  auto model = build_snider<double>(NetworkVariant::kSniderTiny, input_size, seed);

  // Random batch of two items; image content is irrelevant for soundness.
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int64_t b = 2, s = input_size;
  Batch<double> batch;
  batch.i_lq = Tensor<double>({b, 3, s, s});
  batch.i_hq = Tensor<double>({b, 3, s, s});
  batch.i_hq_0 = Tensor<double>({b, 3, s, s});
  batch.i_seg = Tensor<double>({b, 1, s, s});
  batch.count = Tensor<double>({b, 1});
  for (auto& v : batch.i_lq.mutable_data()) v = u(rng);
  for (auto& v : batch.i_hq.mutable_data()) v = u(rng);
  for (auto& v : batch.i_hq_0.mutable_data()) v = u(rng);
  for (auto& v : batch.i_seg.mutable_data()) v = (rng() & 1) ? 1.0 : 0.0;
  for (auto& v : batch.count.mutable_data()) v = 4.0 + double(rng() % 5);

  const LossWeights weights;
  auto loss_value = [&] {
    return compute_losses(model, batch, weights, Mode::kTrain).values.total;
  };

  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto res = compute_losses(model, batch, weights, Mode::kTrain);
    backward(res.total, tape);
  }
  tape.reset();

  GradCheckReport report;
  for (auto* p : params) {
    ++report.params_checked;
    const int64_t n = p->numel();
    std::vector<int64_t> picks;
    if (n <= entries_per_param) {
      picks.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) picks[static_cast<size_t>(i)] = i;
    } else {
      std::uniform_int_distribution<int64_t> pick(0, n - 1);
      while (static_cast<int>(picks.size()) < entries_per_param) {
        int64_t i = pick(rng);
        if (std::find(picks.begin(), picks.end(), i) == picks.end())
          picks.push_back(i);
      }
    }
    auto vals = p->value().mutable_data();
    for (int64_t i : picks) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = loss_value();
      vals[i] = saved - h;
      const double down = loss_value();
      vals[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double ad = p->grad()[static_cast<size_t>(i)];
      const double rel =
          std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-3});
      ++report.entries_checked;
      GradCheckEntry e{p->name(), i, ad, fd, rel};
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst = e;
      }
      if (rel > tolerance) report.failures.push_back(e);
    }
  }
  return report;
}

}  // namespace snider
