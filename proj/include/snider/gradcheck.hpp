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

#ifndef SNIDER_GRADCHECK_HPP_
#define SNIDER_GRADCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace snider {

struct GradCheckEntry {
  std::string param;
  int64_t index = 0;
  double analytic = 0, numeric = 0, rel = 0;
};

struct GradCheckReport {
  double max_rel = 0;
  int64_t entries_checked = 0;
  int64_t params_checked = 0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> failures;  // entries above the tolerance
};

/// Finite-difference check of the weighted total loss on a seeded tiny model
/// in 64-bit mode: every parameter tensor is probed at up to
/// `entries_per_param` seeded entry positions against central differences
/// with step `h`. The step is small enough that perturbations stay on one
/// side of the LeakyReLU kinks a deep pass crosses at larger steps. The
/// relative error uses a unit-scale denominator floor so near-zero gradients
/// compare absolutely.
GradCheckReport gradcheck_tiny(int input_size, uint64_t seed,
                               int entries_per_param = 8, double h = 1e-5,
                               double tolerance = 1e-3);

}  // namespace snider

#endif  // SNIDER_GRADCHECK_HPP_
