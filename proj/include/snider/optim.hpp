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

#ifndef SNIDER_OPTIM_HPP_
#define SNIDER_OPTIM_HPP_

#include <vector>

#include "snider/tensor.hpp"

namespace snider {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over all parameters. Gradients are read,
/// not cleared; each parameter's step count advances by one.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig& cfg);

/// Scales all gradients by max_norm/norm when their global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
template <typename T>
double clip_gradients(const std::vector<Parameter<T>*>& params, double max_norm);

template <typename T>
void zero_gradients(const std::vector<Parameter<T>*>& params);

}  // namespace snider

#endif  // SNIDER_OPTIM_HPP_
