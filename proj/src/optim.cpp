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

#include "snider/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace snider {

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig& cfg) {
  for (auto* p : params) {
    if (static_cast<int64_t>(p->grad().size()) != p->numel() ||
        static_cast<int64_t>(p->adam_m().size()) != p->numel()) {
      throw std::invalid_argument("adam_step: parameter '" + p->name() +
                                  "' has no gradient of matching size");
    }
  }
  for (auto* p : params) {
    p->bump_step_count();
    const auto t = static_cast<double>(p->step_count());
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto vals = p->value().mutable_data();
    auto& m = p->adam_m();
    auto& v = p->adam_v();
    const auto& g = p->grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) +
                        (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) +
                        (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      if (gi == 0.0 && mi == 0.0) continue;  // exact no-op on untouched entries
      vals[i] = static_cast<T>(static_cast<double>(vals[i]) -
                               cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template <typename T>
double clip_gradients(const std::vector<Parameter<T>*>& params, double max_norm) {
  if (max_norm <= 0) throw std::invalid_argument("clip_gradients: max_norm must be > 0");
  double sq = 0;
  for (auto* p : params)
    for (T g : p->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      for (T& g : p->grad()) g *= scale;
  }
  return norm;
}

template <typename T>
void zero_gradients(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

template void adam_step<float>(const std::vector<Parameter<float>*>&,
                               const AdamConfig&);
template void adam_step<double>(const std::vector<Parameter<double>*>&,
                                const AdamConfig&);
template double clip_gradients<float>(const std::vector<Parameter<float>*>&,
                                      double);
template double clip_gradients<double>(const std::vector<Parameter<double>*>&,
                                       double);
template void zero_gradients<float>(const std::vector<Parameter<float>*>&);
template void zero_gradients<double>(const std::vector<Parameter<double>*>&);

}  // namespace snider
