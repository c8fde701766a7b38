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

#ifndef SNIDER_THREADING_HPP_
#define SNIDER_THREADING_HPP_

#include <cstdint>
#include <functional>

namespace snider {

/// Worker count for parallel_for. Defaults to 1 so results are
/// bit-reproducible without any configuration.
void set_num_threads(int n);
int num_threads();

/// Runs fn(begin, end) over a partition of [0, n). Every index is owned by
/// exactly one chunk and chunk boundaries depend only on n and the thread
/// count, so outputs are identical for any worker count as long as chunks
/// write disjoint data and perform no cross-chunk reductions.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace snider

#endif  // SNIDER_THREADING_HPP_
