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

#ifndef SNIDER_TENSOR_HPP_
#define SNIDER_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace snider {

/// Dense N-dimensional array of real scalars in row-major order.
/// Images use the canonical batch x channels x height x width layout.
///
/// A tensor optionally participates in reverse-mode differentiation: while a
/// GradientTape is active, operations assign the tensor a node id on that
/// tape. Tensors that act as trainable leaves additionally carry a persistent
/// gradient buffer (see Parameter) into which backward() accumulates.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<T> values);

  static Tensor full(std::vector<int64_t> shape, T value);
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const;
  bool defined() const { return data_ != nullptr; }

  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  /// Mutable access. Only meaningful before the tensor enters a tape;
  /// tensors produced by operations are treated as immutable.
  std::span<T> mutable_data() { return {data_->data(), data_->size()}; }

  /// Value of a single-element tensor.
  T item() const;

  /// Shares the underlying buffer under a new shape with the same length.
  Tensor reshaped(std::vector<int64_t> shape) const;

  const std::shared_ptr<std::vector<T>>& storage() const { return data_; }

  // --- autodiff plumbing -------------------------------------------------
  bool is_leaf() const { return leaf_grad_ != nullptr; }
  const std::shared_ptr<std::vector<T>>& leaf_grad() const { return leaf_grad_; }
  void attach_leaf_grad(std::shared_ptr<std::vector<T>> grad) {
    leaf_grad_ = std::move(grad);
  }

 private:
  template <typename U>
  friend class GradientTape;

  std::vector<int64_t> shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> leaf_grad_;
  // Tape linkage, valid only while epoch_ matches the active tape's epoch.
  mutable int node_ = -1;
  mutable uint64_t epoch_ = 0;
};

/// Records the forward pass as an ordered list of operations so that
/// backward() can replay their adjoints in reverse. Recording happens through
/// the thread-local active tape; with no active tape, operations run in pure
/// evaluation mode and keep no history.
template <typename T>
class GradientTape {
 public:
  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  /// Tape active on this thread, or nullptr.
  static GradientTape* active();

  /// Node id for an input tensor: reuses the id assigned earlier in this
  /// pass, registers leaf tensors on first use, and returns -1 for plain
  /// constants (which need no gradient).
  int track(const Tensor<T>& t);

  /// Assigns a fresh node id to an operation output.
  int emit(const Tensor<T>& out);

  /// Registers the backward rule of the operation that produced `out_node`.
  /// Rules run in reverse recording order; each reads grad(out_node) and
  /// accumulates into its inputs via grad_accum().
  void record(int out_node, std::function<void(GradientTape&)> rule);

  bool has_grad(int node) const;
  const std::vector<T>& grad(int node) const;
  /// Gradient buffer for `node`, zero-initialized to `numel` on first use.
  std::vector<T>& grad_accum(int node, int64_t numel);

  /// Reverse pass from a scalar: seeds d(loss)/d(loss)=1, runs every recorded
  /// rule once in reverse order, then adds each reached leaf's gradient into
  /// its persistent buffer. Leaves the tape ready for reset().
  void backward(const Tensor<T>& loss);

  /// Drops recorded operations and gradients; starts a new recording epoch.
  void reset();

  uint64_t epoch() const { return epoch_; }
  size_t op_count() const { return ops_.size(); }

 private:
  struct OpRecord {
    int out_node;
    std::function<void(GradientTape&)> rule;
  };

  int new_node();

  std::vector<OpRecord> ops_;
  std::vector<std::vector<T>> grads_;
  // Leaf node -> persistent gradient buffer of the owning Parameter.
  std::vector<std::pair<int, std::shared_ptr<std::vector<T>>>> leaves_;
  int next_node_ = 0;
  uint64_t epoch_ = 1;
  GradientTape* prev_active_ = nullptr;
};

/// Activates a tape for the enclosing scope (single logical thread of
/// control per model, nesting allowed for independent sub-computations).
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradientTape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradientTape<T>* prev_;
};

/// A named trainable tensor with its persistent gradient and Adam state.
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> value);

  const std::string& name() const { return name_; }
  Tensor<T>& value() { return value_; }
  const Tensor<T>& value() const { return value_; }

  std::vector<T>& grad() { return *grad_; }
  const std::vector<T>& grad() const { return *grad_; }
  void zero_grad();

  std::vector<T>& adam_m() { return adam_m_; }
  std::vector<T>& adam_v() { return adam_v_; }
  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t n) { step_count_ = n; }
  void bump_step_count() { ++step_count_; }

  int64_t numel() const { return value_.numel(); }

 private:
  std::string name_;
  Tensor<T> value_;
  std::shared_ptr<std::vector<T>> grad_;
  std::vector<T> adam_m_, adam_v_;
  int64_t step_count_ = 0;
};

/// Throws std::invalid_argument with a "name: got SHAPE" style message.
[[noreturn]] void throw_shape_error(const std::string& what);
std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace snider

#endif  // SNIDER_TENSOR_HPP_
