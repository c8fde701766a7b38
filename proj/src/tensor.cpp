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

#include "snider/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace snider {

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void throw_shape_error(const std::string& what) {
  throw std::invalid_argument(what);
}

namespace {
int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw_shape_error("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}

template <typename T>
Tensor<T>::Tensor(std::vector<int64_t> shape, std::vector<T> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<T>>(std::move(values))) {
  if (static_cast<int64_t>(data_->size()) != shape_numel(shape_)) {
    throw_shape_error("tensor data length " + std::to_string(data_->size()) +
                      " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<int64_t> shape, T value) {
  Tensor t(std::move(shape));
  for (T& x : *t.data_) x = value;
  return t;
}

template <typename T>
int64_t Tensor<T>::numel() const {
  return data_ ? static_cast<int64_t>(data_->size()) : 0;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw_shape_error("item() requires a single-element tensor, got shape " +
                      shape_str(shape_));
  }
  return (*data_)[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(std::vector<int64_t> shape) const {
  if (shape_numel(shape) != numel()) {
    throw_shape_error("reshape from " + shape_str(shape_) + " to " +
                      shape_str(shape) + " changes element count");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  t.leaf_grad_ = leaf_grad_;
  t.node_ = node_;
  t.epoch_ = epoch_;
  return t;
}

// ---------------------------------------------------------------------------
// GradientTape

namespace {
template <typename T>
GradientTape<T>*& active_tape_slot() {
  thread_local GradientTape<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
GradientTape<T>::GradientTape() = default;

template <typename T>
GradientTape<T>::~GradientTape() {
  if (active_tape_slot<T>() == this) active_tape_slot<T>() = nullptr;
}

template <typename T>
GradientTape<T>* GradientTape<T>::active() {
  return active_tape_slot<T>();
}

template <typename T>
int GradientTape<T>::new_node() {
  grads_.emplace_back();
  return next_node_++;
}

template <typename T>
int GradientTape<T>::track(const Tensor<T>& t) {
  if (t.epoch_ == epoch_ && t.node_ >= 0) return t.node_;
  if (!t.is_leaf()) return -1;  // constant: no gradient wanted
  int node = new_node();
  t.node_ = node;
  t.epoch_ = epoch_;
  leaves_.emplace_back(node, t.leaf_grad());
  return node;
}

template <typename T>
int GradientTape<T>::emit(const Tensor<T>& out) {
  int node = new_node();
  out.node_ = node;
  out.epoch_ = epoch_;
  return node;
}

template <typename T>
void GradientTape<T>::record(int out_node, std::function<void(GradientTape&)> rule) {
  ops_.push_back({out_node, std::move(rule)});
}

template <typename T>
bool GradientTape<T>::has_grad(int node) const {
  return node >= 0 && !grads_[static_cast<size_t>(node)].empty();
}

template <typename T>
const std::vector<T>& GradientTape<T>::grad(int node) const {
  return grads_[static_cast<size_t>(node)];
}

template <typename T>
std::vector<T>& GradientTape<T>::grad_accum(int node, int64_t numel) {
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(numel), T(0));
  return g;
}

template <typename T>
void GradientTape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw_shape_error("backward() requires a scalar loss, got shape " +
                      shape_str(loss.shape()));
  }
  if (loss.epoch_ != epoch_ || loss.node_ < 0) {
    throw std::invalid_argument("backward(): loss was not produced on this tape");
  }
  grad_accum(loss.node_, 1)[0] += T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (has_grad(it->out_node)) it->rule(*this);
  }
  for (auto& [node, sink] : leaves_) {
    if (!has_grad(node)) continue;  // unreachable leaf: leave its grad untouched
    const auto& g = grads_[static_cast<size_t>(node)];
    auto& dst = *sink;
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
}

template <typename T>
void GradientTape<T>::reset() {
  ops_.clear();
  grads_.clear();
  leaves_.clear();
  next_node_ = 0;
  ++epoch_;
}

// ---------------------------------------------------------------------------
// TapeScope

template <typename T>
TapeScope<T>::TapeScope(GradientTape<T>& tape) {
  prev_ = active_tape_slot<T>();
  active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_tape_slot<T>() = prev_;
}

// ---------------------------------------------------------------------------
// Parameter

template <typename T>
Parameter<T>::Parameter(std::string name, Tensor<T> value)
    : name_(std::move(name)), value_(std::move(value)) {
  size_t n = static_cast<size_t>(value_.numel());
  grad_ = std::make_shared<std::vector<T>>(n, T(0));
  adam_m_.assign(n, T(0));
  adam_v_.assign(n, T(0));
  value_.attach_leaf_grad(grad_);
}

template <typename T>
void Parameter<T>::zero_grad() {
  for (T& g : *grad_) g = T(0);
}

template class Tensor<float>;
template class Tensor<double>;
template class GradientTape<float>;
template class GradientTape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class Parameter<float>;
template class Parameter<double>;

}  // namespace snider
