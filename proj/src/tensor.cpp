// Copyright 2026 The trfam Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "trfam/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace trf {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      os << 'x';
    }
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : impl_(std::make_shared<Impl>()) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
}

template <std::floating_point T>
const typename Tensor<T>::Impl& Tensor<T>::impl() const {
  if (!impl_) {
    throw std::logic_error("access to an undefined tensor");
  }
  return *impl_;
}

template <std::floating_point T>
typename Tensor<T>::Impl& Tensor<T>::impl() {
  if (!impl_) {
    throw std::logic_error("access to an undefined tensor");
  }
  return *impl_;
}

template <std::floating_point T>
const Shape& Tensor<T>::shape() const {
  return impl().shape;
}

template <std::floating_point T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = impl().shape;
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  }
  return s[axis];
}

template <std::floating_point T>
std::size_t Tensor<T>::size() const {
  return impl().data.size();
}

template <std::floating_point T>
std::span<T> Tensor<T>::data() {
  return impl().data;
}

template <std::floating_point T>
std::span<const T> Tensor<T>::data() const {
  return impl().data;
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  }
  return impl().data[0];
}

template <std::floating_point T>
T& Tensor<T>::operator()(std::size_t i, std::size_t j) {
  auto& s = impl();
  return s.data[i * s.shape[1] + j];
}

template <std::floating_point T>
T Tensor<T>::operator()(std::size_t i, std::size_t j) const {
  const auto& s = impl();
  return s.data[i * s.shape[1] + j];
}

template <std::floating_point T>
bool Tensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <std::floating_point T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

template <std::floating_point T>
bool Tensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <std::floating_point T>
std::span<T> Tensor<T>::grad() {
  auto& s = impl();
  if (s.grad.empty()) {
    s.grad.assign(s.data.size(), T(0));
  }
  return s.grad;
}

template <std::floating_point T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) {
    throw std::logic_error("tensor has no gradient");
  }
  return impl_->grad;
}

template <std::floating_point T>
void Tensor<T>::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), T(0));
}

template <std::floating_point T>
void Tensor<T>::clear_grad() {
  impl().grad.clear();
  impl().grad.shrink_to_fit();
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach() const {
  Tensor<T> copy;
  copy.impl_ = std::make_shared<Impl>();
  copy.impl_->shape = shape();
  copy.impl_->data = impl().data;
  return copy;
}

template <std::floating_point T>
Tape<T>::Scope::Scope(Tape& tape) : previous_(active_) {
  active_ = &tape;
}

template <std::floating_point T>
Tape<T>::Scope::~Scope() {
  active_ = previous_;
}

template <std::floating_point T>
void Tape<T>::backward(Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " +
                     to_string(loss.shape()));
  }
  loss.grad()[0] += T(1);
  // Moved out so the tape is empty even if a closure throws.
  auto ops = std::move(ops_);
  ops_.clear();
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
    (*it)();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace trf
