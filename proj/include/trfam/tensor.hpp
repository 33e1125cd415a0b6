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

#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// 64-byte aligned buffers keep vectorized reductions independent of where
// the allocator happens to place them, so repeated runs are bit-identical.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t n) { ::operator delete(p, n * sizeof(T), kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor handle. Copies share storage; use detach() for a
/// deep copy. Gradients live next to the data and are allocated lazily.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  T& operator()(std::size_t i, std::size_t j);
  T operator()(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  /// Gradient buffer; allocated as zeros on first access.
  std::span<T> grad();
  /// Throws if no gradient has been accumulated.
  std::span<const T> grad() const;
  void zero_grad();
  void clear_grad();

  Tensor detach() const;
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    AlignedVector<T> data;
    AlignedVector<T> grad;
    bool requires_grad = false;
  };
  const Impl& impl() const;
  Impl& impl();

  std::shared_ptr<Impl> impl_;
};

/// Ordered record of backward closures. Operations executed while a Tape is
/// active (see Tape::Scope) append one closure per differentiable op whose
/// inputs require gradients; backward() replays them in reverse order.
template <std::floating_point T>
class Tape {
 public:
  using Backward = std::function<void()>;

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(Backward fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  /// Seeds d(loss)/d(loss) = 1, runs every recorded closure once in reverse
  /// order, and clears the tape.
  void backward(Tensor<T>& loss);

 private:
  std::vector<Backward> ops_;
  static inline thread_local Tape* active_ = nullptr;
};

template <std::floating_point To, std::floating_point From>
Tensor<To> cast(const Tensor<From>& x) {
  if constexpr (std::is_same_v<To, From>) {
    return x.detach();
  } else {
    auto src = x.data();
    std::vector<To> values(src.begin(), src.end());
    return Tensor<To>(x.shape(), std::move(values));
  }
}

}  // namespace trf
