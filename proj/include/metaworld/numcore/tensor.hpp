#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "metaworld/errors.hpp"

namespace metaworld::numcore {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// 64-byte aligned storage. Vectorized reductions peel up to the first aligned
// element, so a fixed alignment keeps summation order, and results, independent
// of where the allocator happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

// Dense row-major tensor. Value type, owns its storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  // Rank-2 helpers; rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  T item() const;
  void fill(T value);
  bool all_finite() const noexcept;
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<T, AlignedAllocator<T>> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace metaworld::numcore
