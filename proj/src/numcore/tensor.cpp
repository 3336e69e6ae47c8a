#include "metaworld/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace metaworld::numcore {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in shape " + to_string(shape_));
  }
  data_.assign(numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
  }
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  std::vector<T> data;
  std::size_t width = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != width) throw ShapeError("tensor: ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), width}, std::move(data));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("tensor: item() on shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace metaworld::numcore
