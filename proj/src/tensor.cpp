#include "esdmr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace esdmr {

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

namespace {
void validate_shape(const std::vector<int>& shape) {
  if (shape.empty()) {
    throw std::invalid_argument("tensor shape must have at least one axis");
  }
  for (int e : shape) {
    if (e < 1) {
      throw std::invalid_argument("tensor extents must be >= 1, got " +
                                  shape_to_string(shape));
    }
  }
}
}  // namespace

template <class T>
TensorT<T>::TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  storage_ = std::make_shared<std::vector<T>>(shape_numel(shape_), T(0));
}

template <class T>
TensorT<T> TensorT<T>::zeros(std::vector<int> shape) {
  return TensorT(std::move(shape));
}

template <class T>
TensorT<T> TensorT<T>::ones(std::vector<int> shape) {
  return full(std::move(shape), T(1));
}

template <class T>
TensorT<T> TensorT<T>::full(std::vector<int> shape, T value) {
  TensorT t(std::move(shape));
  for (T& v : *t.storage_) v = value;
  return t;
}

template <class T>
TensorT<T> TensorT<T>::from_data(std::vector<int> shape, std::vector<T> values) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument(
        "data length " + std::to_string(values.size()) +
        " does not match shape " + shape_to_string(shape));
  }
  TensorT t;
  t.shape_ = std::move(shape);
  t.storage_ = std::make_shared<std::vector<T>>(std::move(values));
  return t;
}

template <class T>
TensorT<T> TensorT<T>::scalar(T value) {
  return full({1}, value);
}

template <class T>
int TensorT<T>::extent(int axis) const {
  if (axis < 0 || axis >= ndim()) {
    throw std::out_of_range("axis " + std::to_string(axis) +
                            " out of range for shape " +
                            shape_to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <class T>
std::size_t TensorT<T>::numel() const {
  return storage_ ? storage_->size() : 0;
}

template <class T>
T& TensorT<T>::at4(int n, int c, int h, int w) {
  const std::size_t idx =
      ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
          shape_[3] +
      w;
  return (*storage_)[idx];
}

template <class T>
T TensorT<T>::at4(int n, int c, int h, int w) const {
  const std::size_t idx =
      ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
          shape_[3] +
      w;
  return (*storage_)[idx];
}

template <class T>
TensorT<T> TensorT<T>::clone() const {
  if (!defined()) return TensorT();
  TensorT t;
  t.shape_ = shape_;
  t.storage_ = std::make_shared<std::vector<T>>(*storage_);
  t.requires_grad_ = requires_grad_;
  return t;
}

template <class T>
bool TensorT<T>::all_finite() const {
  if (!defined()) return true;
  for (T v : *storage_) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template class TensorT<float>;
template class TensorT<double>;

}  // namespace esdmr
