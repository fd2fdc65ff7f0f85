#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace esdmr {

/// Dense row-major N-d array. Image tensors use NCHW axis order.
///
/// Copies are shallow (storage is shared); tensors are treated as immutable
/// once built, so sharing is safe across threads. `clone()` makes a deep
/// copy, and the optimizer mutates parameter storage through `data()` under
/// exclusive ownership.
template <class T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::vector<int> shape);

  static TensorT zeros(std::vector<int> shape);
  static TensorT ones(std::vector<int> shape);
  static TensorT full(std::vector<int> shape, T value);
  static TensorT from_data(std::vector<int> shape, std::vector<T> values);
  static TensorT scalar(T value);

  bool defined() const { return storage_ != nullptr; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int extent(int axis) const;
  std::size_t numel() const;

  const T* data() const { return storage_->data(); }
  T* data() { return storage_->data(); }
  T value_at(std::size_t i) const { return (*storage_)[i]; }

  /// NCHW element access (bounds unchecked; kernels do their own indexing).
  T& at4(int n, int c, int h, int w);
  T at4(int n, int c, int h, int w) const;

  TensorT clone() const;
  bool all_finite() const;

  bool requires_grad() const { return requires_grad_; }
  TensorT& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  /// Tape linkage: which tape (by serial) and which node produced this value.
  std::uint64_t tape_serial() const { return tape_serial_; }
  long long node() const { return node_; }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> storage_;
  bool requires_grad_ = false;
  std::uint64_t tape_serial_ = 0;
  long long node_ = -1;

  long use_count() const { return storage_ ? storage_.use_count() : 0; }

  template <class>
  friend class TapeT;
};

std::string shape_to_string(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);

template <class T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape() == b.shape();
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace esdmr
