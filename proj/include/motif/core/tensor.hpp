#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace motif {

using Shape = std::vector<long>;

/// 64-byte-aligned storage so Eigen always takes the same (aligned) kernel
/// paths: keeps results bit-reproducible regardless of heap history.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(64)));
  }
  void deallocate(T* p, size_t) { ::operator delete(p, std::align_val_t(64)); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + ")";
}

/// Dense row-major tensor. The last dimension is contiguous; most ops view
/// the tensor as a (rows = product of leading dims, cols = last dim) matrix.
template <class T>
class Tensor {
 public:
  using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

  using Storage = std::vector<T, AlignedAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(Shape shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    assert(static_cast<long>(data_.size()) == shape_numel(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  long dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long numel() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  T operator[](long i) const { return data_[static_cast<size_t>(i)]; }
  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }

  /// Rows when viewed as a matrix with the last dim as columns.
  long rows() const { return shape_.empty() ? 0 : numel() / shape_.back(); }
  long cols() const { return shape_.empty() ? 0 : shape_.back(); }

  MatMap mat() { return MatMap(data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data(), rows(), cols()); }
  MatMap mat2(long r, long c) { return MatMap(data(), r, c); }
  ConstMatMap mat2(long r, long c) const { return ConstMatMap(data(), r, c); }
  VecMap arr() { return VecMap(data(), numel()); }
  ConstVecMap arr() const { return ConstVecMap(data(), numel()); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), T(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (long i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

 private:
  Shape shape_;
  Storage data_;
};

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  assert(a.same_shape(b));
  double m = 0;
  for (long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace motif
