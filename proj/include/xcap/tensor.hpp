#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <vector>

#include "xcap/util.hpp"

namespace xcap {

// All tensor storage is 64-byte aligned so Eigen's vectorized kernels take
// the same code path for every allocation. Without this, results depend on
// where the heap happens to place a buffer, which breaks the bit-level
// reproducibility contract.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t(kAlignment)));
  }
  void deallocate(T* p, std::size_t) {
    ::operator delete(p, std::align_val_t(kAlignment));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

// Dense rank-1 or rank-2 tensor, row-major, owning its storage. Values are
// immutable by convention once a tensor has entered a graph; mutation is
// reserved for parameter updates between graph builds.
template <typename Real>
class Tensor {
 public:
  using Storage = std::vector<Real, AlignedAllocator<Real>>;
  using Matrix =
      Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Matrix>;
  using ConstMap = Eigen::Map<const Matrix>;
  using VecMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

  Tensor() = default;

  static Tensor matrix(int rows, int cols) {
    check(rows > 0 && cols > 0, "tensor: dimensions must be positive, got ",
          rows, "x", cols);
    Tensor t;
    t.rank_ = 2;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_.assign(static_cast<std::size_t>(rows) * cols, Real(0));
    return t;
  }

  static Tensor vector(int n) {
    check(n > 0, "tensor: dimension must be positive, got ", n);
    Tensor t;
    t.rank_ = 1;
    t.rows_ = n;
    t.cols_ = 1;
    t.data_.assign(static_cast<std::size_t>(n), Real(0));
    return t;
  }

  static Tensor scalar(Real v) {
    Tensor t = vector(1);
    t.data_[0] = v;
    return t;
  }

  // Boundary constructor: validates finiteness, unlike the raw factories.
  static Tensor from_data(int rank, int rows, int cols,
                          const std::vector<Real>& data) {
    check(rank == 1 || rank == 2, "tensor: rank must be 1 or 2, got ", rank);
    Tensor t = rank == 1 ? vector(rows) : matrix(rows, cols);
    check(data.size() == t.data_.size(), "tensor: data length ", data.size(),
          " does not match shape ", rows, "x", cols);
    std::copy(data.begin(), data.end(), t.data_.begin());
    check(t.all_finite(), "tensor: non-finite value rejected at boundary");
    return t;
  }

  int rank() const { return rank_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& o) const {
    return rank_ == o.rank_ && rows_ == o.rows_ && cols_ == o.cols_;
  }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& operator()(int r, int c) {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }
  Real operator()(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  Map mat() { return Map(data_.data(), rows_, cols_); }
  ConstMap mat() const { return ConstMap(data_.data(), rows_, cols_); }
  VecMap vec() {
    return VecMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  ConstVecMap vec() const {
    return ConstVecMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), Real(0)); }
  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (const Real v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out = rank_ == 1 ? Tensor<Other>::vector(rows_)
                                   : Tensor<Other>::matrix(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<Other>(data_[i]);
    }
    return out;
  }

 private:
  int rank_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  Storage data_;
};

// Numerically stable softmax over a contiguous range, in place. Shared by the
// graph op and the untaped decoder so both paths use identical arithmetic.
template <typename Real>
void softmax_inplace(Real* x, int n) {
  check(n >= 1, "softmax: empty input");
  Real mx = x[0];
  for (int i = 0; i < n; ++i) {
    check(std::isfinite(static_cast<double>(x[i])),
          "softmax: non-finite input at index ", i);
    if (x[i] > mx) mx = x[i];
  }
  Real sum = 0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

}  // namespace xcap
