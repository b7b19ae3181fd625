#pragma once

#include <cstddef>
#include <map>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace chartlab::num {

/// Cache-line aligned storage. Vectorized kernels pick their code path from
/// the buffer address, so a fixed alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles. Rank 0 (scalar), 1 or 2 in practice;
/// two-dimensional views treat rank-1 tensors as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Value of a one-element tensor.
  double item() const;

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  Storage data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Named parameter tensors, ordered by name so iteration is deterministic.
using ParamSet = std::map<std::string, Tensor>;
/// Gradient per parameter name; each entry matches its parameter's shape.
using GradientSet = std::map<std::string, Tensor>;

/// Returns a copy with every row scaled to unit Euclidean norm.
/// Throws ContractError on a zero row.
Tensor l2_normalize_rows(const Tensor& m);

/// Stable digest over names, shapes and raw bytes of a parameter set.
std::string params_digest(const ParamSet& params);

}  // namespace chartlab::num
