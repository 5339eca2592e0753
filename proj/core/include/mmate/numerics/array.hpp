// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mmate::num {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocation. Vectorized reductions peel a different
/// number of leading elements depending on the address, which changes the
/// rounding; a fixed alignment keeps results independent of the heap layout.
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
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major f64 array. Matrices are rank 2; vectors (biases, norm
/// affines) are rank 1; scalars are shape {1}.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, const std::vector<double>& values);
  Array(Shape shape, Buffer values);

  static Array scalar(double value);
  static Array from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Array vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Leading dimension.
  std::size_t rows() const;
  /// Product of trailing dimensions; 1 for rank-1 arrays.
  std::size_t cols() const;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  void fill(double value);
  /// Same data, new shape; sizes must agree.
  Array reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  Shape shape_;
  Buffer data_;
};

/// Exact equality of shape and bit pattern of every element.
bool bitwise_equal(const Array& a, const Array& b);
double max_abs_diff(const Array& a, const Array& b);
double max_abs(const Array& a);

void require_shape(const Array& a, const Shape& expected, const char* what);
void require_matrix(const Array& a, const char* what);

}  // namespace mmate::num
