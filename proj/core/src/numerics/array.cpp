// SPDX-License-Identifier: Apache-2.0
#include "mmate/numerics/array.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mmate::num {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw std::invalid_argument("Array: zero-sized dimension in " + shape_string(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, const std::vector<double>& values)
    : Array(std::move(shape), Buffer(values.begin(), values.end())) {}

Array::Array(Shape shape, Buffer values) : shape_(std::move(shape)), data_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw std::invalid_argument("Array: zero-sized dimension in " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("Array: shape " + shape_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Array Array::scalar(double value) { return Array({1}, Buffer{value}); }

Array Array::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw std::invalid_argument("Array::from_rows: no rows");
  const std::size_t n = rows.begin()->size();
  Buffer values;
  values.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw std::invalid_argument("Array::from_rows: ragged rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Array({rows.size(), n}, std::move(values));
}

Array Array::vector(std::initializer_list<double> values) {
  return Array({values.size()}, Buffer(values));
}

std::size_t Array::rows() const {
  if (shape_.empty()) throw std::logic_error("Array::rows on empty array");
  return shape_[0];
}

std::size_t Array::cols() const {
  if (shape_.empty()) throw std::logic_error("Array::cols on empty array");
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

std::span<double> Array::row(std::size_t r) {
  const std::size_t c = cols();
  return {data_.data() + r * c, c};
}

std::span<const double> Array::row(std::size_t r) const {
  const std::size_t c = cols();
  return {data_.data() + r * c, c};
}

void Array::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("Array::reshaped: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  return Array(std::move(shape), data_);
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bitwise_equal(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const Array& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

void require_shape(const Array& a, const Shape& expected, const char* what) {
  if (a.shape() != expected) {
    throw std::invalid_argument(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                                shape_string(a.shape()));
  }
}

void require_matrix(const Array& a, const char* what) {
  if (a.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace mmate::num
