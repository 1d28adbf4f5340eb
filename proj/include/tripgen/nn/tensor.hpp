#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tripgen::nn {

/// Dense row-major tensor of rank 1 or 2 with 64-bit values. Rank-1
/// tensors behave as a single row.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : shape_{rows, cols}, values_(rows * cols, fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_.empty() || shape_.size() > 2) throw std::invalid_argument("Tensor: rank must be 1 or 2");
    const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (n != values_.size()) throw std::invalid_argument("Tensor: value count does not match shape");
  }

  static Tensor row(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  [[nodiscard]] const std::vector<std::size_t>& shape() const { return shape_; }
  [[nodiscard]] std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : (shape_.empty() ? 0 : 1); }
  [[nodiscard]] std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row_span(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  [[nodiscard]] std::span<const double> row_span(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  std::vector<double>& values() { return values_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  double* data() { return values_.data(); }
  [[nodiscard]] const double* data() const { return values_.data(); }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  [[nodiscard]] std::string shape_string() const {
    return std::to_string(rows()) + "x" + std::to_string(cols());
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// Sum whose result does not depend on the order of the terms: the terms
/// are sorted before accumulation.
inline double order_independent_sum(std::span<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace tripgen::nn
