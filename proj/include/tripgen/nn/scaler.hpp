#pragma once

#include <nlohmann/json.hpp>

#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "tripgen/nn/tensor.hpp"

namespace tripgen::nn {

/// Per-column min-max scaling fitted on training rows only. Constant
/// columns map to 0. Out-of-range rows are not clipped.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;

  static MinMaxScaler fit(const Tensor& rows) {
    if (rows.rows() == 0 || rows.cols() == 0) throw std::invalid_argument("MinMaxScaler::fit: empty matrix");
    MinMaxScaler s;
    const std::size_t c = rows.cols();
    s.min_.assign(c, std::numeric_limits<double>::infinity());
    s.max_.assign(c, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < rows.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) {
        s.min_[j] = std::min(s.min_[j], rows(i, j));
        s.max_[j] = std::max(s.max_[j], rows(i, j));
      }
    s.constant_.resize(c);
    for (std::size_t j = 0; j < c; ++j) s.constant_[j] = !(s.max_[j] > s.min_[j]);
    return s;
  }

  [[nodiscard]] std::size_t width() const { return min_.size(); }
  [[nodiscard]] const std::vector<double>& min() const { return min_; }
  [[nodiscard]] const std::vector<double>& max() const { return max_; }
  [[nodiscard]] const std::vector<bool>& constant_mask() const { return constant_; }

  [[nodiscard]] double transform(std::size_t col, double v) const {
    return constant_[col] ? 0.0 : (v - min_[col]) / (max_[col] - min_[col]);
  }
  [[nodiscard]] double inverse(std::size_t col, double v) const {
    return constant_[col] ? min_[col] : v * (max_[col] - min_[col]) + min_[col];
  }

  void transform_row(std::span<const double> in, std::span<double> out) const {
    check(in.size());
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = transform(j, in[j]);
  }

  [[nodiscard]] Tensor transform(const Tensor& x) const {
    check(x.cols());
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) transform_row(x.row_span(i), out.row_span(i));
    return out;
  }

  [[nodiscard]] Tensor inverse_transform(const Tensor& x) const {
    check(x.cols());
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = inverse(j, x(i, j));
    return out;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    std::vector<int> mask(constant_.begin(), constant_.end());
    return {{"min", min_}, {"max", max_}, {"constant", mask}};
  }
  static MinMaxScaler from_json(const nlohmann::json& j) {
    MinMaxScaler s;
    s.min_ = j.at("min").get<std::vector<double>>();
    s.max_ = j.at("max").get<std::vector<double>>();
    for (int v : j.at("constant").get<std::vector<int>>()) s.constant_.push_back(v != 0);
    if (s.min_.size() != s.max_.size() || s.min_.size() != s.constant_.size())
      throw std::invalid_argument("MinMaxScaler: inconsistent serialized state");
    return s;
  }

  bool operator==(const MinMaxScaler&) const = default;

 private:
  void check(std::size_t cols) const {
    if (cols != width())
      throw std::invalid_argument("MinMaxScaler: width " + std::to_string(cols) + " != fitted " + std::to_string(width()));
  }

  std::vector<double> min_;
  std::vector<double> max_;
  std::vector<bool> constant_;
};

}  // namespace tripgen::nn
