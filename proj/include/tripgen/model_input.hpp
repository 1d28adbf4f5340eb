#pragma once

#include <string>
#include <vector>

#include "tripgen/nn/tensor.hpp"

namespace tripgen {

/// Neighbor list of one localized graph, as rows of a feature table.
struct GraphInput {
  std::vector<std::size_t> rows;
  std::vector<double> kernel_weights;  // raw Gaussian weights, same order as rows
};

/// Everything a model needs for one station-month: the center's feature
/// row, normalized station age, month of year, and both neighbor lists.
/// Feature rows index a shared, normalized N x 43 table.
struct ModelInput {
  std::size_t row = 0;
  double age = 0;     // normalized station age
  int month = 0;      // 0 = January
  GraphInput proximity;
  GraphInput similarity;
};

}  // namespace tripgen
