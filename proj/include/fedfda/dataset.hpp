#pragma once

#include "fedfda/common.hpp"

#include <span>
#include <vector>

namespace fedfda {

// Labeled input samples, one row per sample.
struct Dataset {
  Matrix inputs;
  std::vector<int> labels;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }
  bool empty() const { return inputs.rows() == 0; }
};

inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.row(static_cast<Index>(j)) = m.row(static_cast<Index>(rows[j]));
  }
  return out;
}

inline std::vector<int> select(std::span<const int> v, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) {
    out.push_back(v[r]);
  }
  return out;
}

inline Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
  return Dataset{select_rows(data.inputs, rows), select(data.labels, rows)};
}

}  // namespace fedfda
