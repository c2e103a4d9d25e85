#pragma once

#include <cstddef>
#include <vector>

#include "tabbench/errors.hpp"

namespace tabbench {

// Plain row-major numeric matrix. Preprocessed feature tables, corruption
// inputs/outputs and baseline models all work on this; the autodiff Tensor
// is only used inside neural model code.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

  const double* row(std::size_t r) const { return v.data() + r * cols; }
  double* row(std::size_t r) { return v.data() + r * cols; }

  Matrix select_rows(const std::vector<std::size_t>& idx) const {
    Matrix out(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= rows) throw Error("select_rows: index out of range");
      for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = at(idx[i], j);
    }
    return out;
  }

  bool operator==(const Matrix& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

template <typename T>
std::vector<T> select(const std::vector<T>& src, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(src.at(i));
  return out;
}

}  // namespace tabbench
