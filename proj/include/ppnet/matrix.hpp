#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ppnet/error.hpp"

namespace ppnet {

/// Dense row-major matrix. Used for per-point feature matrices (N x C).
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) fail(ErrorKind::Argument, "matrix data size does not match shape");
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool empty() const { return rows == 0; }
};

using FeatureMatrix = Matrix<double>;

}  // namespace ppnet
