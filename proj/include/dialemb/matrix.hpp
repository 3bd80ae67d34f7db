// dialemb/matrix.hpp
//
// Copyright 2026 dialemb authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dialemb/error.hpp"

namespace dialemb {

inline constexpr double kNormEpsilon = 1e-8;
inline constexpr double kFiniteDiffStep = 1e-5;

// Minimal dense row-major matrix of doubles. Not a BLAS replacement: just
// enough arithmetic for desk-scale training, with finiteness checked on the
// outputs of the public operations.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major, rows * cols entries

  Matrix() = default;
  Matrix(int r, int c)
      : rows(r), cols(c),
        data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

  static Matrix zeros(int r, int c) { return Matrix(r, c); }

  double& operator()(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }

  std::span<double> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_all_finite(const Matrix& m, const std::string& context) {
  if (!m.all_finite()) throw NumericError("non-finite entries in " + context);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols == b.rows,
                "matmul: inner dimensions differ (" + std::to_string(a.cols) +
                    " vs " + std::to_string(b.rows) + ")");
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    double* orow = out.data.data() + static_cast<std::size_t>(i) * b.cols;
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow =
          b.data.data() + static_cast<std::size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  require_all_finite(out, "matmul output");
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  require_shape(x.size() == y.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double l2_norm(std::span<const double> x) {
  return std::sqrt(dot(x, x));
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x,
                 std::span<double> y) {
  require_shape(x.size() == y.size(), "axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// Each row divided by max(||row||, epsilon). A zero row stays zero.
inline Matrix l2_normalize_rows(const Matrix& m,
                                double epsilon = kNormEpsilon) {
  require_config(epsilon > 0.0, "l2_normalize_rows: epsilon must be > 0");
  Matrix out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const double inv = 1.0 / std::max(l2_norm(m.row(i)), epsilon);
    for (int j = 0; j < m.cols; ++j) out(i, j) = m(i, j) * inv;
  }
  require_all_finite(out, "l2_normalize_rows output");
  return out;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  int worst_parameter_index = -1;
};

/// Central finite differences: (f(p + h e_i) - f(p - h e_i)) / 2h per
/// coordinate. The workhorse check behind every analytic gradient here.
inline std::vector<double> finite_diff_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& p, double h = kFiniteDiffStep) {
  require_config(h > 0.0, "finite_diff_gradient: h must be > 0");
  std::vector<double> grad(p.size());
  std::vector<double> q = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    q[i] = p[i] + h;
    const double fp = f(q);
    q[i] = p[i] - h;
    const double fm = f(q);
    q[i] = p[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_gradient: non-finite f evaluation at "
                         "coordinate " + std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Relative error per coordinate: |a - n| / max(1e-6, |a|, |n|).
inline GradCheckResult compare_gradients(std::span<const double> analytic,
                                         std::span<const double> numeric) {
  require_shape(analytic.size() == numeric.size(),
                "compare_gradients: length mismatch");
  GradCheckResult result;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({1e-6, std::fabs(analytic[i]), std::fabs(numeric[i])});
    const double rel = std::fabs(analytic[i] - numeric[i]) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_parameter_index = static_cast<int>(i);
    }
  }
  return result;
}

inline GradCheckResult check_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& p, std::span<const double> analytic,
    double h = kFiniteDiffStep) {
  const std::vector<double> numeric = finite_diff_gradient(f, p, h);
  return compare_gradients(analytic, numeric);
}

}  // namespace dialemb
