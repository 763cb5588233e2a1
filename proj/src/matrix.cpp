/* Copyright 2026 The ModulePort Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "moduleport/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "moduleport/error.hpp"
#include "moduleport/parallel.hpp"

namespace moduleport {

namespace {

void RequireNonEmpty(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be positive, got (" +
                     std::to_string(rows) + " x " + std::to_string(cols) + ")");
  }
}

void RequireSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() +
                     " vs " + b.shape_string());
  }
}

// Centered copy of every column, stored column-major so the correlation
// kernel walks contiguous memory. A column whose entries are all identical
// is marked dead and its sum of squares forced to zero; the subtraction of a
// rounded mean would otherwise leave ~1e-17 residue with a random sign.
struct CenteredColumns {
  std::size_t n = 0;
  std::vector<double> values;  // column j occupies [j*n, (j+1)*n)
  std::vector<double> sum_squares;

  std::span<const double> column(std::size_t j) const {
    return {values.data() + j * n, n};
  }
};

CenteredColumns Center(const Matrix& m) {
  CenteredColumns out;
  out.n = m.rows();
  out.values.resize(m.rows() * m.cols());
  out.sum_squares.assign(m.cols(), 0.0);
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double sum = 0.0;
    bool constant = true;
    const double first = m(0, j);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      sum += m(r, j);
      constant = constant && m(r, j) == first;
    }
    const double mean = sum / static_cast<double>(m.rows());
    double ss = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const double d = constant ? 0.0 : m(r, j) - mean;
      out.values[j * out.n + r] = d;
      ss += d * d;
    }
    out.sum_squares[j] = ss;
  }
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols) {
  RequireNonEmpty(rows, cols);
  data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  RequireNonEmpty(rows, cols);
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match (" + std::to_string(rows) + " x " +
                     std::to_string(cols) + ")");
  }
}

Matrix Matrix::FromRows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::Identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + " x " + std::to_string(cols_) + ")";
}

bool BitEqual(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size_bytes()) == 0);
}

bool BitEqual(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         BitEqual(a.values(), b.values());
}

bool AllFinite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

bool AllFinite(const Matrix& m) { return AllFinite(m.values()); }

Matrix Matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix MatmulTransposedB(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() +
                     " by transpose of " + b.shape_string());
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix MatmulTransposedA(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul: cannot multiply transpose of " +
                     a.shape_string() + " by " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto a_row = a.row(k);
    const auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Matrix Add(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "add");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

Matrix Subtract(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "subtract");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return out;
}

Matrix Scale(const Matrix& m, double factor) {
  Matrix out = m;
  for (double& v : out.values()) v *= factor;
  return out;
}

Matrix Negate(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = -v;
  return out;
}

Matrix GatherCols(const Matrix& m, std::span<const std::size_t> index) {
  if (index.empty()) throw ShapeError("gather: empty column index");
  Matrix out(m.rows(), index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m.cols()) {
      throw ShapeError("gather: column index " + std::to_string(index[i]) +
                       " out of range for " + m.shape_string());
    }
  }
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t i = 0; i < index.size(); ++i) out(r, i) = m(r, index[i]);
  return out;
}

Matrix GatherRows(const Matrix& m, std::span<const std::size_t> index) {
  if (index.empty()) throw ShapeError("gather: empty row index");
  Matrix out(index.size(), m.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m.rows()) {
      throw ShapeError("gather: row index " + std::to_string(index[i]) +
                       " out of range for " + m.shape_string());
    }
    const auto src = m.row(index[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

ColumnStats ComputeColumnStats(const Matrix& m) {
  if (m.rows() < 2) {
    throw InsufficientSamplesError("column statistics need at least 2 rows, got " +
                                   std::to_string(m.rows()));
  }
  const CenteredColumns centered = Center(m);
  const double n = static_cast<double>(m.rows());
  ColumnStats stats;
  stats.means.resize(m.cols());
  stats.stds.resize(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double sum = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) sum += m(r, j);
    stats.means[j] = sum / n;
    stats.stds[j] = std::sqrt(centered.sum_squares[j] / n);
  }
  return stats;
}

Matrix PearsonCorrelation(const Matrix& xs, const Matrix& xt, int threads) {
  if (xs.rows() != xt.rows()) {
    throw ShapeError("pearson: sample count mismatch, student has " +
                     std::to_string(xs.rows()) + " rows, teacher has " +
                     std::to_string(xt.rows()));
  }
  if (xs.rows() < 2) {
    throw InsufficientSamplesError("pearson: need at least 2 samples, got " +
                                   std::to_string(xs.rows()));
  }
  if (!AllFinite(xs) || !AllFinite(xt)) {
    throw NumericError("pearson: non-finite sample value");
  }

  const CenteredColumns cs = Center(xs);
  const CenteredColumns ct = Center(xt);
  Matrix corr(xs.cols(), xt.cols());

  ParallelFor(xs.cols(), threads, [&](std::size_t i) {
    const auto si = cs.column(i);
    for (std::size_t j = 0; j < xt.cols(); ++j) {
      const double denom_sq = cs.sum_squares[i] * ct.sum_squares[j];
      if (denom_sq == 0.0) {
        corr(i, j) = 0.0;
        continue;
      }
      const auto tj = ct.column(j);
      double cov = 0.0;
      for (std::size_t r = 0; r < si.size(); ++r) cov += si[r] * tj[r];
      const double c = cov / std::sqrt(denom_sq);
      corr(i, j) = std::clamp(c, -1.0, 1.0);
    }
  });
  return corr;
}

}  // namespace moduleport
