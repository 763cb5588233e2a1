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

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace moduleport {

// Dense row-major matrix of doubles. Always at least 1x1.
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Literal construction for tests and small fixtures.
  static Matrix FromRows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix Identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  Matrix transposed() const;

  // "(rows x cols)" for error messages.
  std::string shape_string() const;

  // Value equality (0.0 == -0.0, NaN != NaN).
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

// Bitwise equality of shape and every payload byte.
bool BitEqual(const Matrix& a, const Matrix& b);
bool BitEqual(std::span<const double> a, std::span<const double> b);

bool AllFinite(const Matrix& m);
bool AllFinite(std::span<const double> v);

Matrix Matmul(const Matrix& a, const Matrix& b);

// a * b^T without materialising the transpose.
Matrix MatmulTransposedB(const Matrix& a, const Matrix& b);

// a^T * b without materialising the transpose.
Matrix MatmulTransposedA(const Matrix& a, const Matrix& b);

Matrix Add(const Matrix& a, const Matrix& b);
Matrix Subtract(const Matrix& a, const Matrix& b);
Matrix Scale(const Matrix& m, double factor);
Matrix Negate(const Matrix& m);

// Output column i is input column index[i]. Indices may repeat.
Matrix GatherCols(const Matrix& m, std::span<const std::size_t> index);
// Output row i is input row index[i].
Matrix GatherRows(const Matrix& m, std::span<const std::size_t> index);

struct ColumnStats {
  std::vector<double> means;
  // Population (divide by N) standard deviations.
  std::vector<double> stds;
};

// Requires m.rows() >= 2.
ColumnStats ComputeColumnStats(const Matrix& m);

// Pearson correlation between every column of `xs` and every column of `xt`
// over matched rows. Result is (xs.cols x xt.cols). Entries involving a
// zero-variance column are 0. Entries are clamped to [-1, 1].
//
// `threads` > 1 splits output rows across workers; every entry is computed
// with the same summation order regardless, so results are bit-identical.
Matrix PearsonCorrelation(const Matrix& xs, const Matrix& xt, int threads = 1);

}  // namespace moduleport
