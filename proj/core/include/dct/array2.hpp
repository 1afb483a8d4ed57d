// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dct {

/// Raised on shape mismatches, out-of-range ids and similar contract violations.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a value or gradient stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

/// Storage aligned for the widest SIMD packet. Eigen reductions split off an
/// unaligned head, so plain heap alignment would make the summation order
/// (and the last bits of results) depend on where a buffer lands.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major matrix of doubles. Rows index positions/frames, columns
/// index features throughout the code base.
class Array2 {
 public:
  Array2() = default;
  Array2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Array2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Array2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Array2 row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Array2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const AlignedVector& values() const { return data_; }

  MatrixMap map() { return MatrixMap(data_.data(), rows_, cols_); }
  ConstMatrixMap map() const { return ConstMatrixMap(data_.data(), rows_, cols_); }

  void fill(double v);
  /// True when every element is finite.
  bool all_finite() const;
  Array2 slice_rows(std::size_t begin, std::size_t end) const;
  Array2 transposed() const;
  std::string shape_string() const;

  friend bool operator==(const Array2& a, const Array2& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  AlignedVector data_;
};

/// Throws ShapeError with `what` when shapes differ.
void require_same_shape(const Array2& a, const Array2& b, const char* what);

/// Stacks row blocks with equal column counts.
Array2 vstack(std::span<const Array2> blocks);

/// Largest |a - b| relative to max(|a|, |b|, floor).
double max_relative_error(const Array2& a, const Array2& b, double floor = 1e-8);

/// Rounds every element to the nearest IEEE single-precision value.
void round_to_float(Array2& a);

}  // namespace dct
