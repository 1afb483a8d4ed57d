// SPDX-License-Identifier: Apache-2.0
#include "dct/array2.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dct {

Array2::Array2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Array2::Array2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Array2: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Array2 Array2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Array2::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Array2(r, c, std::move(data));
}

Array2 Array2::row_vector(std::span<const double> values) {
  return Array2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Array2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Array2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Array2 Array2::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of " + shape_string());
  }
  Array2 out(end - begin, cols_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
            data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
  return out;
}

Array2 Array2::transposed() const {
  Array2 out(cols_, rows_);
  out.map() = map().transpose();
  return out;
}

std::string Array2::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

void require_same_shape(const Array2& a, const Array2& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

Array2 vstack(std::span<const Array2> blocks) {
  std::size_t rows = 0;
  std::size_t cols = blocks.empty() ? 0 : blocks.front().cols();
  for (const auto& b : blocks) {
    if (b.cols() != cols) throw ShapeError("vstack: column mismatch");
    rows += b.rows();
  }
  Array2 out(rows, cols);
  auto dst = out.data().begin();
  for (const auto& b : blocks) dst = std::copy(b.values().begin(), b.values().end(), dst);
  return out;
}

double max_relative_error(const Array2& a, const Array2& b, double floor) {
  require_same_shape(a, b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

void round_to_float(Array2& a) {
  for (double& v : a.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace dct
