// SPDX-License-Identifier: Apache-2.0
//
// Minimal tape-free reverse-mode differentiation over Array2 values. Every
// operation returns a Var whose node keeps shared ownership of its parents, so
// a graph lives exactly as long as its terminal Var.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dct/array2.hpp"

namespace dct::ad {

struct Node {
  Array2 value;
  Array2 grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Array2& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Array2 value, bool requires_grad = false);

  const Array2& value() const { return node_->value; }
  /// Mutable access is only meaningful for leaves (optimizer updates).
  Array2& mutable_value() { return node_->value; }
  /// Gradient; a zero array of the value's shape when nothing was accumulated.
  const Array2& grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

/// Propagates d(loss)/d(node) into every requires-grad ancestor. Gradients are
/// accumulated additively; callers reset leaves with zero_grad between steps.
/// Throws ShapeError for a non-scalar root, std::logic_error when called twice
/// on the same root, NumericError when a non-finite gradient appears.
void backward(const Var& loss);

void zero_grad(std::span<Var> params);

Var matmul(const Var& a, const Var& b);
/// a * b^T, used by the tied output projection.
Var matmul_transposed(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1xC row vector to every row of an RxC input. The only broadcast.
Var add_row_bias(const Var& a, const Var& bias);
/// Exact Gaussian-error linear unit: x * Phi(x).
Var gelu(const Var& a);
Var tanh(const Var& a);
Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
/// Groups consecutive blocks of k rows into one row of k*C values; a short
/// final block is padded with zero rows. T x C -> ceil(T/k) x (k*C).
Var stack_frames(const Var& a, std::size_t k);
/// Row lookup: out[i] = table[ids[i]].
Var gather_rows(const Var& table, std::span<const int> ids);
/// Multi-head causal self-attention over rows; q, k, v are LxD.
Var causal_self_attention(const Var& q, const Var& k, const Var& v, std::size_t heads);
/// Packed variant: rows are split into consecutive independent sequences of
/// the given lengths and attention never crosses a boundary.
Var causal_self_attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                          std::span<const std::size_t> segments);
Var sum(const Var& a);
Var mean(std::span<const Var> scalars);

/// Mean over positions of -log softmax(logits[i])[targets[i]].
Var cross_entropy(const Var& logits, std::span<const int> targets);
/// Same, restricted to positions where mask is nonzero. Targets at masked-out
/// positions are never read.
Var cross_entropy_masked(const Var& logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask);

}  // namespace dct::ad
