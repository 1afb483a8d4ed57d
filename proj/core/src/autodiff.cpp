// SPDX-License-Identifier: Apache-2.0
#include "dct/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace dct::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

void require_finite(const Array2& a, const char* op) {
  if (!a.all_finite()) throw NumericError(std::string(op) + ": non-finite value");
}

Var make_result(Array2 value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backward_fn, const char* op) {
  require_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Var::from_node(std::move(node));
}

// Accumulates `delta` into a parent's gradient if the parent wants one.
void accumulate(Node& parent, const Array2& delta) {
  if (!parent.requires_grad) return;
  parent.ensure_grad().map() += delta.map();
}

}  // namespace

Array2& Node::ensure_grad() {
  if (!grad.same_shape(value)) grad = Array2(value.rows(), value.cols());
  return grad;
}

Var::Var(Array2 value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

const Array2& Var::grad() const { return node_->ensure_grad(); }

void Var::zero_grad() {
  if (node_->grad.same_shape(node_->value)) node_->grad.fill(0.0);
}

void zero_grad(std::span<Var> params) {
  for (auto& p : params) p.zero_grad();
}

void backward(const Var& loss) {
  const NodePtr& root = loss.node();
  if (!root) throw std::logic_error("backward: undefined root");
  if (root->value.rows() != 1 || root->value.cols() != 1) {
    throw ShapeError("backward: root must be 1x1, got " + root->value.shape_string());
  }
  if (root->backward_done) {
    throw std::logic_error("backward: graph already differentiated; rebuild the graph");
  }
  if (!root->requires_grad) {
    root->backward_done = true;
    return;
  }

  // Iterative post-order DFS over requires-grad nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn) continue;
    Array2& g = node->ensure_grad();
    if (!g.all_finite()) throw NumericError("backward: non-finite gradient during propagation");
    node->backward_fn(*node);
  }
  for (Node* node : order) {
    if (!node->backward_fn && !node->ensure_grad().all_finite()) {
      throw NumericError("backward: non-finite gradient reached a leaf");
    }
  }
  root->backward_done = true;
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.value().shape_string() + " * " + b.value().shape_string());
  }
  Array2 out(a.rows(), b.cols());
  out.map().noalias() = a.value().map() * b.value().map();
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad().map().noalias() += self.grad.map() * pb.value.map().transpose();
    if (pb.requires_grad) pb.ensure_grad().map().noalias() += pa.value.map().transpose() * self.grad.map();
  }, "matmul");
}

Var matmul_transposed(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: " + a.value().shape_string() + " * (" +
                     b.value().shape_string() + ")^T");
  }
  Array2 out(a.rows(), b.rows());
  out.map().noalias() = a.value().map() * b.value().map().transpose();
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad().map().noalias() += self.grad.map() * pb.value.map();
    if (pb.requires_grad) pb.ensure_grad().map().noalias() += self.grad.map().transpose() * pa.value.map();
  }, "matmul_transposed");
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Array2 out(a.rows(), a.cols());
  out.map() = a.value().map() + b.value().map();
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Array2 out(a.rows(), a.cols());
  out.map() = a.value().map() - b.value().map();
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    Node& pb = *self.parents[1];
    if (pb.requires_grad) pb.ensure_grad().map() -= self.grad.map();
  }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Array2 out(a.rows(), a.cols());
  out.map() = a.value().map().cwiseProduct(b.value().map());
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad().map() += self.grad.map().cwiseProduct(pb.value.map());
    if (pb.requires_grad) pb.ensure_grad().map() += self.grad.map().cwiseProduct(pa.value.map());
  }, "mul");
}

Var scale(const Var& a, double s) {
  Array2 out(a.rows(), a.cols());
  out.map() = a.value().map() * s;
  return make_result(std::move(out), {a.node()}, [s](Node& self) {
    Node& pa = *self.parents[0];
    if (pa.requires_grad) pa.ensure_grad().map() += self.grad.map() * s;
  }, "scale");
}

Var add_row_bias(const Var& a, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row_bias: bias " + bias.value().shape_string() + " for input " +
                     a.value().shape_string());
  }
  Array2 out(a.rows(), a.cols());
  out.map() = a.value().map().rowwise() + bias.value().map().row(0);
  return make_result(std::move(out), {a.node(), bias.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    Node& pb = *self.parents[1];
    if (pb.requires_grad) pb.ensure_grad().map().row(0) += self.grad.map().colwise().sum();
  }, "add_row_bias");
}

Var gelu(const Var& a) {
  Array2 out(a.rows(), a.cols());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    o[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto g = pa.ensure_grad().data();
    const auto x = pa.value.data();
    const auto dy = self.grad.data();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      g[i] += dy[i] * (cdf + x[i] * pdf);
    }
  }, "gelu");
}

Var tanh(const Var& a) {
  Array2 out(a.rows(), a.cols());
  out.map() = a.value().map().array().tanh().matrix();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad().map().array() +=
        self.grad.map().array() * (1.0 - self.value.map().array().square());
  }, "tanh");
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  Array2 xhat(a.rows(), n);
  std::vector<double> inv_std(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto x = a.value().row(r);
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto xh = xhat.row(r);
    for (std::size_t c = 0; c < n; ++c) xh[c] = (x[c] - mu) * inv_std[r];
  }
  Array2 out(a.rows(), n);
  out.map() = (xhat.map().array().rowwise() * gain.value().map().row(0).array()).matrix();
  out.map().rowwise() += bias.value().map().row(0);
  return make_result(
      std::move(out), {a.node(), gain.node(), bias.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const std::size_t n = xhat.cols();
        if (pg.requires_grad) {
          pg.ensure_grad().map().row(0) +=
              self.grad.map().cwiseProduct(xhat.map()).colwise().sum();
        }
        if (pb.requires_grad) pb.ensure_grad().map().row(0) += self.grad.map().colwise().sum();
        if (!px.requires_grad) return;
        Array2& gx = px.ensure_grad();
        const auto gain = pg.value.row(0);
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < xhat.rows(); ++r) {
          const auto dy = self.grad.row(r);
          const auto xh = xhat.row(r);
          double mean_d = 0.0;
          double mean_dx = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            dxhat[c] = dy[c] * gain[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          auto out_row = gx.row(r);
          for (std::size_t c = 0; c < n; ++c) {
            out_row[c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
          }
        }
      },
      "layer_norm");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  std::vector<Array2> blocks;
  std::vector<NodePtr> parents;
  blocks.reserve(parts.size());
  for (const auto& p : parts) {
    blocks.push_back(p.value());
    parents.push_back(p.node());
  }
  Array2 out = vstack(blocks);
  return make_result(std::move(out), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& parent : self.parents) {
      const std::size_t r = parent->value.rows();
      if (parent->requires_grad) {
        parent->ensure_grad().map() += self.grad.map().middleRows(offset, r);
      }
      offset += r;
    }
  }, "concat_rows");
}

Var stack_frames(const Var& a, std::size_t k) {
  if (k == 0) throw ShapeError("stack_frames: block size must be positive");
  if (a.rows() == 0) throw ShapeError("stack_frames: empty input");
  const std::size_t t = a.rows();
  const std::size_t blocks = (t + k - 1) / k;
  // Row-major storage makes the grouping a plain copy into a padded buffer.
  Array2 out(blocks, k * a.cols(), 0.0);
  std::copy(a.value().data().begin(), a.value().data().end(), out.data().begin());
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto g = pa.ensure_grad().data();
    const auto src = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
  }, "stack_frames");
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  Array2 out = a.value().slice_rows(begin, end);
  return make_result(std::move(out), {a.node()}, [begin](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad().map().middleRows(begin, self.grad.rows()) += self.grad.map();
  }, "slice_rows");
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Array2 out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    const auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return make_result(std::move(out), {table.node()}, [kept = std::move(kept)](Node& self) {
    Node& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    Array2& g = pt.ensure_grad();
    for (std::size_t i = 0; i < kept.size(); ++i) {
      g.map().row(kept[i]) += self.grad.map().row(static_cast<Eigen::Index>(i));
    }
  }, "gather_rows");
}

Var causal_self_attention(const Var& q, const Var& k, const Var& v, std::size_t heads) {
  const std::size_t len[] = {q.rows()};
  return causal_self_attention(q, k, v, heads, len);
}

Var causal_self_attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                          std::span<const std::size_t> segments) {
  require_same_shape(q.value(), k.value(), "causal_self_attention(q,k)");
  require_same_shape(q.value(), v.value(), "causal_self_attention(q,v)");
  const std::size_t len = q.rows();
  const std::size_t dim = q.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("causal_self_attention: width " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(heads));
  }
  std::size_t total = 0;
  for (std::size_t n : segments) total += n;
  if (total != len) {
    throw ShapeError("causal_self_attention: segments cover " + std::to_string(total) +
                     " of " + std::to_string(len) + " rows");
  }
  const std::size_t hd = dim / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto HD = static_cast<Eigen::Index>(hd);

  struct Block {
    Eigen::Index begin;
    Eigen::Index size;
    std::vector<RowMajorMatrix> probs;  // one per head
  };
  std::vector<Block> blocks;
  Array2 out(len, dim);
  Eigen::Index begin = 0;
  for (std::size_t n : segments) {
    const auto L = static_cast<Eigen::Index>(n);
    Block block{begin, L, std::vector<RowMajorMatrix>(heads)};
    for (std::size_t h = 0; h < heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h * hd);
      RowMajorMatrix s = (q.value().map().block(begin, off, L, HD) *
                          k.value().map().block(begin, off, L, HD).transpose()) *
                         inv_scale;
      for (Eigen::Index i = 0; i < L; ++i) {
        double mx = s(i, 0);
        for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - mx);
          z += s(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= z;
        for (Eigen::Index j = i + 1; j < L; ++j) s(i, j) = 0.0;
      }
      out.map().block(begin, off, L, HD).noalias() = s * v.value().map().block(begin, off, L, HD);
      block.probs[h] = std::move(s);
    }
    blocks.push_back(std::move(block));
    begin += L;
  }
  return make_result(
      std::move(out), {q.node(), k.node(), v.node()},
      [blocks = std::move(blocks), heads, hd, inv_scale](Node& self) {
        Node& pq = *self.parents[0];
        Node& pk = *self.parents[1];
        Node& pv = *self.parents[2];
        const auto HD = static_cast<Eigen::Index>(hd);
        for (const Block& b : blocks) {
          for (std::size_t h = 0; h < heads; ++h) {
            const auto off = static_cast<Eigen::Index>(h * hd);
            const RowMajorMatrix& p = b.probs[h];
            const auto d_out = self.grad.map().block(b.begin, off, b.size, HD);
            if (pv.requires_grad) {
              pv.ensure_grad().map().block(b.begin, off, b.size, HD).noalias() +=
                  p.transpose() * d_out;
            }
            if (!pq.requires_grad && !pk.requires_grad) continue;
            RowMajorMatrix dp = d_out * pv.value.map().block(b.begin, off, b.size, HD).transpose();
            // softmax backward; masked entries have p = 0 and drop out.
            Eigen::VectorXd dot = (dp.cwiseProduct(p)).rowwise().sum();
            RowMajorMatrix ds = p.cwiseProduct(dp.colwise() - dot) * inv_scale;
            if (pq.requires_grad) {
              pq.ensure_grad().map().block(b.begin, off, b.size, HD).noalias() +=
                  ds * pk.value.map().block(b.begin, off, b.size, HD);
            }
            if (pk.requires_grad) {
              pk.ensure_grad().map().block(b.begin, off, b.size, HD).noalias() +=
                  ds.transpose() * pq.value.map().block(b.begin, off, b.size, HD);
            }
          }
        }
      },
      "causal_self_attention");
}

Var sum(const Var& a) {
  Array2 out(1, 1, a.value().map().sum());
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (pa.requires_grad) pa.ensure_grad().map().array() += self.grad(0, 0);
  }, "sum");
}

Var mean(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("mean: no inputs");
  double total = 0.0;
  std::vector<NodePtr> parents;
  for (const auto& s : scalars) {
    if (s.rows() != 1 || s.cols() != 1) throw ShapeError("mean: inputs must be 1x1");
    total += s.value()(0, 0);
    parents.push_back(s.node());
  }
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return make_result(Array2(1, 1, total * inv), std::move(parents), [inv](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->ensure_grad()(0, 0) += self.grad(0, 0) * inv;
    }
  }, "mean");
}

Var cross_entropy_masked(const Var& logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask) {
  const std::size_t len = logits.rows();
  const std::size_t vocab = logits.cols();
  if (targets.size() != len || mask.size() != len) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(len) + " logit rows");
  }
  std::size_t counted = 0;
  for (std::size_t i = 0; i < len; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw ShapeError("cross_entropy: target id " + std::to_string(targets[i]) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    ++counted;
  }
  if (counted == 0) throw ShapeError("cross_entropy: no target positions");

  // Row softmax is kept for the backward pass.
  Array2 probs(len, vocab);
  double total = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    if (!mask[i]) continue;
    const auto z = logits.value().row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    auto p = probs.row(i);
    for (std::size_t c = 0; c < vocab; ++c) {
      p[c] = std::exp(z[c] - mx);
      denom += p[c];
    }
    for (std::size_t c = 0; c < vocab; ++c) p[c] /= denom;
    total += (mx + std::log(denom)) - z[static_cast<std::size_t>(targets[i])];
  }
  const double inv = 1.0 / static_cast<double>(counted);
  std::vector<int> kept(targets.begin(), targets.end());
  std::vector<std::uint8_t> kept_mask(mask.begin(), mask.end());
  return make_result(
      Array2(1, 1, total * inv), {logits.node()},
      [probs = std::move(probs), kept = std::move(kept), kept_mask = std::move(kept_mask),
       inv](Node& self) {
        Node& pl = *self.parents[0];
        if (!pl.requires_grad) return;
        Array2& g = pl.ensure_grad();
        const double scale_factor = self.grad(0, 0) * inv;
        for (std::size_t i = 0; i < kept.size(); ++i) {
          if (!kept_mask[i]) continue;
          auto gr = g.row(i);
          const auto p = probs.row(i);
          for (std::size_t c = 0; c < gr.size(); ++c) gr[c] += scale_factor * p[c];
          gr[static_cast<std::size_t>(kept[i])] -= scale_factor;
        }
      },
      "cross_entropy");
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  if (targets.empty()) throw ShapeError("cross_entropy: empty target sequence");
  std::vector<std::uint8_t> mask(targets.size(), 1);
  return cross_entropy_masked(logits, targets, mask);
}

}  // namespace dct::ad
