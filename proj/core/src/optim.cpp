// SPDX-License-Identifier: Apache-2.0
#include "dct/optim.hpp"

#include <cmath>

namespace dct {

Adam::Adam(std::vector<ad::Var> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw std::invalid_argument("Adam: parameter does not require grad");
    m_.emplace_back(p.rows(), p.cols());
    v_.emplace_back(p.rows(), p.cols());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto g = params_[i].grad().data();
    auto w = params_[i].mutable_value().data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t Adam::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

void Adam::restore(std::uint64_t steps, std::vector<Array2> m, std::vector<Array2> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ShapeError("Adam::restore: moment count mismatch");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require_same_shape(params_[i].value(), m[i], "Adam::restore(m)");
    require_same_shape(params_[i].value(), v[i], "Adam::restore(v)");
  }
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_grad_norm(std::span<const ad::Var> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad().data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      auto& node = *p.node();
      if (!node.grad.empty()) node.grad.map() *= s;
    }
  }
  return norm;
}

}  // namespace dct
