// SPDX-License-Identifier: Apache-2.0
#include "dct/adapter.hpp"

#include <cmath>

#include "dct/vocab.hpp"

namespace dct {

void AdapterConfig::validate() const {
  if (input_dim == 0 || output_dim == 0 || stack == 0) {
    throw std::invalid_argument("AdapterConfig: dimensions must be positive");
  }
}

namespace {

ad::Var xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Array2 w(fan_in, fan_out);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return ad::Var(std::move(w), true);
}

}  // namespace

Adapter::Adapter(const AdapterConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t in = config_.stack * config_.input_dim;
  const std::size_t h = config_.hidden();
  w1_ = xavier(in, h, rng);
  b1_ = ad::Var(Array2(1, h), true);
  w2_ = xavier(h, config_.output_dim, rng);
  b2_ = ad::Var(Array2(1, config_.output_dim), true);
}

ad::Var Adapter::forward(const ad::Var& x) const {
  if (x.cols() != config_.input_dim) {
    throw ShapeError("adapter: input width " + std::to_string(x.cols()) + " != " +
                     std::to_string(config_.input_dim));
  }
  const ad::Var stacked = ad::stack_frames(x, config_.stack);
  const ad::Var hidden = ad::gelu(ad::add_row_bias(ad::matmul(stacked, w1_), b1_));
  return ad::add_row_bias(ad::matmul(hidden, w2_), b2_);
}

std::vector<std::pair<std::string, ad::Var>> Adapter::named_parameters() const {
  return {{"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_}};
}

std::vector<ad::Var> Adapter::parameters() const { return {w1_, b1_, w2_, b2_}; }

std::size_t Adapter::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value().size();
  return n;
}

void Adapter::load_values(const std::vector<Array2>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw ShapeError("adapter: expected 4 arrays");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i].value(), values[i], "adapter load");
    params[i].mutable_value() = values[i];
  }
}

Adapter Adapter::clone() const {
  Rng unused(0);
  Adapter copy(config_, unused);
  std::vector<Array2> values;
  for (const auto& p : parameters()) values.push_back(p.value());
  copy.load_values(values);
  return copy;
}

std::uint64_t Adapter::content_hash() const {
  std::uint64_t h = fnv1a(std::string_view{});
  for (const auto& p : parameters()) {
    const auto d = p.value().data();
    h = fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(d.data()),
                                            d.size_bytes()),
              h);
  }
  return h;
}

}  // namespace dct
