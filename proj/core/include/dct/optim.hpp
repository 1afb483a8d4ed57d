// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dct/autodiff.hpp"

namespace dct {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of leaves.
class Adam {
 public:
  Adam(std::vector<ad::Var> params, AdamConfig config = {});

  /// One update with learning rate `lr` from the accumulated gradients.
  void step(double lr);
  void zero_grad();

  const std::vector<ad::Var>& params() const { return params_; }
  std::size_t parameter_count() const;
  std::uint64_t steps() const { return t_; }

  /// First and second moments, in parameter order.
  const std::vector<Array2>& first_moments() const { return m_; }
  const std::vector<Array2>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::vector<Array2> m, std::vector<Array2> v);

 private:
  std::vector<ad::Var> params_;
  AdamConfig config_;
  std::vector<Array2> m_;
  std::vector<Array2> v_;
  std::uint64_t t_ = 0;
};

/// Scales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<const ad::Var> params, double max_norm);

}  // namespace dct
