// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle used by the gradient tests. It never calls
// backward on the perturbed evaluations, so it stays independent of the
// analytic path it checks.
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dct/autodiff.hpp"

namespace dct::testing {

using ScalarFn = std::function<ad::Var(std::span<const ad::Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against (f(x+h) - f(x-h)) / 2h for every element of
/// every input. Relative error uses max(|analytic|, |numeric|, floor).
GradCheckReport gradcheck(const ScalarFn& f, const std::vector<Array2>& inputs,
                          double h = 1e-5, double floor = 1e-6);

Array2 random_array(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0);

}  // namespace dct::testing
