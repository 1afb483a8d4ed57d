// SPDX-License-Identifier: Apache-2.0
//
// The trainable bridge from encoder space into the LM embedding space:
// stack 5 consecutive frames, then affine -> GELU -> affine.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dct/autodiff.hpp"
#include "dct/sampling.hpp"

namespace dct {

struct AdapterConfig {
  std::size_t input_dim = 32;   // D'
  std::size_t output_dim = 64;  // D, the LM width
  std::size_t hidden_dim = 0;   // H; 0 means H = D
  std::size_t stack = 5;

  std::size_t hidden() const { return hidden_dim == 0 ? output_dim : hidden_dim; }
  void validate() const;
};

class Adapter {
 public:
  /// Xavier-uniform weights, zero biases.
  Adapter(const AdapterConfig& config, Rng& rng);

  /// T' x D' -> ceil(T'/stack) x D. Throws ShapeError on a width mismatch.
  ad::Var forward(const ad::Var& x) const;
  Array2 forward(const Array2& x) const { return forward(ad::Var(x)).value(); }

  const AdapterConfig& config() const { return config_; }
  /// w1, b1, w2, b2.
  std::vector<std::pair<std::string, ad::Var>> named_parameters() const;
  std::vector<ad::Var> parameters() const;
  std::size_t parameter_count() const;
  void load_values(const std::vector<Array2>& values);
  /// Deep copy; the copy shares no graph nodes with this adapter.
  Adapter clone() const;
  std::uint64_t content_hash() const;

 private:
  AdapterConfig config_;
  ad::Var w1_, b1_, w2_, b2_;
};

}  // namespace dct
