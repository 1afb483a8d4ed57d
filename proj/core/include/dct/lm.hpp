// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer used as the frozen backbone. Pre-norm blocks,
// learned positions, output projection tied to the token embedding table.
// Sequences are row-major: one row per position, D columns.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dct/autodiff.hpp"
#include "dct/sampling.hpp"
#include "dct/vocab.hpp"

namespace dct {

struct LMConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t max_context = 256;
  std::size_t vocab_size = 0;

  /// Throws std::invalid_argument on zero sizes or d_model % heads != 0.
  void validate() const;
  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

class ContextOverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenSegment {
  std::vector<TokenId> ids;
};

/// n x D rows injected as-is in place of token embeddings.
struct EmbeddingSegment {
  ad::Var rows;
};

class ContextAssembly {
 public:
  using Segment = std::variant<TokenSegment, EmbeddingSegment>;

  ContextAssembly& tokens(std::vector<TokenId> ids);
  ContextAssembly& embeddings(ad::Var rows);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t length() const;

 private:
  std::vector<Segment> segments_;
};

struct LayerParams {
  ad::Var ln1_gain, ln1_bias;
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Var ln2_gain, ln2_bias;
  ad::Var w1, b1, w2, b2;
};

class LanguageModel {
 public:
  /// Embeddings and positions ~ N(0, 1); projections ~ U(+-1/sqrt(fan_in));
  /// biases zero; layer-norm gains one.
  LanguageModel(const LMConfig& config, Rng& rng);

  const LMConfig& config() const { return config_; }

  /// Parameters in declared (checkpoint) order.
  std::vector<std::pair<std::string, ad::Var>> named_parameters() const;
  std::vector<ad::Var> parameters() const;
  std::size_t parameter_count() const;

  /// Clears requires-grad everywhere, sets the frozen flag and records the
  /// content hash.
  void freeze();
  bool frozen() const { return frozen_; }
  /// FNV-1a over the float64 bytes of every parameter in declared order.
  std::uint64_t content_hash() const;
  std::uint64_t frozen_hash() const { return frozen_hash_; }

  /// Input rows for an assembly: token lookups and injected rows, no positions.
  ad::Var embed(const ContextAssembly& assembly) const;
  /// Logits (L x |V|) at every position of the assembly. Throws
  /// ContextOverflowError past max_context and ShapeError on a width mismatch.
  ad::Var forward(const ContextAssembly& assembly) const;
  /// Runs several independent sequences packed into one pass. `inputs` are
  /// their input rows (as from embed) stacked in order.
  ad::Var forward_packed(const ad::Var& inputs, std::span<const std::size_t> lengths) const;

  /// Plain token embedding rows, detached.
  Array2 token_embeddings(std::span<const TokenId> ids) const;

  const ad::Var& token_table() const { return tok_emb_; }
  const ad::Var& position_table() const { return pos_emb_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const ad::Var& final_gain() const { return lnf_gain_; }
  const ad::Var& final_bias() const { return lnf_bias_; }

  /// Overwrites parameter values (shapes must match) in declared order.
  void load_values(const std::vector<Array2>& values);

 private:
  ad::Var run_blocks(ad::Var x, std::span<const std::size_t> lengths) const;

  LMConfig config_;
  ad::Var tok_emb_;
  ad::Var pos_emb_;
  std::vector<LayerParams> layers_;
  ad::Var lnf_gain_;
  ad::Var lnf_bias_;
  bool frozen_ = false;
  std::uint64_t frozen_hash_ = 0;
};

/// Mean cross-entropy of `target` (which should end with <eos>) teacher-forced
/// after `context`. Normalized by |target|.
ad::Var sequence_loss(const LanguageModel& lm, const ContextAssembly& context,
                      std::span<const TokenId> target);

/// Log-probabilities (|target| x |V|) of each target position under teacher
/// forcing, without gradient.
Array2 teacher_forced_log_probs(const LanguageModel& lm, const ContextAssembly& context,
                                std::span<const TokenId> target);

}  // namespace dct
