// SPDX-License-Identifier: Apache-2.0
//
// Gradient-free incremental inference over a LanguageModel with a key/value
// cache, plus the three decoding strategies built on it.
#pragma once

#include <vector>

#include "dct/lm.hpp"

namespace dct {

/// Per-layer keys and values of every position seen so far, row-major,
/// `length` rows of D values each.
struct KVCache {
  std::vector<AlignedVector> keys;
  std::vector<AlignedVector> values;
  std::size_t length = 0;
};

class Decoder {
 public:
  explicit Decoder(const LanguageModel& lm);

  KVCache start() const;
  /// Appends input rows (n x D, no positions added yet) and returns the
  /// next-token logits after the last row. Throws ContextOverflowError when
  /// the cache would exceed max_context.
  std::vector<double> extend(KVCache& cache, const Array2& rows) const;
  std::vector<double> extend_token(KVCache& cache, TokenId id) const;

  const LanguageModel& model() const { return lm_; }

 private:
  const LanguageModel& lm_;
};

/// Context rows for an assembly, detached from any graph.
Array2 context_rows(const LanguageModel& lm, const ContextAssembly& assembly);

/// Ids that never belong in generated text: the chat markers other than
/// <eos>, <pad> and <unk>.
std::vector<TokenId> markup_ids(const Vocabulary& vocab);

/// Argmax decoding; stops at <eos> (excluded) or after max_new tokens.
/// `banned` ids get zero probability in every strategy.
std::vector<TokenId> generate_greedy(const LanguageModel& lm, const Array2& context,
                                     std::size_t max_new, std::span<const TokenId> banned = {});

/// Temperature sampling. Deterministic given the rng state. temperature > 0.
std::vector<TokenId> generate_sample(const LanguageModel& lm, const Array2& context,
                                     double temperature, std::size_t max_new, Rng& rng,
                                     std::span<const TokenId> banned = {});

struct BeamResult {
  std::vector<TokenId> tokens;  // without <eos>
  double score = 0.0;           // average log-probability per generated token (incl. <eos>)
  bool finished = true;         // false: no hypothesis reached <eos>; best unfinished returned
};

/// Beam search ranked by length-normalized log-probability; ties go to the
/// lexicographically smallest token sequence. Stops once `beam` hypotheses
/// have finished, no live hypothesis remains, or max_new tokens are reached.
BeamResult generate_beam(const LanguageModel& lm, const Array2& context, std::size_t beam,
                         std::size_t max_new, std::span<const TokenId> banned = {});

}  // namespace dct
