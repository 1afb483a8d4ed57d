// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "dct/lm.hpp"
#include "dct/lm_corpus.hpp"

namespace dct {

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 32;
  double peak_lr = 3e-3;
  std::size_t warmup = 200;
  /// Linear decay to this fraction of the peak at the last step.
  double final_lr_fraction = 0.05;
  /// Std of Gaussian noise added to input embeddings during training.
  double embedding_noise = 0.5;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t heldout = 256;
};

struct PretrainReport {
  std::vector<double> losses;  // per step
  double heldout_perplexity = 0.0;
};

using ExampleSampler = std::function<TextExample(Rng&)>;

/// Loss averaged over all answer tokens of a packed batch.
ad::Var answer_span_loss(const LanguageModel& lm, std::span<const TextExample> batch,
                         double embedding_noise, Rng* noise_rng);

/// Perplexity over the answer spans of `examples`.
double heldout_perplexity(const LanguageModel& lm, std::span<const TextExample> examples);

/// Trains a fresh model; parameters are rounded to float32 at the end so a
/// float32 checkpoint reproduces them exactly. Throws std::out_of_range when
/// an example holds an id outside the vocabulary.
LanguageModel pretrain_lm(const LMConfig& config, const ExampleSampler& sampler,
                          const PretrainConfig& options, PretrainReport* report = nullptr,
                          const std::function<void(std::size_t, double)>& progress = {});

/// Convenience: uniform draws from a fixed list of sequences.
ExampleSampler list_sampler(std::vector<TextExample> corpus);

}  // namespace dct
