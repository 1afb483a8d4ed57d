// SPDX-License-Identifier: Apache-2.0
//
// Adapter training under the caption objective (baseline) or the dialogue
// continuation objective, with warmup + linear decay, gradient clipping,
// periodic validation and resumable state.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dct/adapter.hpp"
#include "dct/checkpoint.hpp"
#include "dct/lm.hpp"
#include "dct/optim.hpp"
#include "dct/targets.hpp"
#include "dct/world.hpp"

namespace dct {

enum class TrainMode { kCaption, kDct };
std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(std::string_view s);

struct TrainConfig {
  TrainMode mode = TrainMode::kDct;
  std::size_t batch_size = 4;
  std::size_t warmup_iters = 1000;
  double peak_lr = 1e-4;
  std::size_t decay_iters = 100000;
  std::size_t val_every = 1000;
  std::size_t max_iters = 2000;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t hidden_dim = 0;  // 0: same as the LM width
  std::size_t val_items = 0;   // 0: whole validation split
  bool keep_best = true;       // false: the final iterate is the output model

  /// Throws std::invalid_argument on non-positive sizes or warmup >= decay.
  void validate() const;
};

/// Flat `key = value` text; '#' starts a comment. Unknown keys throw.
TrainConfig parse_train_config(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);
/// Every key, one per line, in a form parse_train_config reads back.
std::string format_train_config(const TrainConfig& config);

/// peak * i / warmup up to warmup, then peak * max(0, 1 - (i - warmup) / decay).
double lr_schedule(const TrainConfig& config, std::size_t iteration);

/// [P; audio; S] with the caption-training system prompt.
ContextAssembly build_caption_context(const ad::Var& audio, const Vocabulary& vocab);
/// No-instruction layout with the audio rows where the caption would be.
ContextAssembly build_dct_context(const ad::Var& audio, const Vocabulary& vocab);

struct TrainExample {
  std::string scene_id;
  Array2 audio;                 // encoder output, T' x D'
  std::vector<TokenId> target;  // ends with <eos>
};

/// One example per (scene, caption). Caption mode targets the caption; dct
/// mode targets the stored response and requires one record per caption
/// made with `lm`. Throws DatasetError on a missing record and
/// VersionMismatchError on a model-hash mismatch.
std::vector<TrainExample> build_examples(TrainMode mode, const std::vector<LoadedScene>& scenes,
                                         const FrozenEncoder& encoder, const Vocabulary& vocab,
                                         const LanguageModel& lm,
                                         const std::vector<TargetRecord>* targets);

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsRow {
  std::size_t iteration = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

class Trainer {
 public:
  /// `lm` must be frozen and outlive the trainer.
  Trainer(TrainConfig config, const LanguageModel& lm, const Vocabulary& vocab,
          std::vector<TrainExample> train, std::vector<TrainExample> val);

  /// One optimizer step; returns the batch loss.
  double step();
  /// Mean per-sample loss over the validation examples.
  double validate() const;
  /// Trains until max_iters, validating every val_every iterations and at
  /// the end. `on_metrics` sees every iteration; `on_validation` runs after
  /// each validation (checkpointing hooks in there).
  void run(const std::function<void(const MetricsRow&)>& on_metrics = {},
           const std::function<void(const Trainer&, double)>& on_validation = {});

  /// Per-sample loss of one example under the current adapter.
  ad::Var example_loss(const TrainExample& ex) const;

  const TrainConfig& config() const { return config_; }
  std::size_t iteration() const { return iteration_; }
  const Adapter& adapter() const { return adapter_; }
  Adapter& adapter() { return adapter_; }
  const Adapter& best_adapter() const { return best_; }
  std::optional<double> best_val_loss() const { return best_val_; }
  std::size_t best_iteration() const { return best_iter_; }
  /// The adapter the run hands on: best-validation or final per keep_best.
  const Adapter& output_adapter() const;

  /// Full resumable state: adapter, best adapter, optimizer moments, rng.
  Checkpoint state_checkpoint() const;
  /// Restores state written by state_checkpoint. Throws VersionMismatchError
  /// when the backbone, vocabulary or mode differ.
  void restore(const Checkpoint& state);

 private:
  TrainConfig config_;
  const LanguageModel& lm_;
  const Vocabulary& vocab_;
  std::vector<TrainExample> train_;
  std::vector<TrainExample> val_;
  Adapter adapter_;
  Adapter best_;
  Adam optimizer_;
  Rng rng_;
  std::size_t iteration_ = 0;
  std::optional<double> best_val_;
  std::size_t best_iter_ = 0;
};

/// Adapter file used by inference and evaluation: header with the adapter
/// config and the backbone/vocabulary/encoder hashes, section "adapter" at
/// float64.
Checkpoint adapter_checkpoint(const Adapter& adapter, const LanguageModel& lm,
                              const Vocabulary& vocab, const FrozenEncoder& encoder,
                              TrainMode mode);
/// Throws VersionMismatchError when the hashes disagree with the given parts.
Adapter load_adapter(const Checkpoint& ckpt, const LanguageModel& lm, const Vocabulary& vocab,
                     const FrozenEncoder& encoder);

}  // namespace dct
