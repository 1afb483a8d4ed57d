// SPDX-License-Identifier: Apache-2.0
//
// Instruction-following inference with a trained adapter and the evaluation
// suites: AQA accuracy under a deterministic judge, AAC token-F1 and the
// distillation-consistency probe.
#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "dct/adapter.hpp"
#include "dct/dataset.hpp"
#include "dct/lm.hpp"
#include "dct/targets.hpp"

namespace dct {

/// Lowercased words with punctuation removed.
std::vector<std::string> judge_words(std::string_view text);

/// yes/no: the first "yes" or "no" word decides; a prediction holding both
/// is incorrect. count: the first all-digit word. order: the canonical event
/// name as a whole-word substring.
bool judge_aqa(std::string_view prediction, const std::string& gold, AnswerKind kind);

/// Function words ignored by token_f1.
const std::vector<std::string>& f1_stopwords();
/// Bag-of-words F1 in [0, 1] over content words. Two empty bags score 0.
double token_f1(std::string_view prediction, std::string_view reference);

struct DecodeConfig {
  std::size_t beam = 4;
  std::size_t max_new_tokens = 40;
};

struct InstructionSpec {
  std::optional<std::string> system;
  std::string after_audio;  // user text following the audio slot

  /// A registry prompt with {INSTRUCTION} expanded.
  static InstructionSpec from_prompt(const std::string& name, const std::string& instruction = "");
  static InstructionSpec no_instruction() { return {}; }
  std::string describe() const;
};

struct ModelBundle {
  const LanguageModel& lm;
  const Vocabulary& vocab;
  const FrozenEncoder& encoder;
  const Adapter& adapter;
};

/// Adapter output for raw features, in LM embedding space.
Array2 audio_rows(const ModelBundle& bundle, const Array2& features);

/// Beam-decoded response token ids (no <eos>).
std::vector<TokenId> infer_tokens(const ModelBundle& bundle, const Array2& features,
                                  const InstructionSpec& instruction, const DecodeConfig& decode);
std::string infer(const ModelBundle& bundle, const Array2& features,
                  const InstructionSpec& instruction, const DecodeConfig& decode = {});

struct EvalItem {
  std::string id;
  std::string instruction;
  std::string prediction;
  std::string gold;
  std::string kind;
  /// aqa: correct (1/0); aac: f1; distill: kl, ce_gap.
  std::map<std::string, double> scores;
};

struct EvalReport {
  std::string suite;
  std::vector<EvalItem> items;
  std::map<std::string, double> aggregates;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// suite,metric,value rows.
  std::string aggregates_csv() const;
  /// Aggregates recomputed from the items alone: the mean of every score
  /// (percent for aqa and aac), per-kind accuracies for aqa, and the count n.
  std::map<std::string, double> recompute() const;
};

/// Accuracy over every QA pair of `scenes`, in percent.
EvalReport eval_aqa(const ModelBundle& bundle, const std::vector<LoadedScene>& scenes,
                    const DecodeConfig& decode = {});
/// Mean token-F1 against the canonical caption, in percent.
EvalReport eval_aac(const ModelBundle& bundle, const std::vector<LoadedScene>& scenes,
                    const DecodeConfig& decode = {});

struct Divergence {
  double ce_gap = 0.0;  // mean |CE_audio - CE_text| per response token
  double kl = 0.0;      // mean KL(text || audio) per position
};

/// Teacher-forces `response` (which should end with <eos>) after the
/// no-instruction context holding `audio` rows and after the one holding the
/// caption tokens, and compares the two.
Divergence distill_divergence(const LanguageModel& lm, const Array2& audio,
                              std::span<const TokenId> caption, std::span<const TokenId> response);

/// One item per target record whose scene is in `scenes`; aggregates kl and
/// ce_gap. Throws DatasetError for a caption without a target.
EvalReport eval_distill(const ModelBundle& bundle, const std::vector<LoadedScene>& scenes,
                        const std::vector<TargetRecord>& targets);

}  // namespace dct
