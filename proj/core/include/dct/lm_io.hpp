// SPDX-License-Identifier: Apache-2.0
//
// Backbone checkpoints: config, vocabulary and float32 weights in one file.
#pragma once

#include <filesystem>
#include <memory>

#include "dct/checkpoint.hpp"
#include "dct/lm.hpp"

namespace dct {

struct LoadedLM {
  Vocabulary vocab;
  std::unique_ptr<LanguageModel> lm;
};

/// Writes header {kind, config, template_version, vocab, vocab_hash, frozen,
/// model_hash} and section "lm" at float32. Throws std::invalid_argument if a
/// weight does not survive the float32 round trip.
void save_lm(const std::filesystem::path& path, const LanguageModel& lm, const Vocabulary& vocab);

/// Restores the model (frozen again if it was saved frozen) and verifies the
/// recorded model hash. Throws VersionMismatchError on a template-version,
/// vocabulary or hash mismatch; `expected_vocab` adds a vocabulary check.
LoadedLM load_lm(const std::filesystem::path& path, const Vocabulary* expected_vocab = nullptr);

nlohmann::json to_json(const LMConfig& config);
LMConfig lm_config_from_json(const nlohmann::json& j);

/// Hex form of the content hash, as recorded in target files.
std::string model_hash_hex(const LanguageModel& lm);

}  // namespace dct
