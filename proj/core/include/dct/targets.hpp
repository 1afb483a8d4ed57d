// SPDX-License-Identifier: Apache-2.0
//
// Target preparation: each training caption goes through the frozen backbone
// under the no-instruction template and one sampled response becomes the
// adapter's training target.
#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "dct/dataset.hpp"
#include "dct/lm.hpp"

namespace dct {

class EmptyGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TargetRecord {
  std::string scene_id;
  std::string caption;
  std::string response;
  std::uint64_t seed = 0;
  double temperature = 0.7;
  std::string model_hash;
  std::string template_version;

  friend bool operator==(const TargetRecord&, const TargetRecord&) = default;
};

nlohmann::ordered_json to_json(const TargetRecord& record);
TargetRecord target_record_from_json(const nlohmann::json& j);
void write_targets(const std::filesystem::path& path, const std::vector<TargetRecord>& records);
std::vector<TargetRecord> read_targets(const std::filesystem::path& path);

/// [<bos>, <usr>, caption..., </seg>, <asst>]. Throws std::invalid_argument
/// on an empty caption and ContextOverflowError past `max_context`.
ContextAssembly build_noinst_context(std::span<const TokenId> caption, std::size_t max_context);

struct TargetPrepConfig {
  double temperature = 0.7;
  std::size_t max_new_tokens = 40;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Sampling seed for one caption: a function of the base seed, the scene id
/// and the caption text only.
std::uint64_t caption_seed(std::uint64_t base, const std::string& scene_id,
                           const std::string& caption);

/// Samples r* for one caption. If the first sampled token is <eos> the draw is
/// repeated once with seed + 1; a second empty draw throws
/// EmptyGenerationError.
TargetRecord prepare_response(const std::string& scene_id, const std::string& caption,
                              const LanguageModel& lm, const Vocabulary& vocab,
                              const TargetPrepConfig& config);

struct TargetReport {
  std::size_t count = 0;         // records in the output file
  std::size_t generated = 0;     // records produced by this call
  double mean_response_length = 0.0;  // tokens
  double echo_rate = 0.0;        // fraction of responses equal to their caption

  nlohmann::ordered_json to_json() const;
};

/// One record per (scene, caption) of `scenes`, written to `out` in scene-id
/// then caption order. Records already in `out` (matched by scene id and
/// caption) are kept; an existing file made with another model throws
/// VersionMismatchError.
TargetReport prepare_dataset(const std::vector<SceneRecord>& scenes, const LanguageModel& lm,
                             const Vocabulary& vocab, const TargetPrepConfig& config,
                             const std::filesystem::path& out);

}  // namespace dct
