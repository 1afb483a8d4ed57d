// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dct/chat_template.hpp"

namespace dct {

inline constexpr const char* kPromptRegistryVersion = "dct-prompts-v1";

/// A task prompt. `user` may contain the placeholders {AUDIO} (exactly once)
/// and {INSTRUCTION}.
struct PromptSpec {
  std::string name;
  std::optional<std::string> system;
  std::string user;
};

/// Registry order is fixed: caption_train, aac_eval, aqa_eval.
const std::vector<PromptSpec>& prompt_registry();
const PromptSpec& prompt(const std::string& name);

/// Expands {INSTRUCTION} and splits the user text at {AUDIO}.
std::vector<ChatMessage> prompt_messages(const PromptSpec& spec,
                                         const std::string& instruction = "");

/// Registry as JSON text, byte-identical to docs/prompts.json.
std::string prompt_registry_json();

/// Every system string plus each user string with placeholders removed, kept
/// when it normalizes to at least two words (a lone "." is caption text too).
/// Used by the no-instruction and zero-shot audits.
std::vector<std::string> task_prompt_fragments();

}  // namespace dct
