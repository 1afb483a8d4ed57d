// SPDX-License-Identifier: Apache-2.0
//
// Token-level chat layout (version dct-chat-v1, documented in
// docs/chat_template.md):
//
//   <bos> [<sys> system... </seg>] <usr> user... </seg> <asst>
//
// The system block is omitted entirely when there is no system message; that
// omission is the no-instruction template.
#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dct/vocab.hpp"

namespace dct {

inline constexpr const char* kTemplateVersion = "dct-chat-v1";

enum class Role { kSystem, kUser, kAssistant };

struct AudioSlot {
  friend bool operator==(AudioSlot, AudioSlot) { return true; }
};

using MessagePart = std::variant<std::string, AudioSlot>;

struct ChatMessage {
  Role role = Role::kUser;
  std::vector<MessagePart> content;

  static ChatMessage system(std::string text);
  static ChatMessage user(std::vector<MessagePart> parts);
  static ChatMessage user_text(std::string text);
  /// Empty assistant turn; marks where generation starts.
  static ChatMessage generation_cue();
};

class TemplateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tokens before and after the audio slot. With no slot the whole rendering is
/// in `prefix` and `suffix` is empty.
struct PromptPair {
  std::vector<TokenId> prefix;
  std::vector<TokenId> suffix;
  bool has_audio_slot = false;

  std::size_t prefix_length() const { return prefix.size(); }
  std::size_t suffix_length() const { return suffix.size(); }
};

/// Renders messages into the bit-exact layout above and always appends the
/// assistant generation cue. Throws TemplateError on a second audio slot, a
/// non-empty assistant turn, a misplaced system message or no user message.
PromptPair render_chat(const std::vector<ChatMessage>& messages, const Vocabulary& vocab,
                       bool strict = true);

/// Prompt for an audio (or payload) slot with an optional system instruction
/// and optional user text after the slot.
std::vector<ChatMessage> slot_conversation(const std::optional<std::string>& system,
                                           const std::string& after_slot = "");

/// Full token sequence for a text-only turn: rendering + answer + <eos>.
std::vector<TokenId> render_training_sequence(const std::optional<std::string>& system,
                                              const std::string& user,
                                              const std::string& assistant,
                                              const Vocabulary& vocab,
                                              std::size_t* answer_offset = nullptr);

}  // namespace dct
