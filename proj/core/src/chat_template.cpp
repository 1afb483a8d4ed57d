// SPDX-License-Identifier: Apache-2.0
#include "dct/chat_template.hpp"

#include <algorithm>

namespace dct {

ChatMessage ChatMessage::system(std::string text) {
  return ChatMessage{Role::kSystem, {std::move(text)}};
}

ChatMessage ChatMessage::user(std::vector<MessagePart> parts) {
  return ChatMessage{Role::kUser, std::move(parts)};
}

ChatMessage ChatMessage::user_text(std::string text) {
  return ChatMessage{Role::kUser, {std::move(text)}};
}

ChatMessage ChatMessage::generation_cue() { return ChatMessage{Role::kAssistant, {}}; }

PromptPair render_chat(const std::vector<ChatMessage>& messages, const Vocabulary& vocab,
                       bool strict) {
  PromptPair out;
  std::vector<TokenId>* sink = &out.prefix;
  sink->push_back(special::kBos);
  bool saw_user = false;

  for (std::size_t i = 0; i < messages.size(); ++i) {
    const ChatMessage& msg = messages[i];
    switch (msg.role) {
      case Role::kSystem:
        if (i != 0) throw TemplateError("render_chat: system message must come first");
        sink->push_back(special::kSysOpen);
        break;
      case Role::kUser:
        saw_user = true;
        sink->push_back(special::kUsrOpen);
        break;
      case Role::kAssistant: {
        const bool empty = std::all_of(msg.content.begin(), msg.content.end(), [](const auto& p) {
          const auto* text = std::get_if<std::string>(&p);
          return text != nullptr && normalize_words(*text).empty();
        });
        if (!empty) {
          throw TemplateError("render_chat: assistant turn with content before generation");
        }
        if (i + 1 != messages.size()) {
          throw TemplateError("render_chat: generation cue must be the last message");
        }
        continue;
      }
    }
    for (const auto& part : msg.content) {
      if (std::holds_alternative<AudioSlot>(part)) {
        if (msg.role != Role::kUser) throw TemplateError("render_chat: audio slot outside user turn");
        if (out.has_audio_slot) throw TemplateError("render_chat: more than one audio slot");
        out.has_audio_slot = true;
        sink = &out.suffix;
      } else {
        const auto ids = vocab.tokenize(std::get<std::string>(part), strict);
        sink->insert(sink->end(), ids.begin(), ids.end());
      }
    }
    sink->push_back(special::kSegClose);
  }
  if (!saw_user) throw TemplateError("render_chat: no user message");
  sink->push_back(special::kAsstOpen);
  return out;
}

std::vector<ChatMessage> slot_conversation(const std::optional<std::string>& system,
                                           const std::string& after_slot) {
  std::vector<ChatMessage> messages;
  if (system) messages.push_back(ChatMessage::system(*system));
  std::vector<MessagePart> parts = {AudioSlot{}};
  if (!after_slot.empty()) parts.emplace_back(after_slot);
  messages.push_back(ChatMessage::user(std::move(parts)));
  messages.push_back(ChatMessage::generation_cue());
  return messages;
}

std::vector<TokenId> render_training_sequence(const std::optional<std::string>& system,
                                              const std::string& user,
                                              const std::string& assistant,
                                              const Vocabulary& vocab,
                                              std::size_t* answer_offset) {
  std::vector<ChatMessage> messages;
  if (system) messages.push_back(ChatMessage::system(*system));
  messages.push_back(ChatMessage::user_text(user));
  auto seq = render_chat(messages, vocab).prefix;
  if (answer_offset) *answer_offset = seq.size();
  const auto answer = vocab.tokenize(assistant);
  seq.insert(seq.end(), answer.begin(), answer.end());
  seq.push_back(special::kEos);
  return seq;
}

}  // namespace dct
