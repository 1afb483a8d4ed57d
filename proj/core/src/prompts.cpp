// SPDX-License-Identifier: Apache-2.0
#include "dct/prompts.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

namespace dct {

namespace {

constexpr std::string_view kAudio = "{AUDIO}";
constexpr std::string_view kInstruction = "{INSTRUCTION}";

std::string replace_all(std::string text, std::string_view from, const std::string& to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos;
       pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

}  // namespace

const std::vector<PromptSpec>& prompt_registry() {
  static const std::vector<PromptSpec> registry = {
      {"caption_train", "Describe the audio you hear", "{AUDIO}"},
      {"aac_eval", "Describe the audio content in one 10-word sentence.", "{AUDIO}."},
      {"aqa_eval", "Answer the question provided after the audio caption within 10 words.",
       "{AUDIO}. Question: {INSTRUCTION}"},
  };
  return registry;
}

const PromptSpec& prompt(const std::string& name) {
  for (const auto& p : prompt_registry()) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("unknown prompt '" + name + "'");
}

std::vector<ChatMessage> prompt_messages(const PromptSpec& spec, const std::string& instruction) {
  const std::string user = replace_all(spec.user, kInstruction, instruction);
  const auto at = user.find(kAudio);
  if (at == std::string::npos || user.find(kAudio, at + 1) != std::string::npos) {
    throw TemplateError("prompt '" + spec.name + "' must contain exactly one {AUDIO}");
  }
  std::vector<MessagePart> parts;
  if (at > 0) parts.emplace_back(user.substr(0, at));
  parts.emplace_back(AudioSlot{});
  if (at + kAudio.size() < user.size()) parts.emplace_back(user.substr(at + kAudio.size()));

  std::vector<ChatMessage> messages;
  if (spec.system) messages.push_back(ChatMessage::system(*spec.system));
  messages.push_back(ChatMessage::user(std::move(parts)));
  messages.push_back(ChatMessage::generation_cue());
  return messages;
}

std::string prompt_registry_json() {
  nlohmann::ordered_json prompts = nlohmann::ordered_json::array();
  for (const auto& p : prompt_registry()) {
    nlohmann::ordered_json entry;
    entry["name"] = p.name;
    entry["system"] = p.system ? nlohmann::ordered_json(*p.system) : nlohmann::ordered_json();
    entry["user"] = p.user;
    prompts.push_back(entry);
  }
  nlohmann::ordered_json doc;
  doc["version"] = kPromptRegistryVersion;
  doc["template_version"] = kTemplateVersion;
  doc["prompts"] = prompts;
  return doc.dump(2) + "\n";
}

std::vector<std::string> task_prompt_fragments() {
  std::vector<std::string> out;
  for (const auto& p : prompt_registry()) {
    if (p.system) out.push_back(*p.system);
    std::string user = replace_all(replace_all(p.user, kAudio, " "), kInstruction, " ");
    if (normalize_words(user).size() >= 2) out.push_back(user);
  }
  return out;
}

}  // namespace dct
