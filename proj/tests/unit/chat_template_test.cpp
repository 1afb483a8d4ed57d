// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dct/chat_template.hpp"
#include "dct/prompts.hpp"

namespace dct {
namespace {

using namespace special;

Vocabulary test_vocab() {
  std::vector<std::string> corpus = {"waves crash . question : are there waves ?",
                                     "a dog barking and then birds chirping"};
  for (const auto& p : prompt_registry()) corpus.push_back(*p.system);
  return Vocabulary::build(corpus);
}

std::vector<TokenId> cat(std::vector<TokenId> a, const std::vector<TokenId>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST(ChatTemplate, NoInstructionAudioOnly) {
  const auto v = test_vocab();
  const auto pp = render_chat(slot_conversation(std::nullopt), v);
  EXPECT_TRUE(pp.has_audio_slot);
  EXPECT_EQ(pp.prefix, (std::vector<TokenId>{kBos, kUsrOpen}));
  EXPECT_EQ(pp.suffix, (std::vector<TokenId>{kSegClose, kAsstOpen}));
}

TEST(ChatTemplate, NoInstructionCaptionText) {
  const auto v = test_vocab();
  const auto pp = render_chat({ChatMessage::user_text("waves crash"), ChatMessage::generation_cue()}, v);
  EXPECT_FALSE(pp.has_audio_slot);
  EXPECT_TRUE(pp.suffix.empty());
  EXPECT_EQ(pp.prefix, (std::vector<TokenId>{kBos, kUsrOpen, v.id("waves"), v.id("crash"),
                                             kSegClose, kAsstOpen}));
}

TEST(ChatTemplate, AqaLayout) {
  const auto v = test_vocab();
  const auto& spec = prompt("aqa_eval");
  const auto pp = render_chat(prompt_messages(spec, "Are there waves?"), v);
  const auto sys = v.tokenize("answer the question provided after the audio caption within 10 words .");
  EXPECT_EQ(pp.prefix, cat(cat({kBos, kSysOpen}, sys), {kSegClose, kUsrOpen}));
  EXPECT_EQ(pp.suffix, cat(v.tokenize(". question : are there waves ?"), {kSegClose, kAsstOpen}));
}

TEST(ChatTemplate, CaptionTrainingSystemBlock) {
  const auto v = test_vocab();
  const auto pp = render_chat(prompt_messages(prompt("caption_train")), v);
  EXPECT_EQ(pp.prefix, cat(cat({kBos, kSysOpen}, v.tokenize("describe the audio you hear")),
                           {kSegClose, kUsrOpen}));
  EXPECT_EQ(pp.suffix, (std::vector<TokenId>{kSegClose, kAsstOpen}));
}

TEST(ChatTemplate, RejectsTwoSlots) {
  const auto v = test_vocab();
  EXPECT_THROW(render_chat({ChatMessage::user({AudioSlot{}, AudioSlot{}})}, v), TemplateError);
  EXPECT_THROW(render_chat({ChatMessage::user({AudioSlot{}}), ChatMessage::user({AudioSlot{}})}, v),
               TemplateError);
}

TEST(ChatTemplate, RejectsAssistantContentAndBadOrder) {
  const auto v = test_vocab();
  EXPECT_THROW(render_chat({ChatMessage::user_text("waves"),
                            ChatMessage{Role::kAssistant, {std::string("waves crash")}}},
                           v),
               TemplateError);
  EXPECT_THROW(render_chat({ChatMessage::user_text("waves"), ChatMessage::system("waves")}, v),
               TemplateError);
  EXPECT_THROW(render_chat({ChatMessage::system("waves")}, v), TemplateError);
  EXPECT_THROW(render_chat({ChatMessage{Role::kSystem, {AudioSlot{}}}, ChatMessage::user_text("a")}, v),
               TemplateError);
}

TEST(ChatTemplate, GenerationCueOptionalAndIdempotent) {
  const auto v = test_vocab();
  const auto with = render_chat({ChatMessage::user_text("waves"), ChatMessage::generation_cue()}, v);
  const auto without = render_chat({ChatMessage::user_text("waves")}, v);
  EXPECT_EQ(with.prefix, without.prefix);
}

TEST(ChatTemplate, TrainingSequenceAppendsAnswerAndEos) {
  const auto v = test_vocab();
  std::size_t offset = 0;
  const auto seq = render_training_sequence(std::nullopt, "waves crash", "waves", v, &offset);
  EXPECT_EQ(offset, 6u);
  EXPECT_EQ(seq, (std::vector<TokenId>{kBos, kUsrOpen, v.id("waves"), v.id("crash"), kSegClose,
                                       kAsstOpen, v.id("waves"), kEos}));
}

TEST(ChatTemplate, AssemblyLengthIsFourPlusCaption) {
  const auto v = test_vocab();
  for (const std::string caption : {"waves", "a dog barking and then birds chirping"}) {
    const auto pp = render_chat({ChatMessage::user_text(caption)}, v);
    EXPECT_EQ(pp.prefix.size(), 4 + v.tokenize(caption).size());
  }
}

TEST(PromptRegistry, VerbatimStrings) {
  EXPECT_EQ(*prompt("caption_train").system, "Describe the audio you hear");
  EXPECT_EQ(*prompt("aac_eval").system, "Describe the audio content in one 10-word sentence.");
  EXPECT_EQ(*prompt("aqa_eval").system,
            "Answer the question provided after the audio caption within 10 words.");
  EXPECT_EQ(prompt("aqa_eval").user, "{AUDIO}. Question: {INSTRUCTION}");
  EXPECT_THROW(prompt("nope"), std::out_of_range);
}

TEST(PromptRegistry, MatchesVersionedFile) {
  std::ifstream in(std::string(DCT_SOURCE_DIR) + "/docs/prompts.json", std::ios::binary);
  ASSERT_TRUE(in) << "docs/prompts.json missing";
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), prompt_registry_json());
}

TEST(PromptRegistry, FragmentsSkipBarePunctuation) {
  const auto frags = task_prompt_fragments();
  for (const auto& f : frags) EXPECT_GE(normalize_words(f).size(), 2u) << f;
  EXPECT_EQ(frags.size(), 4u);  // three systems + ". Question:"
}

}  // namespace
}  // namespace dct
