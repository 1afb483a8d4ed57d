// SPDX-License-Identifier: Apache-2.0
//
// Text-only chat corpus that gives the backbone its language skills before it
// is frozen. Four formats, all rendered with the chat template:
//   dialogue  caption (no system)                 -> enthusiastic reply
//   aqa       aqa_eval system, caption + question -> short answer
//   aac       aac_eval system, caption            -> house-style caption
//   other     free instructions (describe, paraphrase, list)
#pragma once

#include <string>
#include <vector>

#include "dct/vocab.hpp"
#include "dct/world.hpp"

namespace dct {

struct TextExample {
  std::vector<TokenId> tokens;  // full rendering + answer + <eos>
  std::size_t answer_offset = 0;  // first answer token; loss covers [answer_offset, end)
  std::string format;
};

struct CorpusMix {
  double dialogue = 0.30;
  double aqa = 0.35;
  double aac = 0.15;
  double other = 0.20;
};

/// "dog barking" | "dog barking and then rain" | "dog barking , rain and then wind".
std::string event_name_list(const std::vector<int>& types);
/// Reply in the dialogue register, e.g. "what a lovely scene ! i can hear rain !".
std::string dialogue_reply(const std::vector<int>& types, Rng& rng);
/// The backbone's own answer phrasing for a world question.
std::string text_answer(const Scene& scene, const std::string& question);
/// The backbone's own caption phrasing: "sounds of A followed by B .".
std::string house_caption(const std::vector<int>& types);

/// Every string the corpus and the world can emit; the vocabulary is built
/// from this list.
std::vector<std::string> vocabulary_text();

class LmCorpus {
 public:
  LmCorpus(WorldConfig world, const Vocabulary& vocab, CorpusMix mix = {});

  TextExample sample(Rng& rng) const;

 private:
  WorldConfig world_;
  const Vocabulary& vocab_;
  CorpusMix mix_;
};

}  // namespace dct
