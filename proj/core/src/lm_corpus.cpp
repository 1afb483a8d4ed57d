// SPDX-License-Identifier: Apache-2.0
#include "dct/lm_corpus.hpp"

#include <algorithm>

#include "dct/chat_template.hpp"
#include "dct/prompts.hpp"

namespace dct {

namespace {

const std::vector<std::string>& dialogue_templates() {
  static const std::vector<std::string> t = {
      "what a lovely scene ! i can hear {L} !",
      "oh wow , {L} ! it sounds so lively !",
      "how relaxing ! {L} make a calm mood .",
      "i love this ! {L} , what a soundscape !",
      "sounds like {L} ! quite a scene , right ?",
      "{L} ! such a vivid moment .",
      "nice ! there is {L} , so peaceful .",
      "hmm , {L} ? that sounds busy !",
  };
  return t;
}

const char* const kParaphrase = "paraphrase the caption .";
const char* const kList = "list the sounds .";

std::string replace_first(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  if (pos != std::string::npos) s.replace(pos, from.size(), to);
  return s;
}

const std::string& name_of(int type) {
  return event_catalog()[static_cast<std::size_t>(type)].name;
}

std::string joined(const std::vector<int>& types, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (i > 0) out += sep;
    out += name_of(types[i]);
  }
  return out;
}

}  // namespace

std::string event_name_list(const std::vector<int>& types) {
  if (types.empty()) throw std::invalid_argument("event_name_list: no events");
  if (types.size() == 1) return name_of(types[0]);
  const std::vector<int> head(types.begin(), types.end() - 1);
  return joined(head, " , ") + " and then " + name_of(types.back());
}

std::string dialogue_reply(const std::vector<int>& types, Rng& rng) {
  const auto& t = dialogue_templates();
  return replace_first(t[rng.below(t.size())], "{L}", event_name_list(types));
}

std::string house_caption(const std::vector<int>& types) {
  return "sounds of " + joined(types, " followed by ") + " .";
}

std::string text_answer(const Scene& scene, const std::string& question) {
  const auto types = scene.event_types();
  if (types.empty()) throw std::invalid_argument("text_answer: scene has no events");
  if (question == "how many sounds are there ?") {
    return types.size() == 1 ? "there is 1 sound ."
                             : "there are " + std::to_string(types.size()) + " sounds .";
  }
  if (question == "what comes first ?") return name_of(types.front()) + " comes first .";
  if (question == "what comes last ?") return name_of(types.back()) + " comes last .";
  const auto& cat = event_catalog();
  for (std::size_t i = 0; i < cat.size(); ++i) {
    if (cat[i].question != question) continue;
    const bool present = std::find(types.begin(), types.end(), static_cast<int>(i)) != types.end();
    return present ? "yes , there is " + cat[i].name + " !" : "no , there is no " + cat[i].name + " .";
  }
  throw std::invalid_argument("text_answer: unknown question '" + question + "'");
}

std::vector<std::string> vocabulary_text() {
  std::vector<std::string> out;
  for (const auto& e : event_catalog()) {
    for (const auto* s : {&e.name, &e.phrase, &e.phrase_synonym, &e.clause, &e.clause_synonym,
                          &e.question}) {
      out.push_back(*s);
    }
  }
  for (const auto& t : dialogue_templates()) out.push_back(replace_first(t, "{L}", ""));
  for (const auto& p : prompt_registry()) {
    if (p.system) out.push_back(*p.system);
    std::string user = p.user;
    user = replace_first(user, "{AUDIO}", " ");
    user = replace_first(user, "{INSTRUCTION}", " ");
    out.push_back(user);
  }
  out.insert(out.end(),
             {kParaphrase, kList, "and then after followed by sounds of , .",
              "how many sounds are there ? what comes first ? what comes last ?",
              "yes , there is ! no , there is no . there is 1 sound . there are sounds .",
              "comes first . comes last . i hear , then .", "0 1 2 3 4 5 6 7 8 9"});
  return out;
}

LmCorpus::LmCorpus(WorldConfig world, const Vocabulary& vocab, CorpusMix mix)
    : world_(std::move(world)), vocab_(vocab), mix_(mix) {
  world_.validate();
  const double total = mix_.dialogue + mix_.aqa + mix_.aac + mix_.other;
  if (!(total > 0.0) || mix_.dialogue < 0 || mix_.aqa < 0 || mix_.aac < 0 || mix_.other < 0) {
    throw std::invalid_argument("CorpusMix: weights must be non-negative with positive sum");
  }
}

TextExample LmCorpus::sample(Rng& rng) const {
  const Scene scene = gen_scene(rng, world_, "lm");
  const auto types = scene.event_types();
  const auto captions = gen_captions(scene, rng, 4);
  const std::string caption = captions[rng.below(captions.size())].text;

  const double total = mix_.dialogue + mix_.aqa + mix_.aac + mix_.other;
  const double r = rng.uniform() * total;
  std::optional<std::string> system;
  std::string user;
  std::string answer;
  std::string format;
  if (r < mix_.dialogue) {
    format = "dialogue";
    user = caption;
    answer = dialogue_reply(types, rng);
  } else if (r < mix_.dialogue + mix_.aqa) {
    format = "aqa";
    auto qa = gen_qa(scene, rng);
    if (types.size() >= 2) {
      qa.push_back({"what comes first ?", "", AnswerKind::kOrder});
      qa.push_back({"what comes last ?", "", AnswerKind::kOrder});
    }
    const auto& q = qa[rng.below(qa.size())].question;
    const auto& spec = prompt("aqa_eval");
    system = spec.system;
    user = caption + ". Question: " + q;
    answer = text_answer(scene, q);
  } else if (r < mix_.dialogue + mix_.aqa + mix_.aac) {
    format = "aac";
    system = prompt("aac_eval").system;
    user = caption + ".";
    answer = house_caption(types);
  } else {
    format = "other";
    const double k = rng.uniform();
    if (k < 0.35) {
      system = prompt("caption_train").system;
      answer = "i hear " + joined(types, " , then ") + " .";
    } else if (k < 0.7) {
      system = kParaphrase;
      answer = captions[rng.below(captions.size())].text;
    } else {
      system = kList;
      answer = joined(types, " , ") + " .";
    }
    user = caption;
  }
  TextExample ex;
  ex.format = format;
  ex.tokens = render_training_sequence(system, user, answer, vocab_, &ex.answer_offset);
  return ex;
}

}  // namespace dct
