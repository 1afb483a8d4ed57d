// SPDX-License-Identifier: Apache-2.0
#include "dct/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "dct/chat_template.hpp"
#include "dct/decode.hpp"
#include "dct/prompts.hpp"

namespace dct {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::string> judge_words(std::string_view text) {
  std::vector<std::string> out;
  for (auto& w : normalize_words(text)) {
    if (w.size() == 1 && std::ispunct(static_cast<unsigned char>(w[0]))) continue;
    out.push_back(std::move(w));
  }
  return out;
}

bool judge_aqa(std::string_view prediction, const std::string& gold, AnswerKind kind) {
  const auto words = judge_words(prediction);
  if (words.empty()) return false;
  switch (kind) {
    case AnswerKind::kYesNo: {
      const bool has_yes = std::find(words.begin(), words.end(), "yes") != words.end();
      const bool has_no = std::find(words.begin(), words.end(), "no") != words.end();
      if (has_yes && has_no) return false;
      if (has_yes) return gold == "yes";
      if (has_no) return gold == "no";
      return false;
    }
    case AnswerKind::kCount:
      for (const auto& w : words) {
        if (std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); })) {
          return w == gold;
        }
      }
      return false;
    case AnswerKind::kOrder: {
      std::string joined = " ";
      for (const auto& w : words) joined += w + " ";
      std::string name = " ";
      for (const auto& w : judge_words(gold)) name += w + " ";
      return name.size() > 1 && joined.find(name) != std::string::npos;
    }
  }
  return false;
}

const std::vector<std::string>& f1_stopwords() {
  static const std::vector<std::string> words = {"a",  "an",  "the", "and", "then", "after", "is",
                                                 "are", "of", "in",  "on",  "from", "by"};
  return words;
}

double token_f1(std::string_view prediction, std::string_view reference) {
  auto content = [](std::string_view text) {
    std::multiset<std::string> bag;
    const auto& stop = f1_stopwords();
    for (auto& w : judge_words(text)) {
      if (std::find(stop.begin(), stop.end(), w) == stop.end()) bag.insert(std::move(w));
    }
    return bag;
  };
  const auto p = content(prediction);
  const auto r = content(reference);
  if (p.empty() || r.empty()) return 0.0;
  std::vector<std::string> common;
  std::set_intersection(p.begin(), p.end(), r.begin(), r.end(), std::back_inserter(common));
  if (common.empty()) return 0.0;
  const double precision = static_cast<double>(common.size()) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common.size()) / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

InstructionSpec InstructionSpec::from_prompt(const std::string& name, const std::string& instruction) {
  const PromptSpec& spec = prompt(name);
  std::string user = spec.user;
  if (const auto pos = user.find("{INSTRUCTION}"); pos != std::string::npos) {
    user.replace(pos, std::string("{INSTRUCTION}").size(), instruction);
  }
  const auto slot = user.find("{AUDIO}");
  if (slot != 0) throw TemplateError("prompt '" + name + "' must start with the audio slot");
  return InstructionSpec{spec.system, user.substr(std::string("{AUDIO}").size())};
}

std::string InstructionSpec::describe() const {
  std::string out = system ? "[" + *system + "] " : "";
  return out + "{AUDIO}" + after_audio;
}

Array2 audio_rows(const ModelBundle& bundle, const Array2& features) {
  return bundle.adapter.forward(bundle.encoder.forward(features));
}

namespace {

Array2 instruction_context(const ModelBundle& bundle, const Array2& audio,
                           const InstructionSpec& instruction) {
  const PromptPair p =
      render_chat(slot_conversation(instruction.system, instruction.after_audio), bundle.vocab);
  const Array2 blocks[] = {bundle.lm.token_embeddings(p.prefix), audio,
                           bundle.lm.token_embeddings(p.suffix)};
  return vstack(blocks);
}

}  // namespace

std::vector<TokenId> infer_tokens(const ModelBundle& bundle, const Array2& features,
                                  const InstructionSpec& instruction, const DecodeConfig& decode) {
  const Array2 ctx = instruction_context(bundle, audio_rows(bundle, features), instruction);
  return generate_beam(bundle.lm, ctx, decode.beam, decode.max_new_tokens,
                       markup_ids(bundle.vocab))
      .tokens;
}

std::string infer(const ModelBundle& bundle, const Array2& features,
                  const InstructionSpec& instruction, const DecodeConfig& decode) {
  return bundle.vocab.detokenize(infer_tokens(bundle, features, instruction, decode));
}

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["suite"] = suite;
  j["aggregates"] = ordered_json::object();
  for (const auto& [k, v] : aggregates) j["aggregates"][k] = v;
  j["items"] = ordered_json::array();
  for (const auto& it : items) {
    ordered_json o;
    o["id"] = it.id;
    o["instruction"] = it.instruction;
    o["prediction"] = it.prediction;
    o["gold"] = it.gold;
    o["kind"] = it.kind;
    o["scores"] = ordered_json::object();
    for (const auto& [k, v] : it.scores) o["scores"][k] = v;
    j["items"].push_back(std::move(o));
  }
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.suite = j.at("suite").get<std::string>();
  for (const auto& [k, v] : j.at("aggregates").items()) r.aggregates[k] = v.get<double>();
  for (const auto& o : j.at("items")) {
    EvalItem it;
    it.id = o.at("id").get<std::string>();
    it.instruction = o.at("instruction").get<std::string>();
    it.prediction = o.at("prediction").get<std::string>();
    it.gold = o.at("gold").get<std::string>();
    it.kind = o.at("kind").get<std::string>();
    for (const auto& [k, v] : o.at("scores").items()) it.scores[k] = v.get<double>();
    r.items.push_back(std::move(it));
  }
  return r;
}

std::string EvalReport::aggregates_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "suite,metric,value\n";
  for (const auto& [k, v] : aggregates) out << suite << ',' << k << ',' << v << '\n';
  return out.str();
}

std::map<std::string, double> EvalReport::recompute() const {
  std::map<std::string, double> out;
  out["n"] = static_cast<double>(items.size());
  if (items.empty()) return out;
  const double scale = suite == "distill" ? 1.0 : 100.0;
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& it : items) {
    for (const auto& [k, v] : it.scores) {
      auto& s = sums[k];
      s.first += v;
      ++s.second;
      if (suite == "aqa") {
        auto& per_kind = sums["accuracy_" + it.kind];
        per_kind.first += v;
        ++per_kind.second;
      }
    }
  }
  for (const auto& [k, s] : sums) {
    const std::string name = (suite == "aqa" && k == "correct") ? "accuracy" : k;
    out[name] = scale * s.first / static_cast<double>(s.second);
  }
  return out;
}

EvalReport eval_aqa(const ModelBundle& bundle, const std::vector<LoadedScene>& scenes,
                    const DecodeConfig& decode) {
  EvalReport report{"aqa", {}, {}};
  for (const auto& s : scenes) {
    const Array2 audio = audio_rows(bundle, s.features);
    for (std::size_t k = 0; k < s.record.qa.size(); ++k) {
      const QAPair& qa = s.record.qa[k];
      const auto spec = InstructionSpec::from_prompt("aqa_eval", qa.question);
      const Array2 ctx = instruction_context(bundle, audio, spec);
      const std::string pred = bundle.vocab.detokenize(
          generate_beam(bundle.lm, ctx, decode.beam, decode.max_new_tokens,
                        markup_ids(bundle.vocab))
              .tokens);
      const bool ok = judge_aqa(pred, qa.answer, qa.kind);
      report.items.push_back({s.record.scene.id + "#" + std::to_string(k), qa.question, pred,
                              qa.answer, to_string(qa.kind), {{"correct", ok ? 1.0 : 0.0}}});
    }
  }
  if (report.items.empty()) throw std::invalid_argument("eval_aqa: no QA items");
  report.aggregates = report.recompute();
  return report;
}

EvalReport eval_aac(const ModelBundle& bundle, const std::vector<LoadedScene>& scenes,
                    const DecodeConfig& decode) {
  if (scenes.empty()) throw std::invalid_argument("eval_aac: empty split");
  EvalReport report{"aac", {}, {}};
  const auto spec = InstructionSpec::from_prompt("aac_eval");
  for (const auto& s : scenes) {
    if (s.record.captions.empty()) throw DatasetError("eval_aac: scene without captions");
    const std::string pred = infer(bundle, s.features, spec, decode);
    const std::string& ref = s.record.captions.front().text;
    report.items.push_back({s.record.scene.id, spec.describe(), pred, ref, "caption",
                            {{"f1", token_f1(pred, ref)}}});
  }
  report.aggregates = report.recompute();
  return report;
}

Divergence distill_divergence(const LanguageModel& lm, const Array2& audio,
                              std::span<const TokenId> caption, std::span<const TokenId> response) {
  if (response.empty()) throw std::invalid_argument("distill: empty response");
  const ContextAssembly text = build_noinst_context(caption, lm.config().max_context);
  ContextAssembly with_audio;
  with_audio.tokens({special::kBos, special::kUsrOpen})
      .embeddings(ad::Var(audio))
      .tokens({special::kSegClose, special::kAsstOpen});
  const Array2 la = teacher_forced_log_probs(lm, with_audio, response);
  const Array2 lt = teacher_forced_log_probs(lm, text, response);
  Divergence d;
  for (std::size_t i = 0; i < response.size(); ++i) {
    const auto t = static_cast<std::size_t>(response[i]);
    d.ce_gap += std::abs(la(i, t) - lt(i, t));
    double kl = 0.0;
    for (std::size_t v = 0; v < la.cols(); ++v) {
      const double pt = std::exp(lt(i, v));
      if (pt > 0.0) kl += pt * (lt(i, v) - la(i, v));
    }
    d.kl += kl;
  }
  d.ce_gap /= static_cast<double>(response.size());
  d.kl /= static_cast<double>(response.size());
  return d;
}

EvalReport eval_distill(const ModelBundle& bundle, const std::vector<LoadedScene>& scenes,
                        const std::vector<TargetRecord>& targets) {
  std::map<std::pair<std::string, std::string>, const TargetRecord*> by_key;
  for (const auto& r : targets) by_key[{r.scene_id, r.caption}] = &r;
  EvalReport report{"distill", {}, {}};
  for (const auto& s : scenes) {
    const Array2 audio = audio_rows(bundle, s.features);
    for (const auto& c : s.record.captions) {
      const auto it = by_key.find({s.record.scene.id, c.text});
      if (it == by_key.end()) {
        throw DatasetError("distill: no target for scene " + s.record.scene.id + " caption '" +
                           c.text + "'");
      }
      auto response = bundle.vocab.tokenize(it->second->response);
      response.push_back(special::kEos);
      const Divergence d =
          distill_divergence(bundle.lm, audio, bundle.vocab.tokenize(c.text), response);
      report.items.push_back({s.record.scene.id, c.text, it->second->response, c.text,
                              to_string(c.style), {{"kl", d.kl}, {"ce_gap", d.ce_gap}}});
    }
  }
  if (report.items.empty()) throw std::invalid_argument("eval_distill: no items");
  report.aggregates = report.recompute();
  return report;
}

}  // namespace dct
