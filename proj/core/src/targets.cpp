// SPDX-License-Identifier: Apache-2.0
#include "dct/targets.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>

#include "dct/chat_template.hpp"
#include "dct/checkpoint.hpp"
#include "dct/decode.hpp"
#include "dct/lm_io.hpp"

namespace dct {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const TargetRecord& r) {
  ordered_json j;
  j["scene_id"] = r.scene_id;
  j["caption"] = r.caption;
  j["response"] = r.response;
  j["seed"] = r.seed;
  j["temperature"] = r.temperature;
  j["model_hash"] = r.model_hash;
  j["template_version"] = r.template_version;
  return j;
}

TargetRecord target_record_from_json(const json& j) {
  try {
    TargetRecord r;
    r.scene_id = j.at("scene_id").get<std::string>();
    r.caption = j.at("caption").get<std::string>();
    r.response = j.at("response").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.temperature = j.at("temperature").get<double>();
    r.model_hash = j.at("model_hash").get<std::string>();
    r.template_version = j.at("template_version").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed target record: ") + e.what());
  }
}

void write_targets(const fs::path& path, const std::vector<TargetRecord>& records) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot write " + tmp.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw DatasetError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<TargetRecord> read_targets(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<TargetRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(target_record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw DatasetError(path.string() + ": " + e.what());
    }
  }
  return out;
}

ContextAssembly build_noinst_context(std::span<const TokenId> caption, std::size_t max_context) {
  if (caption.empty()) throw std::invalid_argument("no-instruction context: empty caption");
  std::vector<TokenId> ids = {special::kBos, special::kUsrOpen};
  ids.insert(ids.end(), caption.begin(), caption.end());
  ids.push_back(special::kSegClose);
  ids.push_back(special::kAsstOpen);
  if (ids.size() > max_context) {
    throw ContextOverflowError("caption needs " + std::to_string(ids.size()) +
                               " positions, maximum is " + std::to_string(max_context));
  }
  ContextAssembly a;
  a.tokens(std::move(ids));
  return a;
}

std::uint64_t caption_seed(std::uint64_t base, const std::string& scene_id,
                           const std::string& caption) {
  return derive_seed(base, "target:" + scene_id, fnv1a(caption));
}

TargetRecord prepare_response(const std::string& scene_id, const std::string& caption,
                              const LanguageModel& lm, const Vocabulary& vocab,
                              const TargetPrepConfig& config) {
  const auto tokens = vocab.tokenize(caption);
  const Array2 ctx = context_rows(lm, build_noinst_context(tokens, lm.config().max_context));
  const std::uint64_t seed = caption_seed(config.seed, scene_id, caption);
  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    Rng rng(seed + attempt);
    const auto out = generate_sample(lm, ctx, config.temperature, config.max_new_tokens, rng,
                                     markup_ids(vocab));
    if (out.empty()) continue;
    return TargetRecord{scene_id,         caption,     vocab.detokenize(out),
                        seed + attempt,   config.temperature, model_hash_hex(lm),
                        kTemplateVersion};
  }
  throw EmptyGenerationError("backbone produced an empty response twice for scene " + scene_id +
                             " caption '" + caption + "'");
}

ordered_json TargetReport::to_json() const {
  ordered_json j;
  j["count"] = count;
  j["generated"] = generated;
  j["mean_response_length"] = mean_response_length;
  j["echo_rate"] = echo_rate;
  return j;
}

TargetReport prepare_dataset(const std::vector<SceneRecord>& scenes, const LanguageModel& lm,
                             const Vocabulary& vocab, const TargetPrepConfig& config,
                             const fs::path& out) {
  const std::string hash = model_hash_hex(lm);
  using Key = std::pair<std::string, std::string>;
  std::map<Key, TargetRecord> existing;
  if (fs::exists(out)) {
    for (auto& r : read_targets(out)) {
      if (r.model_hash != hash) {
        throw VersionMismatchError(out.string() + " was prepared with backbone " + r.model_hash +
                                   ", loaded backbone is " + hash);
      }
      Key k{r.scene_id, r.caption};
      existing.emplace(std::move(k), std::move(r));
    }
  }

  struct Job {
    const SceneRecord* scene;
    std::size_t caption;
  };
  std::vector<const SceneRecord*> order;
  for (const auto& s : scenes) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const SceneRecord* a, const SceneRecord* b) { return a->scene.id < b->scene.id; });
  std::vector<Job> all;
  for (const SceneRecord* s : order) {
    for (std::size_t c = 0; c < s->captions.size(); ++c) all.push_back({s, c});
  }

  std::vector<std::optional<TargetRecord>> results(all.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Key k{all[i].scene->scene.id, all[i].scene->captions[all[i].caption].text};
    if (auto it = existing.find(k); it != existing.end()) {
      results[i] = it->second;
    } else {
      todo.push_back(i);
    }
  }
  // Workers take a strided share of the pending captions; every record has
  // its own seed so the result does not depend on the split.
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, todo.size()));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t j = w; j < todo.size(); j += workers) {
        const Job& job = all[todo[j]];
        results[todo[j]] = prepare_response(job.scene->scene.id,
                                            job.scene->captions[job.caption].text, lm, vocab, config);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  TargetReport report;
  report.generated = todo.size();
  std::vector<TargetRecord> records;
  std::size_t tokens = 0, echoes = 0;
  for (auto& r : results) {
    const auto resp = vocab.tokenize(r->response);
    tokens += resp.size();
    echoes += resp == vocab.tokenize(r->caption);
    records.push_back(std::move(*r));
  }
  report.count = records.size();
  if (!records.empty()) {
    report.mean_response_length = static_cast<double>(tokens) / static_cast<double>(records.size());
    report.echo_rate = static_cast<double>(echoes) / static_cast<double>(records.size());
  }
  if (report.generated > 0 || !fs::exists(out)) write_targets(out, records);
  return report;
}

}  // namespace dct
