// SPDX-License-Identifier: Apache-2.0
#include "dct/lm_io.hpp"

#include "dct/chat_template.hpp"

namespace dct {

using nlohmann::json;

json to_json(const LMConfig& c) {
  return {{"layers", c.layers},         {"heads", c.heads},
          {"d_model", c.d_model},       {"d_ff", c.d_ff},
          {"max_context", c.max_context}, {"vocab_size", c.vocab_size}};
}

LMConfig lm_config_from_json(const json& j) {
  LMConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_context = j.at("max_context").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.validate();
  return c;
}

std::string model_hash_hex(const LanguageModel& lm) { return hex64(lm.content_hash()); }

void save_lm(const std::filesystem::path& path, const LanguageModel& lm, const Vocabulary& vocab) {
  if (vocab.size() != lm.config().vocab_size) {
    throw std::invalid_argument("save_lm: vocabulary size does not match the model");
  }
  Checkpoint ckpt;
  ckpt.header["kind"] = "backbone";
  ckpt.header["config"] = to_json(lm.config());
  ckpt.header["template_version"] = kTemplateVersion;
  ckpt.header["vocab"] = vocab.tokens();
  ckpt.header["vocab_hash"] = hex64(vocab.hash());
  ckpt.header["frozen"] = lm.frozen();
  ckpt.header["model_hash"] = model_hash_hex(lm);
  CheckpointSection section{"lm", Precision::kFloat32, {}};
  for (const auto& [name, p] : lm.named_parameters()) {
    for (double v : p.value().data()) {
      if (static_cast<double>(static_cast<float>(v)) != v) {
        throw std::invalid_argument("save_lm: parameter " + name +
                                    " is not float32-representable; round before saving");
      }
    }
    section.arrays.emplace_back(name, p.value());
  }
  ckpt.put(std::move(section));
  ckpt.save(path);
}

LoadedLM load_lm(const std::filesystem::path& path, const Vocabulary* expected_vocab) {
  const Checkpoint ckpt = Checkpoint::load(path);
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "backbone") {
    throw CheckpointError(path.string() + " is not a backbone checkpoint");
  }
  if (h.value("template_version", "") != kTemplateVersion) {
    throw VersionMismatchError("backbone was trained with template '" +
                               h.value("template_version", "") + "', expected '" +
                               kTemplateVersion + "'");
  }
  LoadedLM out{Vocabulary::from_tokens(h.at("vocab").get<std::vector<std::string>>()), nullptr};
  if (hex64(out.vocab.hash()) != h.value("vocab_hash", "")) {
    throw VersionMismatchError("backbone vocabulary hash mismatch in " + path.string());
  }
  if (expected_vocab != nullptr && !(*expected_vocab == out.vocab)) {
    throw VersionMismatchError("backbone vocabulary differs from the dataset vocabulary");
  }
  const LMConfig config = lm_config_from_json(h.at("config"));
  Rng unused(0);
  out.lm = std::make_unique<LanguageModel>(config, unused);
  const auto& section = ckpt.section("lm");
  const auto names = out.lm->named_parameters();
  if (section.arrays.size() != names.size()) {
    throw CheckpointError("backbone checkpoint has " + std::to_string(section.arrays.size()) +
                          " arrays, model needs " + std::to_string(names.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (section.arrays[i].first != names[i].first) {
      throw CheckpointError("backbone array " + std::to_string(i) + " is '" +
                            section.arrays[i].first + "', expected '" + names[i].first + "'");
    }
  }
  out.lm->load_values(section.values());
  if (model_hash_hex(*out.lm) != h.value("model_hash", "")) {
    throw VersionMismatchError("backbone weights do not match the recorded model hash");
  }
  if (h.value("frozen", false)) out.lm->freeze();
  return out;
}

}  // namespace dct
