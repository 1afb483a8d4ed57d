// SPDX-License-Identifier: Apache-2.0
//
// Small shared models and scenes for module tests.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dct/dataset.hpp"
#include "dct/lm.hpp"
#include "dct/lm_corpus.hpp"
#include "dct/pretrain.hpp"
#include "dct/world.hpp"

namespace dct::testing {

inline const Vocabulary& world_vocab() {
  static const Vocabulary v = Vocabulary::build(vocabulary_text());
  return v;
}

inline LMConfig tiny_lm_config() {
  LMConfig c;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.max_context = 128;
  c.vocab_size = world_vocab().size();
  return c;
}

/// Random frozen backbone. `table_scale` shrinks the token table, which
/// flattens the output distribution.
inline LanguageModel tiny_lm(std::uint64_t seed = 1, double table_scale = 1.0) {
  Rng rng(seed);
  LanguageModel lm(tiny_lm_config(), rng);
  if (table_scale != 1.0) {
    ad::Var table = lm.token_table();  // shares the parameter node
    for (double& v : table.mutable_value().data()) v *= table_scale;
  }
  lm.freeze();
  return lm;
}

/// Tiny backbone after 1500 steps on the text corpus (held-out perplexity
/// near 2.7), built once per test binary and frozen.
inline const LanguageModel& pretrained_tiny_lm() {
  static const LanguageModel lm = [] {
    const LmCorpus corpus(WorldConfig{}, world_vocab());
    PretrainConfig opt;
    opt.steps = 1500;
    opt.batch = 16;
    opt.peak_lr = 1e-2;
    opt.warmup = 30;
    opt.heldout = 0;
    LanguageModel m =
        pretrain_lm(tiny_lm_config(), [&](Rng& r) { return corpus.sample(r); }, opt);
    m.freeze();
    return m;
  }();
  return lm;
}

/// In-memory scenes with captions, QA and rendered features.
inline std::vector<LoadedScene> make_scenes(std::size_t n, std::uint64_t seed,
                                            const WorldConfig& world = {}) {
  std::vector<LoadedScene> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "scene", i));
    LoadedScene s;
    s.record.scene = gen_scene(rng, world, "t" + std::to_string(100000 + i));
    s.record.captions = gen_captions(s.record.scene, rng, world.caption_variants);
    s.record.qa = gen_qa(s.record.scene, rng);
    s.record.split = "test";
    s.features = render_features(s.record.scene, rng, world);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<SceneRecord> records_of(const std::vector<LoadedScene>& scenes) {
  std::vector<SceneRecord> out;
  for (const auto& s : scenes) out.push_back(s.record);
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dct_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dct::testing
