// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dct/chat_template.hpp"
#include "dct/lm_io.hpp"
#include "dct/trainer.hpp"
#include "fixtures.hpp"

namespace dct {
namespace {

using testing::make_scenes;
using testing::scratch_dir;
using testing::tiny_lm;
using testing::world_vocab;

TrainConfig quick_config(TrainMode mode = TrainMode::kCaption) {
  TrainConfig c;
  c.mode = mode;
  c.warmup_iters = 10;
  c.peak_lr = 3e-3;
  c.decay_iters = 1000;
  c.val_every = 50;
  c.max_iters = 100;
  c.seed = 4;
  return c;
}

std::vector<TrainExample> caption_examples(const LanguageModel& lm, std::size_t n,
                                           std::uint64_t seed) {
  static const FrozenEncoder encoder;
  return build_examples(TrainMode::kCaption, make_scenes(n, seed), encoder, world_vocab(), lm,
                        nullptr);
}

const std::vector<TokenId>& ids_of(const ContextAssembly::Segment& s) {
  return std::get<TokenSegment>(s).ids;
}

TEST(LrSchedule, WarmupThenLinearDecay) {
  const TrainConfig c;  // 1000 warmup, 1e-4 peak, 100000 decay
  EXPECT_EQ(lr_schedule(c, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(c, 500), 5e-5);
  EXPECT_DOUBLE_EQ(lr_schedule(c, 1000), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(c, 51000), 5e-5);
  EXPECT_EQ(lr_schedule(c, 101000), 0.0);
  EXPECT_EQ(lr_schedule(c, 200000), 0.0);
  double prev = -1.0;
  for (std::size_t i = 0; i <= 1000; i += 10) {
    EXPECT_GT(lr_schedule(c, i), prev);
    prev = lr_schedule(c, i);
  }
}

TEST(TrainConfigText, ParseFormatRoundTrip) {
  const TrainConfig c = parse_train_config(
      "# adapter run\n"
      "mode = caption\n"
      "batch_size=8\n"
      "peak_lr = 0.003   # raised\n"
      "warmup_iters = 20\n"
      "decay_iters = 400\n"
      "keep_best = false\n"
      "\n");
  EXPECT_EQ(c.mode, TrainMode::kCaption);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.peak_lr, 0.003);
  EXPECT_EQ(c.warmup_iters, 20u);
  EXPECT_FALSE(c.keep_best);
  const TrainConfig r = parse_train_config(format_train_config(c));
  EXPECT_EQ(format_train_config(r), format_train_config(c));
  EXPECT_EQ(r.peak_lr, c.peak_lr);
}

TEST(TrainConfigText, Errors) {
  EXPECT_THROW(parse_train_config("unknown_key = 3\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("batch_size = four\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("batch_size\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("mode = lyrics\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("batch_size = 0\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("warmup_iters = 10\ndecay_iters = 5\n"), std::invalid_argument);
}

TEST(TrainContexts, CaptionContextUsesTheCaptionPrompt) {
  const auto& v = world_vocab();
  const ad::Var audio(Array2(3, 16));
  const ContextAssembly a = build_caption_context(audio, v);
  ASSERT_EQ(a.segments().size(), 3u);
  std::vector<TokenId> prefix = {special::kBos, special::kSysOpen};
  const auto sys = v.tokenize("describe the audio you hear");
  prefix.insert(prefix.end(), sys.begin(), sys.end());
  prefix.push_back(special::kSegClose);
  prefix.push_back(special::kUsrOpen);
  EXPECT_EQ(ids_of(a.segments()[0]), prefix);
  EXPECT_EQ(std::get<EmbeddingSegment>(a.segments()[1]).rows.rows(), 3u);
  EXPECT_EQ(ids_of(a.segments()[2]), (std::vector<TokenId>{special::kSegClose, special::kAsstOpen}));
}

TEST(TrainContexts, DctContextHasNoInstruction) {
  const ad::Var audio(Array2(2, 16));
  const ContextAssembly a = build_dct_context(audio, world_vocab());
  ASSERT_EQ(a.segments().size(), 3u);
  EXPECT_EQ(ids_of(a.segments()[0]), (std::vector<TokenId>{special::kBos, special::kUsrOpen}));
  EXPECT_EQ(ids_of(a.segments()[2]), (std::vector<TokenId>{special::kSegClose, special::kAsstOpen}));
}

TEST(BuildExamples, TargetsAndErrors) {
  const LanguageModel lm = tiny_lm(1);
  const FrozenEncoder encoder;
  const auto scenes = make_scenes(3, 5);
  const auto caption = build_examples(TrainMode::kCaption, scenes, encoder, world_vocab(), lm, nullptr);
  std::size_t n = 0;
  for (const auto& s : scenes) n += s.record.captions.size();
  ASSERT_EQ(caption.size(), n);
  auto expect = world_vocab().tokenize(scenes[0].record.captions[0].text);
  expect.push_back(special::kEos);
  EXPECT_EQ(caption[0].target, expect);
  EXPECT_EQ(caption[0].audio.rows(), encoder.forward(scenes[0].features).rows());

  std::vector<TargetRecord> targets;
  for (const auto& s : scenes) {
    for (const auto& c : s.record.captions) {
      targets.push_back({s.record.scene.id, c.text, "how lovely !", 0, 0.7, model_hash_hex(lm),
                         kTemplateVersion});
    }
  }
  const auto dct = build_examples(TrainMode::kDct, scenes, encoder, world_vocab(), lm, &targets);
  EXPECT_EQ(dct[1].target, (std::vector<TokenId>{world_vocab().id("how"), world_vocab().id("lovely"),
                                                 world_vocab().id("!"), special::kEos}));
  EXPECT_THROW(build_examples(TrainMode::kDct, scenes, encoder, world_vocab(), lm, nullptr),
               DatasetError);
  auto missing = targets;
  missing.pop_back();
  EXPECT_THROW(build_examples(TrainMode::kDct, scenes, encoder, world_vocab(), lm, &missing),
               DatasetError);
  auto stale = targets;
  stale[0].model_hash = "0123456789abcdef";
  EXPECT_THROW(build_examples(TrainMode::kDct, scenes, encoder, world_vocab(), lm, &stale),
               VersionMismatchError);
}

TEST(SequenceLoss, DoublingATargetOnlyAddsTheNewTokens) {
  const LanguageModel lm = tiny_lm(2);
  const auto& v = world_vocab();
  const ContextAssembly ctx = build_dct_context(ad::Var(Array2(2, 16, 0.3)), v);
  for (const std::string text : {"rain", "what a calm scene !", "a dog barking and then rain falling"}) {
    const auto y = v.tokenize(text);
    std::vector<TokenId> yy = y;
    yy.insert(yy.end(), y.begin(), y.end());
    const double single = sequence_loss(lm, ctx, y).value()(0, 0);
    const double doubled = sequence_loss(lm, ctx, yy).value()(0, 0);
    const Array2 lp = teacher_forced_log_probs(lm, ctx, yy);
    double tail = 0.0;
    for (std::size_t i = y.size(); i < yy.size(); ++i) tail -= lp(i, static_cast<std::size_t>(yy[i]));
    const double n = static_cast<double>(y.size());
    EXPECT_NEAR(doubled * 2.0 * n, single * n + tail, 1e-10 * (1.0 + std::abs(tail)));
  }
}

TEST(Trainer, RequiresFrozenBackbone) {
  Rng rng(1);
  const LanguageModel lm(testing::tiny_lm_config(), rng);
  const LanguageModel frozen = tiny_lm(1);
  auto ex = caption_examples(frozen, 2, 3);
  EXPECT_THROW(Trainer(quick_config(), lm, world_vocab(), ex, ex), std::invalid_argument);
}

TEST(Trainer, FirstBatchLossNearUniformEntropy) {
  // A flat output layer makes every next-token distribution close to uniform.
  const LanguageModel lm = tiny_lm(3, 1e-3);
  auto ex = caption_examples(lm, 8, 6);
  Trainer t(quick_config(), lm, world_vocab(), ex, ex);
  const double loss = t.step();
  const double ln_v = std::log(static_cast<double>(world_vocab().size()));
  EXPECT_NEAR(loss, ln_v, 0.2 * ln_v);
}

TEST(Trainer, LossFallsOverTwoHundredIterations) {
  // Pinned smoke configuration: a briefly pretrained backbone, 50 scenes,
  // 32 examples per batch and a gentle learning rate.
  const LanguageModel& lm = testing::pretrained_tiny_lm();
  auto train = caption_examples(lm, 50, 7);
  TrainConfig c = quick_config();
  c.peak_lr = 1e-3;
  c.batch_size = 32;
  c.max_iters = 200;
  c.val_every = 200;
  Trainer t(c, lm, world_vocab(), train, caption_examples(lm, 4, 8));
  std::vector<double> losses;
  t.run([&](const MetricsRow& row) { losses.push_back(row.train_loss); });
  ASSERT_EQ(losses.size(), 200u);
  // Means of consecutive 20-iteration windows.
  std::vector<double> windows;
  for (std::size_t w = 0; w < 10; ++w) {
    double s = 0.0;
    for (std::size_t i = 0; i < 20; ++i) s += losses[w * 20 + i];
    windows.push_back(s / 20.0);
  }
  for (std::size_t w = 1; w < windows.size(); ++w) {
    EXPECT_LT(windows[w], windows[w - 1]) << "window " << w;
  }
  EXPECT_LT(windows.back(), 0.6 * windows.front());
}

TEST(Trainer, BackboneUnchangedAfterTraining) {
  const LanguageModel lm = tiny_lm(5);
  const std::uint64_t before = lm.content_hash();
  for (TrainMode mode : {TrainMode::kCaption, TrainMode::kDct}) {
    auto ex = caption_examples(lm, 4, 9);  // dct uses the same targets here; only the context differs
    TrainConfig c = quick_config(mode);
    c.max_iters = 30;
    c.val_every = 10;
    Trainer t(c, lm, world_vocab(), ex, ex);
    t.run();
    EXPECT_EQ(lm.content_hash(), before);
    EXPECT_EQ(lm.frozen_hash(), before);
    EXPECT_TRUE(lm.frozen());
  }
}

TEST(Trainer, MetricsAndBestCheckpoint) {
  const LanguageModel lm = tiny_lm(6);
  auto ex = caption_examples(lm, 6, 10);
  TrainConfig c = quick_config();
  c.max_iters = 45;
  c.val_every = 20;
  Trainer t(c, lm, world_vocab(), ex, caption_examples(lm, 3, 11));
  std::vector<MetricsRow> rows;
  std::vector<double> vals;
  t.run([&](const MetricsRow& r) { rows.push_back(r); },
        [&](const Trainer&, double v) { vals.push_back(v); });
  ASSERT_EQ(rows.size(), 45u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].iteration, i + 1);
    EXPECT_EQ(rows[i].lr, lr_schedule(c, i + 1));
    EXPECT_EQ(rows[i].val_loss.has_value(), (i + 1) % 20 == 0 || i + 1 == 45);
  }
  ASSERT_EQ(vals.size(), 3u);
  const double best = *std::min_element(vals.begin(), vals.end());
  EXPECT_EQ(*t.best_val_loss(), best);
  EXPECT_EQ(&t.output_adapter(), &t.best_adapter());
  EXPECT_NEAR(t.validate(), vals.back(), 0.0);
}

TEST(Trainer, ResumedRunMatchesStraightRun) {
  const auto dir = scratch_dir("resume");
  const LanguageModel lm = tiny_lm(7);
  auto train = caption_examples(lm, 10, 12);
  auto val = caption_examples(lm, 3, 13);
  const TrainConfig c = quick_config();  // 100 iterations, validation every 50

  Trainer straight(c, lm, world_vocab(), train, val);
  straight.run([](const MetricsRow&) {},
               [&](const Trainer& t, double) {
                 if (t.iteration() == 50) t.state_checkpoint().save(dir / "state.ckpt");
               });

  Trainer resumed(c, lm, world_vocab(), train, val);
  resumed.restore(Checkpoint::load(dir / "state.ckpt"));
  EXPECT_EQ(resumed.iteration(), 50u);
  resumed.run();
  EXPECT_EQ(resumed.adapter().content_hash(), straight.adapter().content_hash());
  EXPECT_EQ(resumed.best_adapter().content_hash(), straight.best_adapter().content_hash());
  EXPECT_EQ(resumed.best_val_loss(), straight.best_val_loss());
  EXPECT_EQ(resumed.best_iteration(), straight.best_iteration());
}

TEST(Trainer, RestoreRejectsOtherBackboneOrVocabulary) {
  const LanguageModel lm = tiny_lm(8);
  auto ex = caption_examples(lm, 2, 14);
  TrainConfig c = quick_config();
  c.max_iters = 2;
  Trainer t(c, lm, world_vocab(), ex, ex);
  t.step();
  Checkpoint state = t.state_checkpoint();

  const LanguageModel other = tiny_lm(9);
  Trainer u(c, other, world_vocab(), ex, ex);
  EXPECT_THROW(u.restore(state), VersionMismatchError);

  state.header["vocab_hash"] = "0000000000000000";
  Trainer w(c, lm, world_vocab(), ex, ex);
  EXPECT_THROW(w.restore(state), VersionMismatchError);
}

TEST(Trainer, NonFiniteLossIsReported) {
  const LanguageModel lm = tiny_lm(10);
  auto ex = caption_examples(lm, 2, 15);
  Trainer t(quick_config(), lm, world_vocab(), ex, ex);
  ad::Var w1 = t.adapter().parameters()[0];
  w1.mutable_value()(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.step(), TrainingDivergedError);
}

TEST(AdapterFile, RoundTripAndMismatch) {
  const auto dir = scratch_dir("adapter_file");
  const LanguageModel lm = tiny_lm(11);
  const FrozenEncoder encoder;
  AdapterConfig ac;
  ac.output_dim = 16;
  Rng rng(3);
  const Adapter a(ac, rng);
  adapter_checkpoint(a, lm, world_vocab(), encoder, TrainMode::kDct).save(dir / "a.ckpt");
  const Checkpoint c = Checkpoint::load(dir / "a.ckpt");
  EXPECT_EQ(load_adapter(c, lm, world_vocab(), encoder).content_hash(), a.content_hash());

  EXPECT_THROW(load_adapter(c, tiny_lm(12), world_vocab(), encoder), VersionMismatchError);
  const std::vector<std::string> words = {"rain"};
  EXPECT_THROW(load_adapter(c, lm, Vocabulary::build(words), encoder), VersionMismatchError);
  EXPECT_THROW(load_adapter(c, lm, world_vocab(), FrozenEncoder(16, 32, 99)), VersionMismatchError);
}

}  // namespace
}  // namespace dct
