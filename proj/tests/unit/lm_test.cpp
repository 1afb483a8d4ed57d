// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <set>

#include "dct/decode.hpp"
#include "dct/lm.hpp"
#include "dct/vocab.hpp"

namespace dct {
namespace {

using ad::Var;
using Mat = std::vector<std::vector<double>>;

LMConfig tiny_config(std::size_t vocab = 12) {
  LMConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.max_context = 32;
  c.vocab_size = vocab;
  return c;
}

// Scales every parameter so logits are far from uniform and code paths
// (softmax saturation, beam ranking) get exercised.
void perturb(LanguageModel& lm, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& p : lm.parameters()) {
    for (double& v : p.mutable_value().data()) v += scale * rng.normal();
  }
}

Mat to_mat(const Array2& a) {
  Mat m(a.rows(), std::vector<double>(a.cols()));
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m[r][c] = a(r, c);
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

void add_row(Mat& a, const Mat& bias) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[0][j];
}

Mat ln(const Mat& x, const Mat& g, const Mat& b) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0, var = 0;
    for (double v : x[i]) mu += v / n;
    for (double v : x[i]) var += (v - mu) * (v - mu) / n;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mu) / std::sqrt(var + 1e-5) * g[0][j] + b[0][j];
  }
  return out;
}

// Hand-written single-sequence forward pass, independent of the library.
Mat scripted_forward(const LanguageModel& lm, const std::vector<TokenId>& ids) {
  const auto cfg = lm.config();
  const Mat E = to_mat(lm.token_table().value());
  const Mat P = to_mat(lm.position_table().value());
  Mat x;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<double> row(cfg.d_model);
    for (std::size_t j = 0; j < cfg.d_model; ++j) row[j] = E[ids[i]][j] + P[i][j];
    x.push_back(row);
  }
  const std::size_t hd = cfg.d_model / cfg.heads;
  for (const auto& l : lm.layers()) {
    const Mat a = ln(x, to_mat(l.ln1_gain.value()), to_mat(l.ln1_bias.value()));
    Mat q = mm(a, to_mat(l.wq.value())), k = mm(a, to_mat(l.wk.value())),
        v = mm(a, to_mat(l.wv.value()));
    add_row(q, to_mat(l.bq.value()));
    add_row(k, to_mat(l.bk.value()));
    add_row(v, to_mat(l.bv.value()));
    Mat att(x.size(), std::vector<double>(cfg.d_model, 0.0));
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> w(i + 1);
        double z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0;
          for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) s += q[i][c] * k[j][c];
          w[j] = std::exp(s / std::sqrt(static_cast<double>(hd)));
          z += w[j];
        }
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) att[i][c] += w[j] / z * v[j][c];
      }
    }
    Mat o = mm(att, to_mat(l.wo.value()));
    add_row(o, to_mat(l.bo.value()));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < cfg.d_model; ++j) x[i][j] += o[i][j];
    const Mat b = ln(x, to_mat(l.ln2_gain.value()), to_mat(l.ln2_bias.value()));
    Mat f = mm(b, to_mat(l.w1.value()));
    add_row(f, to_mat(l.b1.value()));
    for (auto& row : f)
      for (double& u : row) u = 0.5 * u * (1 + std::erf(u / std::sqrt(2.0)));
    Mat g = mm(f, to_mat(l.w2.value()));
    add_row(g, to_mat(l.b2.value()));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < cfg.d_model; ++j) x[i][j] += g[i][j];
  }
  const Mat hf = ln(x, to_mat(lm.final_gain().value()), to_mat(lm.final_bias().value()));
  Mat logits(x.size(), std::vector<double>(cfg.vocab_size, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t t = 0; t < cfg.vocab_size; ++t)
      for (std::size_t j = 0; j < cfg.d_model; ++j) logits[i][t] += hf[i][j] * E[t][j];
  return logits;
}

TEST(LMConfig, Validation) {
  LMConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config(0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(LanguageModel, ToyForwardMatchesScriptedPass) {
  LMConfig c;
  c.layers = 1;
  c.heads = 1;
  c.d_model = 4;
  c.d_ff = 8;
  c.max_context = 8;
  c.vocab_size = 3;
  Rng rng(3);
  LanguageModel lm(c, rng);
  perturb(lm, 4, 0.3);
  const std::vector<TokenId> ids = {1, 0, 2, 2, 1};
  const Array2 logits = lm.forward(ContextAssembly().tokens(ids)).value();
  const Mat oracle = scripted_forward(lm, ids);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(logits(i, t), oracle[i][t], 1e-12);
}

TEST(LanguageModel, TwoLayerForwardMatchesScriptedPass) {
  Rng rng(5);
  LanguageModel lm(tiny_config(), rng);
  perturb(lm, 6, 0.1);
  const std::vector<TokenId> ids = {1, 4, 7, 3, 11, 0, 9};
  const Array2 logits = lm.forward(ContextAssembly().tokens(ids)).value();
  const Mat oracle = scripted_forward(lm, ids);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t t = 0; t < 12; ++t) EXPECT_NEAR(logits(i, t), oracle[i][t], 1e-11);
}

class LmSeeded : public ::testing::TestWithParam<int> {
 protected:
  std::uint64_t seed() const { return 100 + static_cast<std::uint64_t>(GetParam()); }
};

TEST_P(LmSeeded, CausalityUnderSuffixPerturbation) {
  Rng rng(seed());
  LanguageModel lm(tiny_config(), rng);
  const std::size_t len = 4 + rng.below(10);
  std::vector<TokenId> ids(len);
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(12));
  const std::size_t t = rng.below(len);
  auto changed = ids;
  for (std::size_t i = t + 1; i < len; ++i) changed[i] = static_cast<TokenId>(rng.below(12));
  // Positions after t may also become injected rows; the length stays fixed.
  ContextAssembly b;
  b.tokens(std::vector<TokenId>(changed.begin(), changed.begin() + static_cast<long>(t) + 1));
  if (t + 1 < len) {
    Array2 noise(len - t - 1, 8);
    for (double& v : noise.data()) v = rng.normal();
    b.embeddings(Var(noise));
  }
  const Array2 la = lm.forward(ContextAssembly().tokens(ids)).value();
  const Array2 lb = lm.forward(b).value();
  EXPECT_EQ(la.slice_rows(0, t + 1), lb.slice_rows(0, t + 1));
}

TEST_P(LmSeeded, InjectedTokenEmbeddingsAreBitwiseIdentical) {
  Rng rng(seed());
  LanguageModel lm(tiny_config(), rng);
  std::vector<TokenId> ids(3 + rng.below(8));
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(12));
  const std::size_t cut = rng.below(ids.size());
  const std::vector<TokenId> head(ids.begin(), ids.begin() + static_cast<long>(cut));
  const std::vector<TokenId> tail(ids.begin() + static_cast<long>(cut), ids.end());
  ContextAssembly mixed;
  mixed.tokens(head).embeddings(Var(lm.token_embeddings(tail)));
  EXPECT_EQ(lm.forward(ContextAssembly().tokens(ids)).value(), lm.forward(mixed).value());
}

TEST_P(LmSeeded, KvCacheMatchesFullForward) {
  Rng rng(seed());
  LanguageModel lm(tiny_config(), rng);
  perturb(lm, seed(), 0.05);
  std::vector<TokenId> ids(6 + rng.below(10));
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(12));
  const Array2 full = lm.forward(ContextAssembly().tokens(ids)).value();
  const Decoder dec(lm);
  KVCache cache = dec.start();
  const std::size_t prefill = 1 + rng.below(ids.size() - 1);
  auto logits = dec.extend(cache, lm.token_embeddings(std::span(ids).first(prefill)));
  for (std::size_t i = prefill - 1; i < ids.size(); ++i) {
    for (std::size_t t = 0; t < 12; ++t) EXPECT_NEAR(logits[t], full(i, t), 1e-10);
    if (i + 1 < ids.size()) logits = dec.extend_token(cache, ids[i + 1]);
  }
}

TEST_P(LmSeeded, PackedForwardEqualsSeparateForwards) {
  Rng rng(seed());
  LanguageModel lm(tiny_config(), rng);
  std::vector<TokenId> a(2 + rng.below(6)), b(2 + rng.below(6));
  for (auto& id : a) id = static_cast<TokenId>(rng.below(12));
  for (auto& id : b) id = static_cast<TokenId>(rng.below(12));
  std::vector<TokenId> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const std::size_t lens[] = {a.size(), b.size()};
  const Array2 packed =
      lm.forward_packed(lm.embed(ContextAssembly().tokens(ab)), lens).value();
  const Array2 la = lm.forward(ContextAssembly().tokens(a)).value();
  for (std::size_t i = 0; i < la.rows(); ++i)
    for (std::size_t t = 0; t < 12; ++t) EXPECT_NEAR(packed(i, t), la(i, t), 1e-12);
  const Array2 lb = lm.forward(ContextAssembly().tokens(b)).value();
  for (std::size_t i = 0; i < lb.rows(); ++i)
    for (std::size_t t = 0; t < 12; ++t) EXPECT_NEAR(packed(a.size() + i, t), lb(i, t), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LmSeeded, ::testing::Range(0, 10));

TEST(LanguageModel, RejectsOverflowAndWidthMismatch) {
  Rng rng(1);
  LanguageModel lm(tiny_config(), rng);
  EXPECT_THROW(lm.forward(ContextAssembly().tokens(std::vector<TokenId>(33, 1))),
               ContextOverflowError);
  EXPECT_THROW(lm.forward(ContextAssembly().embeddings(Var(Array2(2, 7)))), ShapeError);
  EXPECT_THROW(lm.forward(ContextAssembly().tokens({12})), std::out_of_range);
  EXPECT_THROW(lm.forward(ContextAssembly()), std::invalid_argument);
}

TEST(LanguageModel, FreezeStopsParameterGradientsButNotInjectedOnes) {
  Rng rng(2);
  LanguageModel lm(tiny_config(), rng);
  lm.freeze();
  EXPECT_TRUE(lm.frozen());
  EXPECT_EQ(lm.frozen_hash(), lm.content_hash());
  for (const auto& p : lm.parameters()) EXPECT_FALSE(p.requires_grad());
  Var inj(lm.token_embeddings(std::vector<TokenId>{3, 4}), true);
  ContextAssembly ctx;
  ctx.tokens({1, 4}).embeddings(inj).tokens({6, 5});
  const std::vector<TokenId> target = {7, 2};
  const Var loss = sequence_loss(lm, ctx, target);
  ad::backward(loss);
  double norm = 0;
  for (double g : inj.grad().data()) norm += g * g;
  EXPECT_GT(norm, 0.0);
  for (const auto& p : lm.parameters()) {
    for (double g : p.grad().data()) ASSERT_EQ(g, 0.0);
  }
  EXPECT_EQ(lm.frozen_hash(), lm.content_hash());
}

TEST(LanguageModel, ParameterCountMatchesArchitecture) {
  Rng rng(1);
  const auto c = tiny_config();
  LanguageModel lm(c, rng);
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t per_layer = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
  EXPECT_EQ(lm.parameter_count(),
            c.vocab_size * d + c.max_context * d + c.layers * per_layer + 2 * d);
}

TEST(LanguageModel, SequenceLossIsMeanTokenCrossEntropy) {
  Rng rng(9);
  LanguageModel lm(tiny_config(), rng);
  ContextAssembly ctx;
  ctx.tokens({1, 4, 6, 5});
  const std::vector<TokenId> target = {8, 9, 2};
  const double loss = sequence_loss(lm, ctx, target).value()(0, 0);
  const Array2 lp = teacher_forced_log_probs(lm, ctx, target);
  EXPECT_NEAR(loss, -(lp(0, 8) + lp(1, 9) + lp(2, 2)) / 3.0, 1e-12);
}

// ----- decoding ------------------------------------------------------------

LanguageModel toy_lm(std::size_t vocab, std::uint64_t seed) {
  LMConfig c;
  c.layers = 1;
  c.heads = 1;
  c.d_model = 4;
  c.d_ff = 8;
  c.max_context = 16;
  c.vocab_size = vocab;
  Rng rng(seed);
  LanguageModel lm(c, rng);
  perturb(lm, seed + 7, 0.5);
  return lm;
}

struct Oracle {
  std::vector<TokenId> tokens;
  double score = -1e300;
  bool found = false;
};

// Scores every sequence of length <= max_len that ends with <eos>.
Oracle exhaustive_best(const LanguageModel& lm, const Array2& ctx, std::size_t max_len) {
  Oracle best;
  const auto V = static_cast<TokenId>(lm.config().vocab_size);
  // Depth-first enumeration with incremental prefix scoring.
  std::function<void(std::vector<TokenId>&, double)> walk = [&](std::vector<TokenId>& prefix,
                                                                double sum) {
    ContextAssembly a;
    a.embeddings(Var(ctx)).tokens(prefix);
    const auto lp = log_softmax(lm.forward(a).value().row(a.length() - 1));
    const double eos_score = (sum + lp[special::kEos]) / static_cast<double>(prefix.size() + 1);
    const bool better = eos_score > best.score ||
                        (eos_score == best.score && prefix < best.tokens);
    if (better) {
      best.tokens = prefix;
      best.score = eos_score;
      best.found = true;
    }
    if (prefix.size() + 1 >= max_len) return;
    for (TokenId t = 0; t < V; ++t) {
      if (t == special::kEos) continue;
      prefix.push_back(t);
      walk(prefix, sum + lp[static_cast<std::size_t>(t)]);
      prefix.pop_back();
    }
  };
  std::vector<TokenId> prefix;
  walk(prefix, 0.0);
  return best;
}

TEST(Decoding, BeamOneEqualsGreedy) {
  for (int i = 0; i < 50; ++i) {
    const auto lm = toy_lm(3 + static_cast<std::size_t>(i) % 6, 500 + static_cast<std::uint64_t>(i));
    Array2 ctx = lm.token_embeddings(std::vector<TokenId>{1, static_cast<TokenId>(i % 3)});
    const auto greedy = generate_greedy(lm, ctx, 8);
    const auto beam = generate_beam(lm, ctx, 1, 8);
    EXPECT_EQ(beam.tokens, greedy) << "instance " << i;
  }
}

TEST(Decoding, WideBeamEqualsExhaustiveArgmax) {
  int checked = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t vocab = 3 + static_cast<std::size_t>(i) % 6;  // 3..8
    const std::size_t max_len = 2 + static_cast<std::size_t>(i) % 5;  // 2..6
    if (std::pow(static_cast<double>(vocab), static_cast<double>(max_len)) > 40000) continue;
    const auto lm = toy_lm(vocab, 900 + static_cast<std::uint64_t>(i));
    const Array2 ctx = lm.token_embeddings(std::vector<TokenId>{1, 0});
    const auto width = static_cast<std::size_t>(
        std::pow(static_cast<double>(vocab), static_cast<double>(max_len)));
    const auto beam = generate_beam(lm, ctx, width, max_len);
    const auto oracle = exhaustive_best(lm, ctx, max_len);
    ASSERT_TRUE(oracle.found);
    EXPECT_TRUE(beam.finished);
    EXPECT_EQ(beam.tokens, oracle.tokens) << "instance " << i;
    EXPECT_NEAR(beam.score, oracle.score, 1e-9);
    ++checked;
  }
  EXPECT_GE(checked, 40);
}

TEST(Decoding, BeamWithoutRoomReportsUnfinished) {
  const auto lm = toy_lm(5, 77);
  const Array2 ctx = lm.token_embeddings(std::vector<TokenId>{1});
  const auto r = generate_beam(lm, ctx, 2, 0);
  EXPECT_FALSE(r.finished);
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_THROW(generate_beam(lm, ctx, 0, 4), std::invalid_argument);
}

TEST(Decoding, TinyTemperatureEqualsGreedy) {
  for (int i = 0; i < 20; ++i) {
    const auto lm = toy_lm(8, 40 + static_cast<std::uint64_t>(i));
    const Array2 ctx = lm.token_embeddings(std::vector<TokenId>{1, 3});
    Rng rng(static_cast<std::uint64_t>(i));
    EXPECT_EQ(generate_sample(lm, ctx, 1e-9, 10, rng), generate_greedy(lm, ctx, 10));
  }
}

TEST(Decoding, SamplingIsDeterministicPerSeed) {
  const auto lm = toy_lm(8, 12);
  const Array2 ctx = lm.token_embeddings(std::vector<TokenId>{1, 3});
  Rng a(5), b(5);
  EXPECT_EQ(generate_sample(lm, ctx, 0.7, 10, a), generate_sample(lm, ctx, 0.7, 10, b));
  EXPECT_THROW(generate_sample(lm, ctx, 0.0, 10, a), std::invalid_argument);
}

TEST(Decoding, OneStepFrequenciesPassChiSquare) {
  const auto lm = toy_lm(6, 21);
  const Array2 ctx = lm.token_embeddings(std::vector<TokenId>{1, 3});
  const Decoder dec(lm);
  KVCache cache = dec.start();
  const auto probs = softmax_rows(Array2::row_vector(dec.extend(cache, ctx)), 0.7);
  std::vector<double> counts(6, 0.0);
  Rng rng(2024);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto out = generate_sample(lm, ctx, 0.7, 1, rng);
    counts[out.empty() ? special::kEos : static_cast<std::size_t>(out[0])] += 1;
  }
  double chi2 = 0.0;
  int dof = -1;
  for (std::size_t t = 0; t < 6; ++t) {
    const double expected = n * probs(0, t);
    if (expected < 5) continue;
    chi2 += (counts[t] - expected) * (counts[t] - expected) / expected;
    ++dof;
  }
  // Critical values of chi-square at p = 0.01 for 1..5 degrees of freedom.
  const double critical[] = {0, 6.635, 9.210, 11.345, 13.277, 15.086};
  ASSERT_GE(dof, 1);
  EXPECT_LT(chi2, critical[dof]);
}

TEST(Decoding, BannedIdsNeverAppear) {
  const std::vector<TokenId> banned = {3, 4, 6};
  for (int i = 0; i < 20; ++i) {
    const auto lm = toy_lm(8, 300 + static_cast<std::uint64_t>(i));
    const Array2 ctx = lm.token_embeddings(std::vector<TokenId>{1, 3});
    Rng rng(static_cast<std::uint64_t>(i));
    const std::vector<std::vector<TokenId>> outs = {
        generate_greedy(lm, ctx, 10, banned),
        generate_sample(lm, ctx, 1.5, 10, rng, banned),
        generate_beam(lm, ctx, 4, 10, banned).tokens,
    };
    for (const auto& out : outs) {
      for (const TokenId t : out) {
        EXPECT_EQ(std::find(banned.begin(), banned.end(), t), banned.end()) << "instance " << i;
      }
    }
    // Beam 1 still equals greedy under the same ban.
    EXPECT_EQ(generate_beam(lm, ctx, 1, 10, banned).tokens, outs[0]);
  }
}

TEST(Decoding, MarkupIdsCoverMarkersButNotEos) {
  const std::vector<std::string> corpus = {"dog bark"};
  const Vocabulary v = Vocabulary::build(corpus);
  const auto ids = markup_ids(v);
  const std::set<TokenId> got(ids.begin(), ids.end());
  EXPECT_EQ(got, (std::set<TokenId>{special::kPad, special::kBos, special::kSysOpen, special::kUsrOpen,
                                    special::kAsstOpen, special::kSegClose,
                                    static_cast<TokenId>(v.size() - 1)}));
}

TEST(Decoding, GenerationOverflowThrows) {
  const auto lm = toy_lm(5, 3);
  const Array2 ctx = lm.token_embeddings(std::vector<TokenId>(16, 1));
  EXPECT_NO_THROW(generate_greedy(lm, ctx, 1));
  const Array2 big = lm.token_embeddings(std::vector<TokenId>(17, 1));
  EXPECT_THROW(generate_greedy(lm, big, 1), ContextOverflowError);
}

}  // namespace
}  // namespace dct
