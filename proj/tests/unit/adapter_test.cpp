// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dct/adapter.hpp"
#include "dct/lm.hpp"
#include "dct/world.hpp"
#include "gradcheck.hpp"

namespace dct {
namespace {

AdapterConfig small_config() {
  AdapterConfig c;
  c.input_dim = 6;
  c.output_dim = 8;
  c.hidden_dim = 10;
  return c;
}

Array2 random_rows(std::size_t t, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Array2 x(t, d);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

TEST(Adapter, OutputLengthIsCeilOfStack) {
  Rng rng(1);
  const Adapter a(small_config(), rng);
  EXPECT_EQ(a.forward(random_rows(5, 6, 2)).rows(), 1u);
  EXPECT_EQ(a.forward(random_rows(7, 6, 2)).rows(), 2u);
  EXPECT_EQ(a.forward(random_rows(10, 6, 2)).rows(), 2u);
  EXPECT_EQ(a.forward(random_rows(1, 6, 2)).rows(), 1u);
  EXPECT_EQ(a.forward(random_rows(7, 6, 2)).cols(), 8u);
}

TEST(Adapter, WidthMismatchThrows) {
  Rng rng(1);
  const Adapter a(small_config(), rng);
  EXPECT_THROW(a.forward(random_rows(5, 7, 2)), ShapeError);
}

TEST(Adapter, TailBlockIsZeroPadded) {
  // Frames 5 and 6 of a 7-frame input must give the same second row as the
  // same frames followed by three explicit zero frames.
  Rng rng(3);
  const Adapter a(small_config(), rng);
  const Array2 x = random_rows(7, 6, 4);
  Array2 padded(10, 6);
  for (std::size_t r = 0; r < 7; ++r) {
    for (std::size_t c = 0; c < 6; ++c) padded(r, c) = x(r, c);
  }
  const Array2 y = a.forward(x);
  const Array2 yp = a.forward(padded);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(y(1, c), yp(1, c));
    EXPECT_EQ(y(0, c), yp(0, c));
  }
}

TEST(Adapter, ZeroWeightsGiveTheOutputBias) {
  Rng rng(5);
  Adapter a(small_config(), rng);
  std::vector<Array2> values;
  for (const auto& [name, p] : a.named_parameters()) values.emplace_back(p.value().rows(), p.value().cols());
  for (std::size_t c = 0; c < 8; ++c) values[3](0, c) = 0.25 * static_cast<double>(c);
  a.load_values(values);
  const Array2 y = a.forward(random_rows(12, 6, 6));
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y(r, c), 0.25 * static_cast<double>(c));
  }
}

TEST(Adapter, InitIsSeededWithZeroBiases) {
  Rng r1(9), r2(9), r3(10);
  const Adapter a(small_config(), r1), b(small_config(), r2), c(small_config(), r3);
  EXPECT_EQ(a.content_hash(), b.content_hash());
  EXPECT_NE(a.content_hash(), c.content_hash());
  const auto params = a.named_parameters();
  ASSERT_EQ(params.size(), 4u);
  EXPECT_EQ(params[0].first, "w1");
  EXPECT_EQ(params[1].first, "b1");
  for (double v : params[1].second.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : params[3].second.value().data()) EXPECT_EQ(v, 0.0);
  // Xavier-uniform bound for w1: sqrt(6 / (fan_in + fan_out)).
  const double bound = std::sqrt(6.0 / (30.0 + 10.0));
  for (double v : params[0].second.value().data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Adapter, ParameterCount) {
  Rng rng(1);
  const Adapter a(small_config(), rng);
  EXPECT_EQ(a.parameter_count(), 5u * 6u * 10u + 10u + 10u * 8u + 8u);
  AdapterConfig d;  // D' = 32, D = 64, H = D
  Rng rng2(1);
  EXPECT_EQ(Adapter(d, rng2).parameter_count(), 160u * 64u + 64u + 64u * 64u + 64u);
}

TEST(Adapter, PerturbingOneBlockChangesOnlyItsRow) {
  Rng rng(11);
  const Adapter a(small_config(), rng);
  const Array2 x = random_rows(15, 6, 12);
  const Array2 y = a.forward(x);
  for (std::size_t block = 0; block < 3; ++block) {
    Array2 xp = x;
    xp(block * 5 + 2, 3) += 0.5;
    const Array2 yp = a.forward(xp);
    for (std::size_t r = 0; r < 3; ++r) {
      bool same = true;
      for (std::size_t c = 0; c < 8; ++c) same = same && y(r, c) == yp(r, c);
      EXPECT_EQ(same, r != block) << "block " << block << " row " << r;
    }
  }
}

TEST(Adapter, CloneIsIndependent) {
  Rng rng(13);
  Adapter a(small_config(), rng);
  const Adapter b = a.clone();
  EXPECT_EQ(a.content_hash(), b.content_hash());
  ad::Var w = a.parameters()[0];
  w.mutable_value()(0, 0) += 1.0;
  EXPECT_NE(a.content_hash(), b.content_hash());
}

TEST(Adapter, GradientsMatchFiniteDifferences) {
  Rng rng(17);
  Adapter a(small_config(), rng);
  const Array2 x = random_rows(7, 6, 18);
  // Input gradient through the shared oracle.
  const auto report = testing::gradcheck(
      [&](std::span<const ad::Var> in) {
        const ad::Var y = a.forward(in[0]);
        return ad::sum(ad::mul(y, y));
      },
      {x});
  EXPECT_LT(report.max_rel_error, 1e-4);

  // Parameter gradients against central differences on the stored values.
  auto loss = [&] {
    const ad::Var y = a.forward(ad::Var(x));
    return ad::sum(ad::mul(y, y));
  };
  auto params = a.parameters();
  for (auto& p : params) p.zero_grad();
  ad::backward(loss());
  const double h = 1e-5;
  for (auto& p : params) {
    const Array2 g = p.grad();
    for (std::size_t i = 0; i < p.value().data().size(); i += 7) {
      double& v = p.mutable_value().data()[i];
      const double keep = v;
      v = keep + h;
      const double up = loss().value()(0, 0);
      v = keep - h;
      const double down = loss().value()(0, 0);
      v = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(g.data()[i]), 1e-6});
      EXPECT_LT(std::abs(numeric - g.data()[i]) / scale, 1e-4);
    }
  }
}

TEST(Adapter, InitialOutputNormIsWithinTenfoldOfTokenEmbeddings) {
  // Default sizes: 16-dim features, 32-dim encoder, 64-dim LM.
  const FrozenEncoder encoder;
  AdapterConfig cfg;
  Rng rng(21);
  const Adapter a(cfg, rng);
  LMConfig lc;
  lc.d_model = 64;
  lc.d_ff = 256;
  lc.vocab_size = 180;
  Rng lrng(22);
  const LanguageModel lm(lc, lrng);
  double tok = 0.0;
  const Array2& table = lm.token_table().value();
  for (std::size_t r = 0; r < table.rows(); ++r) tok += row_norm(table.row(r));
  tok /= static_cast<double>(table.rows());

  Rng xr(23);
  Array2 feats(200, 16);
  for (double& v : feats.data()) v = xr.uniform();
  const Array2 y = a.forward(encoder.forward(feats));
  double out = 0.0;
  for (std::size_t r = 0; r < y.rows(); ++r) out += row_norm(y.row(r));
  out /= static_cast<double>(y.rows());
  EXPECT_GT(out, tok / 10.0);
  EXPECT_LT(out, tok * 10.0);
}

}  // namespace
}  // namespace dct
