// SPDX-License-Identifier: Apache-2.0
#include "dct/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dct {

namespace {

using Eigen::Index;

// Mirrors ad::layer_norm arithmetic row by row.
void layer_norm_rows(RowMajorMatrix& x, const Array2& gain, const Array2& bias,
                     double eps = 1e-5) {
  const auto n = x.cols();
  for (Index r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (Index c = 0; c < n; ++c) mu += x(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (Index c = 0; c < n; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (Index c = 0; c < n; ++c) {
      const double xh = (x(r, c) - mu) * inv_std;
      x(r, c) = xh * gain(0, static_cast<std::size_t>(c)) + bias(0, static_cast<std::size_t>(c));
    }
  }
}

void add_bias(RowMajorMatrix& x, const Array2& bias) {
  x.rowwise() += bias.map().row(0);
}

void gelu_inplace(RowMajorMatrix& x) {
  for (Index i = 0; i < x.size(); ++i) {
    double& v = x.data()[i];
    v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
}

struct Candidate {
  double sum;
  std::size_t parent;
  TokenId token;
};

// Candidate sequence = parent tokens + token; parents at one step share a length.
bool lexicographically_less(const std::vector<TokenId>& pa, TokenId ta,
                            const std::vector<TokenId>& pb, TokenId tb) {
  if (pa != pb) return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  return ta < tb;
}

struct Hypothesis {
  std::vector<TokenId> tokens;
  double sum = 0.0;
  KVCache cache;
  std::vector<double> log_probs;
};

bool better(double score_a, const std::vector<TokenId>& a, double score_b,
            const std::vector<TokenId>& b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

void ban(std::vector<double>& logits, std::span<const TokenId> banned) {
  for (TokenId id : banned) {
    if (id < 0 || static_cast<std::size_t>(id) >= logits.size()) {
      throw std::out_of_range("banned id " + std::to_string(id) + " outside the vocabulary");
    }
    logits[static_cast<std::size_t>(id)] = -std::numeric_limits<double>::infinity();
  }
}

}  // namespace

std::vector<TokenId> markup_ids(const Vocabulary& vocab) {
  return {special::kPad,      special::kBos,      special::kSysOpen, special::kUsrOpen,
          special::kAsstOpen, special::kSegClose, vocab.unk_id()};
}

Decoder::Decoder(const LanguageModel& lm) : lm_(lm) {}

KVCache Decoder::start() const {
  KVCache cache;
  cache.keys.resize(lm_.config().layers);
  cache.values.resize(lm_.config().layers);
  return cache;
}

std::vector<double> Decoder::extend(KVCache& cache, const Array2& rows) const {
  const LMConfig& cfg = lm_.config();
  const auto D = static_cast<Index>(cfg.d_model);
  if (rows.cols() != cfg.d_model) {
    throw ShapeError("Decoder::extend: row width " + std::to_string(rows.cols()) +
                     " != model width " + std::to_string(cfg.d_model));
  }
  if (rows.rows() == 0) throw std::invalid_argument("Decoder::extend: no rows");
  const std::size_t p0 = cache.length;
  const std::size_t n = rows.rows();
  if (p0 + n > cfg.max_context) {
    throw ContextOverflowError("generation needs " + std::to_string(p0 + n) +
                               " positions, maximum is " + std::to_string(cfg.max_context));
  }
  const auto N = static_cast<Index>(n);
  RowMajorMatrix x = rows.map();
  x += lm_.position_table().value().map().middleRows(static_cast<Index>(p0), N);

  const std::size_t hd = cfg.d_model / cfg.heads;
  const auto HD = static_cast<Index>(hd);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t total = p0 + n;

  for (std::size_t li = 0; li < lm_.layers().size(); ++li) {
    const LayerParams& l = lm_.layers()[li];
    RowMajorMatrix a = x;
    layer_norm_rows(a, l.ln1_gain.value(), l.ln1_bias.value());
    RowMajorMatrix q = a * l.wq.value().map();
    add_bias(q, l.bq.value());
    RowMajorMatrix k = a * l.wk.value().map();
    add_bias(k, l.bk.value());
    RowMajorMatrix v = a * l.wv.value().map();
    add_bias(v, l.bv.value());

    auto& kc = cache.keys[li];
    auto& vc = cache.values[li];
    kc.insert(kc.end(), k.data(), k.data() + k.size());
    vc.insert(vc.end(), v.data(), v.data() + v.size());
    const ConstMatrixMap K(kc.data(), static_cast<Index>(total), D);
    const ConstMatrixMap V(vc.data(), static_cast<Index>(total), D);

    RowMajorMatrix att(N, D);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const auto off = static_cast<Index>(h * hd);
      for (Index i = 0; i < N; ++i) {
        const auto visible = static_cast<Index>(p0) + i + 1;
        Eigen::RowVectorXd s =
            (q.block(i, off, 1, HD) * K.block(0, off, visible, HD).transpose()) * inv_scale;
        const double mx = s.maxCoeff();
        double z = 0.0;
        for (Index j = 0; j < visible; ++j) {
          s(j) = std::exp(s(j) - mx);
          z += s(j);
        }
        s /= z;
        att.block(i, off, 1, HD).noalias() = s * V.block(0, off, visible, HD);
      }
    }
    RowMajorMatrix o = att * l.wo.value().map();
    add_bias(o, l.bo.value());
    x += o;
    RowMajorMatrix b = x;
    layer_norm_rows(b, l.ln2_gain.value(), l.ln2_bias.value());
    RowMajorMatrix f = b * l.w1.value().map();
    add_bias(f, l.b1.value());
    gelu_inplace(f);
    RowMajorMatrix g = f * l.w2.value().map();
    add_bias(g, l.b2.value());
    x += g;
  }
  cache.length = total;

  RowMajorMatrix last = x.bottomRows(1);
  layer_norm_rows(last, lm_.final_gain().value(), lm_.final_bias().value());
  const Eigen::RowVectorXd logits = last * lm_.token_table().value().map().transpose();
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

std::vector<double> Decoder::extend_token(KVCache& cache, TokenId id) const {
  const TokenId ids[] = {id};
  return extend(cache, lm_.token_embeddings(ids));
}

Array2 context_rows(const LanguageModel& lm, const ContextAssembly& assembly) {
  return lm.embed(assembly).value();
}

std::vector<TokenId> generate_greedy(const LanguageModel& lm, const Array2& context,
                                     std::size_t max_new, std::span<const TokenId> banned) {
  const Decoder dec(lm);
  KVCache cache = dec.start();
  std::vector<double> logits = dec.extend(cache, context);
  std::vector<TokenId> out;
  while (out.size() < max_new) {
    ban(logits, banned);
    const TokenId next = argmax(logits);
    if (next == special::kEos) break;
    out.push_back(next);
    if (out.size() == max_new) break;
    logits = dec.extend_token(cache, next);
  }
  return out;
}

std::vector<TokenId> generate_sample(const LanguageModel& lm, const Array2& context,
                                     double temperature, std::size_t max_new, Rng& rng,
                                     std::span<const TokenId> banned) {
  if (!(temperature > 0.0)) throw std::invalid_argument("generate_sample: temperature must be > 0");
  const Decoder dec(lm);
  KVCache cache = dec.start();
  std::vector<double> logits = dec.extend(cache, context);
  std::vector<TokenId> out;
  while (out.size() < max_new) {
    ban(logits, banned);
    const Array2 probs = softmax_rows(Array2::row_vector(logits), temperature);
    const TokenId next = sample_categorical(probs.row(0), rng);
    if (next == special::kEos) break;
    out.push_back(next);
    if (out.size() == max_new) break;
    logits = dec.extend_token(cache, next);
  }
  return out;
}

BeamResult generate_beam(const LanguageModel& lm, const Array2& context, std::size_t beam,
                         std::size_t max_new, std::span<const TokenId> banned) {
  if (beam == 0) throw std::invalid_argument("generate_beam: beam size must be >= 1");
  const Decoder dec(lm);
  auto next_log_probs = [&](std::vector<double> logits) {
    ban(logits, banned);
    return log_softmax(logits);
  };
  std::vector<Hypothesis> alive(1);
  alive[0].cache = dec.start();
  alive[0].log_probs = next_log_probs(dec.extend(alive[0].cache, context));

  struct Finished {
    std::vector<TokenId> tokens;
    double score;
  };
  std::vector<Finished> finished;
  std::vector<Finished> unfinished;

  for (std::size_t step = 0; step < max_new && !alive.empty(); ++step) {
    std::vector<Candidate> cands;
    cands.reserve(alive.size() * alive[0].log_probs.size());
    for (std::size_t h = 0; h < alive.size(); ++h) {
      const auto& lp = alive[h].log_probs;
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (std::isinf(lp[t])) continue;
        cands.push_back({alive[h].sum + lp[t], h, static_cast<TokenId>(t)});
      }
    }
    const std::size_t keep = std::min(beam, cands.size());
    auto order = [&](const Candidate& a, const Candidate& b) {
      if (a.sum != b.sum) return a.sum > b.sum;
      return lexicographically_less(alive[a.parent].tokens, a.token, alive[b.parent].tokens,
                                    b.token);
    };
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), order);

    std::vector<Hypothesis> next;
    const bool last_step = step + 1 == max_new;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      std::vector<TokenId> tokens = alive[c.parent].tokens;
      const double len = static_cast<double>(tokens.size() + 1);
      if (c.token == special::kEos) {
        finished.push_back({std::move(tokens), c.sum / len});
        continue;
      }
      tokens.push_back(c.token);
      if (last_step) {
        unfinished.push_back({std::move(tokens), c.sum / len});
        continue;
      }
      Hypothesis h;
      h.tokens = std::move(tokens);
      h.sum = c.sum;
      h.cache = alive[c.parent].cache;
      h.log_probs = next_log_probs(dec.extend_token(h.cache, c.token));
      next.push_back(std::move(h));
    }
    alive = std::move(next);
    if (finished.size() >= beam) break;
  }

  const auto& pool = finished.empty() ? unfinished : finished;
  if (pool.empty()) return BeamResult{{}, 0.0, false};
  const Finished* best = &pool.front();
  for (const auto& f : pool) {
    if (better(f.score, f.tokens, best->score, best->tokens)) best = &f;
  }
  return BeamResult{best->tokens, best->score, !finished.empty()};
}

}  // namespace dct
