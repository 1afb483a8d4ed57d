// SPDX-License-Identifier: Apache-2.0
#include "dct/lm.hpp"

#include <cmath>
#include <numeric>

namespace dct {

using ad::Var;

void LMConfig::validate() const {
  if (layers == 0 || heads == 0 || d_model == 0 || d_ff == 0 || max_context == 0 ||
      vocab_size == 0) {
    throw std::invalid_argument("LMConfig: all sizes must be positive");
  }
  if (d_model % heads != 0) {
    throw std::invalid_argument("LMConfig: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

ContextAssembly& ContextAssembly::tokens(std::vector<TokenId> ids) {
  if (!ids.empty()) segments_.emplace_back(TokenSegment{std::move(ids)});
  return *this;
}

ContextAssembly& ContextAssembly::embeddings(Var rows) {
  if (rows.rows() > 0) segments_.emplace_back(EmbeddingSegment{std::move(rows)});
  return *this;
}

std::size_t ContextAssembly::length() const {
  std::size_t n = 0;
  for (const auto& seg : segments_) {
    n += std::visit(
        [](const auto& s) -> std::size_t {
          if constexpr (std::is_same_v<std::decay_t<decltype(s)>, TokenSegment>) {
            return s.ids.size();
          } else {
            return s.rows.rows();
          }
        },
        seg);
  }
  return n;
}

namespace {

Var normal_param(std::size_t rows, std::size_t cols, Rng& rng) {
  Array2 a(rows, cols);
  for (double& v : a.data()) v = rng.normal();
  return Var(std::move(a), true);
}

Var uniform_param(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Array2 a(rows, cols);
  for (double& v : a.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return Var(std::move(a), true);
}

Var const_param(std::size_t cols, double value) { return Var(Array2(1, cols, value), true); }

}  // namespace

LanguageModel::LanguageModel(const LMConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  tok_emb_ = normal_param(config_.vocab_size, d, rng);
  pos_emb_ = normal_param(config_.max_context, d, rng);
  layers_.resize(config_.layers);
  for (auto& l : layers_) {
    l.ln1_gain = const_param(d, 1.0);
    l.ln1_bias = const_param(d, 0.0);
    l.wq = uniform_param(d, d, rng);
    l.bq = const_param(d, 0.0);
    l.wk = uniform_param(d, d, rng);
    l.bk = const_param(d, 0.0);
    l.wv = uniform_param(d, d, rng);
    l.bv = const_param(d, 0.0);
    l.wo = uniform_param(d, d, rng);
    l.bo = const_param(d, 0.0);
    l.ln2_gain = const_param(d, 1.0);
    l.ln2_bias = const_param(d, 0.0);
    l.w1 = uniform_param(d, config_.d_ff, rng);
    l.b1 = const_param(config_.d_ff, 0.0);
    l.w2 = uniform_param(config_.d_ff, d, rng);
    l.b2 = const_param(d, 0.0);
  }
  lnf_gain_ = const_param(d, 1.0);
  lnf_bias_ = const_param(d, 0.0);
}

std::vector<std::pair<std::string, Var>> LanguageModel::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out = {{"tok_emb", tok_emb_}, {"pos_emb", pos_emb_}};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    for (const auto& [name, var] :
         std::initializer_list<std::pair<const char*, const Var*>>{
             {"ln1_gain", &l.ln1_gain}, {"ln1_bias", &l.ln1_bias}, {"wq", &l.wq},
             {"bq", &l.bq},             {"wk", &l.wk},             {"bk", &l.bk},
             {"wv", &l.wv},             {"bv", &l.bv},             {"wo", &l.wo},
             {"bo", &l.bo},             {"ln2_gain", &l.ln2_gain}, {"ln2_bias", &l.ln2_bias},
             {"w1", &l.w1},             {"b1", &l.b1},             {"w2", &l.w2},
             {"b2", &l.b2}}) {
      out.emplace_back(p + name, *var);
    }
  }
  out.emplace_back("lnf_gain", lnf_gain_);
  out.emplace_back("lnf_bias", lnf_bias_);
  return out;
}

std::vector<Var> LanguageModel::parameters() const {
  std::vector<Var> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

std::size_t LanguageModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : parameters()) n += v.value().size();
  return n;
}

void LanguageModel::freeze() {
  for (auto& v : parameters()) {
    v.zero_grad();
    v.set_requires_grad(false);
  }
  frozen_ = true;
  frozen_hash_ = content_hash();
}

std::uint64_t LanguageModel::content_hash() const {
  std::uint64_t h = fnv1a(std::string_view{});
  for (const auto& v : parameters()) {
    const auto data = v.value().data();
    h = fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()),
                                            data.size_bytes()),
              h);
  }
  return h;
}

void LanguageModel::load_values(const std::vector<Array2>& values) {
  auto params = parameters();
  if (values.size() != params.size()) {
    throw ShapeError("LanguageModel::load_values: expected " + std::to_string(params.size()) +
                     " arrays, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i].value(), values[i], "LanguageModel::load_values");
    params[i].mutable_value() = values[i];
  }
  if (frozen_) frozen_hash_ = content_hash();
}

Array2 LanguageModel::token_embeddings(std::span<const TokenId> ids) const {
  const auto& table = tok_emb_.value();
  Array2 out(ids.size(), config_.d_model);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    const auto src = table.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Var LanguageModel::embed(const ContextAssembly& assembly) const {
  std::vector<Var> parts;
  for (const auto& seg : assembly.segments()) {
    if (const auto* t = std::get_if<TokenSegment>(&seg)) {
      for (TokenId id : t->ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
          throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
        }
      }
      parts.push_back(ad::gather_rows(tok_emb_, t->ids));
    } else {
      const auto& e = std::get<EmbeddingSegment>(seg);
      if (e.rows.cols() != config_.d_model) {
        throw ShapeError("embedding segment width " + std::to_string(e.rows.cols()) +
                         " != model width " + std::to_string(config_.d_model));
      }
      parts.push_back(e.rows);
    }
  }
  if (parts.empty()) throw std::invalid_argument("empty context assembly");
  return parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
}

Var LanguageModel::forward(const ContextAssembly& assembly) const {
  const Var x = embed(assembly);
  const std::size_t len[] = {x.rows()};
  return forward_packed(x, len);
}

Var LanguageModel::forward_packed(const Var& inputs, std::span<const std::size_t> lengths) const {
  if (inputs.cols() != config_.d_model) {
    throw ShapeError("forward: input width " + std::to_string(inputs.cols()) +
                     " != model width " + std::to_string(config_.d_model));
  }
  std::vector<int> positions;
  positions.reserve(inputs.rows());
  for (std::size_t n : lengths) {
    if (n > config_.max_context) {
      throw ContextOverflowError("context length " + std::to_string(n) + " exceeds maximum " +
                                 std::to_string(config_.max_context));
    }
    for (std::size_t i = 0; i < n; ++i) positions.push_back(static_cast<int>(i));
  }
  if (positions.size() != inputs.rows()) {
    throw ShapeError("forward_packed: lengths do not cover the input rows");
  }
  Var x = ad::add(inputs, ad::gather_rows(pos_emb_, positions));
  x = run_blocks(std::move(x), lengths);
  x = ad::layer_norm(x, lnf_gain_, lnf_bias_);
  return ad::matmul_transposed(x, tok_emb_);
}

Var LanguageModel::run_blocks(Var x, std::span<const std::size_t> lengths) const {
  for (const auto& l : layers_) {
    const Var a = ad::layer_norm(x, l.ln1_gain, l.ln1_bias);
    const Var q = ad::add_row_bias(ad::matmul(a, l.wq), l.bq);
    const Var k = ad::add_row_bias(ad::matmul(a, l.wk), l.bk);
    const Var v = ad::add_row_bias(ad::matmul(a, l.wv), l.bv);
    const Var att = ad::causal_self_attention(q, k, v, config_.heads, lengths);
    x = ad::add(x, ad::add_row_bias(ad::matmul(att, l.wo), l.bo));
    const Var b = ad::layer_norm(x, l.ln2_gain, l.ln2_bias);
    const Var h = ad::gelu(ad::add_row_bias(ad::matmul(b, l.w1), l.b1));
    x = ad::add(x, ad::add_row_bias(ad::matmul(h, l.w2), l.b2));
  }
  return x;
}

namespace {

// Context followed by target[0..n-1); logits at rows [|context|-1, ...) predict target.
std::pair<Var, std::size_t> teacher_forced_logits(const LanguageModel& lm,
                                                  const ContextAssembly& context,
                                                  std::span<const TokenId> target) {
  if (target.empty()) throw std::invalid_argument("teacher forcing: empty target");
  ContextAssembly full = context;
  full.tokens(std::vector<TokenId>(target.begin(), target.end() - 1));
  const std::size_t ctx_len = context.length();
  if (ctx_len == 0) throw std::invalid_argument("teacher forcing: empty context");
  const Var logits = lm.forward(full);
  return {ad::slice_rows(logits, ctx_len - 1, ctx_len - 1 + target.size()), ctx_len};
}

}  // namespace

Var sequence_loss(const LanguageModel& lm, const ContextAssembly& context,
                  std::span<const TokenId> target) {
  const auto [logits, ctx_len] = teacher_forced_logits(lm, context, target);
  return ad::cross_entropy(logits, target);
}

Array2 teacher_forced_log_probs(const LanguageModel& lm, const ContextAssembly& context,
                                std::span<const TokenId> target) {
  const auto [logits, ctx_len] = teacher_forced_logits(lm, context, target);
  Array2 out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto lp = log_softmax(logits.value().row(r));
    std::copy(lp.begin(), lp.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace dct
