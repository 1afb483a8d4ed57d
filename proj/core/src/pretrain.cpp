// SPDX-License-Identifier: Apache-2.0
#include "dct/pretrain.hpp"

#include <cmath>

#include "dct/optim.hpp"

namespace dct {

namespace {

void check_ids(const TextExample& ex, std::size_t vocab) {
  for (TokenId id : ex.tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("corpus token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
  }
  if (ex.answer_offset == 0 || ex.answer_offset >= ex.tokens.size()) {
    throw std::invalid_argument("corpus example without an answer span");
  }
}

}  // namespace

ad::Var answer_span_loss(const LanguageModel& lm, std::span<const TextExample> batch,
                         double embedding_noise, Rng* noise_rng) {
  std::vector<TokenId> ids;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;
  for (const auto& ex : batch) {
    check_ids(ex, lm.config().vocab_size);
    const std::size_t n = ex.tokens.size() - 1;  // inputs drop the final token
    ids.insert(ids.end(), ex.tokens.begin(), ex.tokens.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      targets.push_back(ex.tokens[i + 1]);
      mask.push_back(i + 1 >= ex.answer_offset ? 1 : 0);
    }
    lengths.push_back(n);
  }
  ad::Var x = ad::gather_rows(lm.token_table(), ids);
  if (embedding_noise > 0.0 && noise_rng != nullptr) {
    Array2 noise(x.rows(), x.cols());
    for (double& v : noise.data()) v = embedding_noise * noise_rng->normal();
    x = ad::add(x, ad::Var(std::move(noise)));
  }
  const ad::Var logits = lm.forward_packed(x, lengths);
  return ad::cross_entropy_masked(logits, targets, mask);
}

double heldout_perplexity(const LanguageModel& lm, std::span<const TextExample> examples) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& ex : examples) {
    const std::size_t n = ex.tokens.size() - ex.answer_offset;
    const TextExample one[] = {ex};
    nll += answer_span_loss(lm, one, 0.0, nullptr).value()(0, 0) * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw std::invalid_argument("heldout_perplexity: no answer tokens");
  return std::exp(nll / static_cast<double>(count));
}

LanguageModel pretrain_lm(const LMConfig& config, const ExampleSampler& sampler,
                          const PretrainConfig& options, PretrainReport* report,
                          const std::function<void(std::size_t, double)>& progress) {
  if (options.batch == 0) throw std::invalid_argument("pretrain: batch must be positive");
  Rng init_rng(derive_seed(options.seed, "lm-init"));
  LanguageModel lm(config, init_rng);
  Rng data_rng(derive_seed(options.seed, "lm-data"));
  Rng noise_rng(derive_seed(options.seed, "lm-noise"));
  Adam opt(lm.parameters());

  for (std::size_t step = 0; step < options.steps; ++step) {
    double lr = options.peak_lr;
    if (step < options.warmup) lr *= static_cast<double>(step + 1) / static_cast<double>(options.warmup);
    const double progress_frac = static_cast<double>(step) / static_cast<double>(options.steps);
    lr *= 1.0 - (1.0 - options.final_lr_fraction) * progress_frac;

    std::vector<TextExample> batch;
    for (std::size_t b = 0; b < options.batch; ++b) batch.push_back(sampler(data_rng));
    opt.zero_grad();
    const ad::Var loss = answer_span_loss(lm, batch, options.embedding_noise, &noise_rng);
    ad::backward(loss);
    const auto params = opt.params();
    clip_grad_norm(params, options.clip);
    opt.step(lr);
    const double l = loss.value()(0, 0);
    if (report) report->losses.push_back(l);
    if (progress) progress(step, l);
  }

  for (auto& p : lm.parameters()) {
    p.zero_grad();
    round_to_float(p.mutable_value());
  }
  if (report && options.heldout > 0) {
    Rng held_rng(derive_seed(options.seed, "lm-heldout"));
    std::vector<TextExample> held;
    for (std::size_t i = 0; i < options.heldout; ++i) held.push_back(sampler(held_rng));
    report->heldout_perplexity = heldout_perplexity(lm, held);
  }
  return lm;
}

ExampleSampler list_sampler(std::vector<TextExample> corpus) {
  if (corpus.empty()) throw std::invalid_argument("list_sampler: empty corpus");
  return [corpus = std::move(corpus)](Rng& rng) { return corpus[rng.below(corpus.size())]; };
}

}  // namespace dct
