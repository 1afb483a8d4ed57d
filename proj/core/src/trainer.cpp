// SPDX-License-Identifier: Apache-2.0
#include "dct/trainer.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dct/chat_template.hpp"
#include "dct/lm_io.hpp"
#include "dct/prompts.hpp"

namespace dct {

namespace fs = std::filesystem;

std::string to_string(TrainMode mode) { return mode == TrainMode::kCaption ? "caption" : "dct"; }

TrainMode train_mode_from_string(std::string_view s) {
  if (s == "caption") return TrainMode::kCaption;
  if (s == "dct") return TrainMode::kDct;
  throw std::invalid_argument("unknown training mode '" + std::string(s) + "' (caption|dct)");
}

void TrainConfig::validate() const {
  if (batch_size == 0 || warmup_iters == 0 || decay_iters == 0 || val_every == 0 ||
      max_iters == 0) {
    throw std::invalid_argument("TrainConfig: sizes and iteration counts must be positive");
  }
  if (!(peak_lr > 0.0) || !(clip_norm > 0.0)) {
    throw std::invalid_argument("TrainConfig: peak_lr and clip_norm must be positive");
  }
  if (warmup_iters >= decay_iters) {
    throw std::invalid_argument("TrainConfig: warmup_iters must be below decay_iters");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
        adam_eps > 0.0)) {
    throw std::invalid_argument("TrainConfig: invalid Adam constants");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true or false");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key == "mode") c.mode = train_mode_from_string(value);
    else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "warmup_iters") c.warmup_iters = parse_number<std::size_t>(key, value);
    else if (key == "peak_lr") c.peak_lr = parse_number<double>(key, value);
    else if (key == "decay_iters") c.decay_iters = parse_number<std::size_t>(key, value);
    else if (key == "val_every") c.val_every = parse_number<std::size_t>(key, value);
    else if (key == "max_iters") c.max_iters = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "clip_norm") c.clip_norm = parse_number<double>(key, value);
    else if (key == "adam_beta1") c.adam_beta1 = parse_number<double>(key, value);
    else if (key == "adam_beta2") c.adam_beta2 = parse_number<double>(key, value);
    else if (key == "adam_eps") c.adam_eps = parse_number<double>(key, value);
    else if (key == "hidden_dim") c.hidden_dim = parse_number<std::size_t>(key, value);
    else if (key == "val_items") c.val_items = parse_number<std::size_t>(key, value);
    else if (key == "keep_best") c.keep_best = parse_bool(key, value);
    else throw std::invalid_argument("config line " + std::to_string(n) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "mode = " << to_string(c.mode) << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "warmup_iters = " << c.warmup_iters << '\n'
      << "peak_lr = " << fmt_double(c.peak_lr) << '\n'
      << "decay_iters = " << c.decay_iters << '\n'
      << "val_every = " << c.val_every << '\n'
      << "max_iters = " << c.max_iters << '\n'
      << "seed = " << c.seed << '\n'
      << "clip_norm = " << fmt_double(c.clip_norm) << '\n'
      << "adam_beta1 = " << fmt_double(c.adam_beta1) << '\n'
      << "adam_beta2 = " << fmt_double(c.adam_beta2) << '\n'
      << "adam_eps = " << fmt_double(c.adam_eps) << '\n'
      << "hidden_dim = " << c.hidden_dim << '\n'
      << "val_items = " << c.val_items << '\n'
      << "keep_best = " << (c.keep_best ? "true" : "false") << '\n';
  return out.str();
}

double lr_schedule(const TrainConfig& c, std::size_t i) {
  const double peak = c.peak_lr;
  if (i <= c.warmup_iters) {
    return peak * (static_cast<double>(i) / static_cast<double>(c.warmup_iters));
  }
  const double frac =
      static_cast<double>(i - c.warmup_iters) / static_cast<double>(c.decay_iters);
  return peak * std::max(0.0, 1.0 - frac);
}

namespace {

ContextAssembly assemble(const PromptPair& p, const ad::Var& audio) {
  ContextAssembly a;
  a.tokens(p.prefix).embeddings(audio).tokens(p.suffix);
  return a;
}

}  // namespace

ContextAssembly build_caption_context(const ad::Var& audio, const Vocabulary& vocab) {
  return assemble(render_chat(prompt_messages(prompt("caption_train")), vocab), audio);
}

ContextAssembly build_dct_context(const ad::Var& audio, const Vocabulary& vocab) {
  return assemble(render_chat(slot_conversation(std::nullopt), vocab), audio);
}

std::vector<TrainExample> build_examples(TrainMode mode, const std::vector<LoadedScene>& scenes,
                                         const FrozenEncoder& encoder, const Vocabulary& vocab,
                                         const LanguageModel& lm,
                                         const std::vector<TargetRecord>* targets) {
  std::map<std::pair<std::string, std::string>, const TargetRecord*> by_key;
  if (mode == TrainMode::kDct) {
    if (targets == nullptr) throw DatasetError("dct mode needs prepared targets");
    const std::string hash = model_hash_hex(lm);
    for (const auto& r : *targets) {
      if (r.model_hash != hash) {
        throw VersionMismatchError("target for " + r.scene_id + " was sampled from backbone " +
                                   r.model_hash + ", loaded backbone is " + hash);
      }
      by_key[{r.scene_id, r.caption}] = &r;
    }
  }
  std::vector<TrainExample> out;
  for (const auto& s : scenes) {
    const Array2 audio = encoder.forward(s.features);
    for (const auto& c : s.record.captions) {
      TrainExample ex{s.record.scene.id, audio, {}};
      if (mode == TrainMode::kCaption) {
        ex.target = vocab.tokenize(c.text);
      } else {
        const auto it = by_key.find({s.record.scene.id, c.text});
        if (it == by_key.end()) {
          throw DatasetError("no prepared target for scene " + s.record.scene.id + " caption '" +
                             c.text + "'");
        }
        ex.target = vocab.tokenize(it->second->response);
      }
      ex.target.push_back(special::kEos);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

namespace {

AdapterConfig adapter_config_for(const TrainConfig& c, const LanguageModel& lm,
                                 const std::vector<TrainExample>& train) {
  if (train.empty()) throw std::invalid_argument("trainer: no training examples");
  AdapterConfig a;
  a.input_dim = train.front().audio.cols();
  a.output_dim = lm.config().d_model;
  a.hidden_dim = c.hidden_dim;
  return a;
}

Adapter make_adapter(const TrainConfig& c, const LanguageModel& lm,
                     const std::vector<TrainExample>& train) {
  Rng rng(derive_seed(c.seed, "adapter-init"));
  return Adapter(adapter_config_for(c, lm, train), rng);
}

}  // namespace

Trainer::Trainer(TrainConfig config, const LanguageModel& lm, const Vocabulary& vocab,
                 std::vector<TrainExample> train, std::vector<TrainExample> val)
    : config_(config),
      lm_(lm),
      vocab_(vocab),
      train_(std::move(train)),
      val_(std::move(val)),
      adapter_(make_adapter(config_, lm_, train_)),
      best_(adapter_.clone()),
      optimizer_(adapter_.parameters(),
                 AdamConfig{config_.adam_beta1, config_.adam_beta2, config_.adam_eps}),
      rng_(derive_seed(config_.seed, "batches")) {
  config_.validate();
  if (!lm_.frozen()) throw std::invalid_argument("trainer: the backbone must be frozen");
  if (config_.val_items > 0 && val_.size() > config_.val_items) val_.resize(config_.val_items);
}

ad::Var Trainer::example_loss(const TrainExample& ex) const {
  const ad::Var audio = adapter_.forward(ad::Var(ex.audio));
  const ContextAssembly ctx = config_.mode == TrainMode::kCaption
                                  ? build_caption_context(audio, vocab_)
                                  : build_dct_context(audio, vocab_);
  return sequence_loss(lm_, ctx, ex.target);
}

double Trainer::step() {
  const std::size_t i = iteration_ + 1;
  const double lr = lr_schedule(config_, i);
  std::vector<ad::Var> losses;
  std::vector<std::string> ids;
  for (std::size_t b = 0; b < config_.batch_size; ++b) {
    const auto& ex = train_[rng_.below(train_.size())];
    ids.push_back(ex.scene_id);
    try {
      losses.push_back(example_loss(ex));
    } catch (const NumericError& e) {
      throw TrainingDivergedError("non-finite activations at iteration " + std::to_string(i) +
                                  " (lr " + fmt_double(lr) + ") on scene " + ex.scene_id + ": " +
                                  e.what());
    }
  }
  const ad::Var loss = ad::mean(losses);
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) {
    std::string msg = "non-finite training loss at iteration " + std::to_string(i) +
                      " (lr " + fmt_double(lr) + "); batch:";
    for (std::size_t b = 0; b < ids.size(); ++b) {
      msg += " " + ids[b] + "=" + fmt_double(losses[b].value()(0, 0));
    }
    throw TrainingDivergedError(msg);
  }
  optimizer_.zero_grad();
  try {
    ad::backward(loss);
  } catch (const NumericError& e) {
    throw TrainingDivergedError("non-finite gradient at iteration " + std::to_string(i) + " (lr " +
                                fmt_double(lr) + "): " + e.what());
  }
  const auto params = adapter_.parameters();
  clip_grad_norm(params, config_.clip_norm);
  optimizer_.step(lr);
  iteration_ = i;
  return value;
}

double Trainer::validate() const {
  if (val_.empty()) throw std::invalid_argument("trainer: empty validation split");
  double total = 0.0;
  for (const auto& ex : val_) total += example_loss(ex).value()(0, 0);
  return total / static_cast<double>(val_.size());
}

void Trainer::run(const std::function<void(const MetricsRow&)>& on_metrics,
                  const std::function<void(const Trainer&, double)>& on_validation) {
  while (iteration_ < config_.max_iters) {
    MetricsRow row;
    row.train_loss = step();
    row.iteration = iteration_;
    row.lr = lr_schedule(config_, iteration_);
    if (iteration_ % config_.val_every == 0 || iteration_ == config_.max_iters) {
      const double v = validate();
      row.val_loss = v;
      if (!best_val_ || v < *best_val_) {
        best_val_ = v;
        best_iter_ = iteration_;
        best_ = adapter_.clone();
      }
      if (on_metrics) on_metrics(row);
      if (on_validation) on_validation(*this, v);
    } else if (on_metrics) {
      on_metrics(row);
    }
  }
}

const Adapter& Trainer::output_adapter() const {
  return config_.keep_best && best_val_ ? best_ : adapter_;
}

namespace {

CheckpointSection adapter_section(const std::string& id, const Adapter& a) {
  CheckpointSection s{id, Precision::kFloat64, {}};
  for (const auto& [name, p] : a.named_parameters()) s.arrays.emplace_back(name, p.value());
  return s;
}

nlohmann::json adapter_config_json(const AdapterConfig& c) {
  return {{"input_dim", c.input_dim},
          {"output_dim", c.output_dim},
          {"hidden_dim", c.hidden()},
          {"stack", c.stack}};
}

void check_binding(const nlohmann::json& h, const LanguageModel& lm, const Vocabulary& vocab) {
  if (h.value("template_version", "") != kTemplateVersion) {
    throw VersionMismatchError("checkpoint template version differs from " +
                               std::string(kTemplateVersion));
  }
  if (h.value("backbone_hash", "") != model_hash_hex(lm)) {
    throw VersionMismatchError("checkpoint was trained against backbone " +
                               h.value("backbone_hash", "") + ", loaded backbone is " +
                               model_hash_hex(lm));
  }
  if (h.value("vocab_hash", "") != hex64(vocab.hash())) {
    throw VersionMismatchError("checkpoint vocabulary hash differs from the loaded vocabulary");
  }
}

}  // namespace

Checkpoint Trainer::state_checkpoint() const {
  Checkpoint c;
  c.header["kind"] = "train_state";
  c.header["mode"] = to_string(config_.mode);
  c.header["config"] = format_train_config(config_);
  c.header["iteration"] = iteration_;
  c.header["best_val_loss"] = best_val_ ? nlohmann::json(*best_val_) : nlohmann::json(nullptr);
  c.header["best_iteration"] = best_iter_;
  c.header["rng"] = rng_.serialize();
  c.header["adam_steps"] = optimizer_.steps();
  c.header["adapter_config"] = adapter_config_json(adapter_.config());
  c.header["backbone_hash"] = model_hash_hex(lm_);
  c.header["vocab_hash"] = hex64(vocab_.hash());
  c.header["template_version"] = kTemplateVersion;
  c.put(adapter_section("adapter", adapter_));
  c.put(adapter_section("best_adapter", best_));
  CheckpointSection adam{"adam", Precision::kFloat64, {}};
  for (std::size_t k = 0; k < optimizer_.first_moments().size(); ++k) {
    adam.arrays.emplace_back("m" + std::to_string(k), optimizer_.first_moments()[k]);
    adam.arrays.emplace_back("v" + std::to_string(k), optimizer_.second_moments()[k]);
  }
  c.put(std::move(adam));
  return c;
}

void Trainer::restore(const Checkpoint& state) {
  const auto& h = state.header;
  if (h.value("kind", "") != "train_state") throw CheckpointError("not a training state file");
  check_binding(h, lm_, vocab_);
  if (h.value("mode", "") != to_string(config_.mode)) {
    throw VersionMismatchError("state was saved in mode " + h.value("mode", "") +
                               ", resuming in mode " + to_string(config_.mode));
  }
  adapter_.load_values(state.section("adapter").values());
  best_.load_values(state.section("best_adapter").values());
  const auto adam = state.section("adam").values();
  std::vector<Array2> m, v;
  for (std::size_t k = 0; k + 1 < adam.size(); k += 2) {
    m.push_back(adam[k]);
    v.push_back(adam[k + 1]);
  }
  optimizer_.restore(h.at("adam_steps").get<std::uint64_t>(), std::move(m), std::move(v));
  rng_ = Rng::deserialize(h.at("rng").get<std::string>());
  iteration_ = h.at("iteration").get<std::size_t>();
  best_iter_ = h.at("best_iteration").get<std::size_t>();
  best_val_.reset();
  if (!h.at("best_val_loss").is_null()) best_val_ = h.at("best_val_loss").get<double>();
}

Checkpoint adapter_checkpoint(const Adapter& adapter, const LanguageModel& lm,
                              const Vocabulary& vocab, const FrozenEncoder& encoder,
                              TrainMode mode) {
  Checkpoint c;
  c.header["kind"] = "adapter";
  c.header["mode"] = to_string(mode);
  c.header["adapter_config"] = adapter_config_json(adapter.config());
  c.header["backbone_hash"] = model_hash_hex(lm);
  c.header["vocab_hash"] = hex64(vocab.hash());
  c.header["encoder_hash"] = hex64(encoder.hash());
  c.header["encoder_input_dim"] = encoder.input_dim();
  c.header["template_version"] = kTemplateVersion;
  c.put(adapter_section("adapter", adapter));
  return c;
}

Adapter load_adapter(const Checkpoint& ckpt, const LanguageModel& lm, const Vocabulary& vocab,
                     const FrozenEncoder& encoder) {
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "adapter") throw CheckpointError("not an adapter checkpoint");
  check_binding(h, lm, vocab);
  if (h.value("encoder_hash", "") != hex64(encoder.hash())) {
    throw VersionMismatchError("adapter was trained on a different frozen encoder");
  }
  const auto& a = h.at("adapter_config");
  AdapterConfig cfg;
  cfg.input_dim = a.at("input_dim").get<std::size_t>();
  cfg.output_dim = a.at("output_dim").get<std::size_t>();
  cfg.hidden_dim = a.at("hidden_dim").get<std::size_t>();
  cfg.stack = a.at("stack").get<std::size_t>();
  Rng unused(0);
  Adapter adapter(cfg, unused);
  adapter.load_values(ckpt.section("adapter").values());
  return adapter;
}

}  // namespace dct
