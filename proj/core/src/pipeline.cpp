// SPDX-License-Identifier: Apache-2.0
#include "dct/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dct/chat_template.hpp"
#include "dct/prompts.hpp"

namespace dct {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

WorldConfig load_world(const DatasetLayout& layout) {
  return world_config_from_json(read_json_file(layout.config_file()));
}

std::vector<LoadedScene> head(std::vector<LoadedScene> scenes, std::size_t n) {
  if (n > 0 && scenes.size() > n) scenes.resize(n);
  return scenes;
}

}  // namespace

FrozenEncoder encoder_for(const WorldConfig& world) {
  return FrozenEncoder(world.feature_dim, kEncoderDim);
}

// ---- pretrain-lm

PretrainReport run_pretrain(const PretrainJob& job, const LogFn& log) {
  const DatasetLayout layout{job.data_dir};
  const Vocabulary vocab = Vocabulary::load(layout.vocab_file());
  const WorldConfig world = load_world(layout);
  LMConfig cfg = job.lm;
  cfg.vocab_size = vocab.size();
  cfg.validate();
  const LmCorpus corpus(world, vocab, job.mix);
  say(log, "pretraining backbone: " + std::to_string(cfg.layers) + " layers, width " +
               std::to_string(cfg.d_model) + ", vocabulary " + std::to_string(cfg.vocab_size));
  PretrainReport report;
  const std::size_t every = std::max<std::size_t>(1, job.options.steps / 20);
  LanguageModel lm = pretrain_lm(
      cfg, [&](Rng& r) { return corpus.sample(r); }, job.options, &report,
      [&](std::size_t step, double loss) {
        if (step % every == 0 || step + 1 == job.options.steps) {
          say(log, "step " + std::to_string(step) + " loss " + fmt(loss));
        }
      });
  lm.freeze();
  if (!job.out.parent_path().empty()) fs::create_directories(job.out.parent_path());
  save_lm(job.out, lm, vocab);
  if (job.options.heldout > 0) say(log, "held-out perplexity " + fmt(report.heldout_perplexity));
  say(log, "wrote " + job.out.string() + " (model " + model_hash_hex(lm) + ")");
  return report;
}

// ---- prepare-targets

fs::path targets_file(const fs::path& targets_dir, const std::string& split) {
  return targets_dir / ("targets_" + split + ".jsonl");
}

std::map<std::string, TargetReport> run_prepare_targets(const TargetJob& job, const LogFn& log) {
  const DatasetLayout layout{job.data_dir};
  const Vocabulary vocab = Vocabulary::load(layout.vocab_file());
  const LoadedLM loaded = load_lm(job.lm_path, &vocab);
  fs::create_directories(job.out_dir);
  std::map<std::string, TargetReport> out;
  for (const auto& split : job.splits) {
    if (split == "test") throw std::invalid_argument("targets are never prepared for the test split");
    const auto records = read_jsonl(layout.split_file(split));
    const TargetReport r =
        prepare_dataset(records, *loaded.lm, vocab, job.config, targets_file(job.out_dir, split));
    say(log, split + ": " + r.to_json().dump());
    out[split] = r;
  }
  return out;
}

// ---- train-adapter

namespace {

std::string metrics_line(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.iteration << ',' << r.lr << ',' << r.train_loss << ',';
  if (r.val_loss) os << *r.val_loss;
  os << '\n';
  return os.str();
}

constexpr const char* kMetricsHeader = "iteration,lr,train_loss,val_loss\n";

// Rows of an existing metrics file up to and including `iteration`.
std::string metrics_prefix(const fs::path& path, std::size_t iteration) {
  std::ifstream in(path);
  std::string line, out = kMetricsHeader;
  if (!in) return out;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (std::stoull(line.substr(0, comma)) > iteration) break;
    out += line + '\n';
  }
  return out;
}

}  // namespace

TrainOutcome run_train_adapter(const TrainJob& job, const LogFn& log) {
  const TrainConfig& cfg = job.config;
  cfg.validate();
  const DatasetLayout layout{job.data_dir};
  const TrainOutputs outputs{job.out_dir};
  fs::create_directories(job.out_dir);
  TrainOutcome outcome;
  auto note = [&](const fs::path& p, const std::string& role) {
    outcome.inputs.push_back({fs::absolute(p).lexically_normal().string(), role});
  };

  if (!job.config_file.empty()) note(job.config_file, "train-config");
  const Vocabulary vocab = Vocabulary::load(layout.vocab_file());
  note(layout.vocab_file(), "backbone");
  const WorldConfig world = load_world(layout);
  note(layout.config_file(), "config");
  const LoadedLM loaded = load_lm(job.lm_path, &vocab);
  note(job.lm_path, "backbone");
  const LanguageModel& lm = *loaded.lm;
  if (!lm.frozen()) throw std::invalid_argument(job.lm_path.string() + " is not a frozen backbone");
  outcome.backbone_hash_before = lm.content_hash();
  outcome.backbone_frozen_hash = lm.frozen_hash();

  const FrozenEncoder encoder = encoder_for(world);
  std::vector<TargetRecord> train_targets, val_targets;
  if (cfg.mode == TrainMode::kDct) {
    train_targets = read_targets(targets_file(job.targets_dir, "train"));
    note(targets_file(job.targets_dir, "train"), "targets");
    val_targets = read_targets(targets_file(job.targets_dir, "val"));
    note(targets_file(job.targets_dir, "val"), "targets");
  }
  std::vector<TrainExample> train, val;
  for (const std::string split : {"train", "val"}) {
    const auto scenes = load_split(layout, split);
    note(layout.split_file(split), "dataset");
    for (const auto& s : scenes) note(layout.root / s.record.features_path, "features");
    auto& dst = split == "train" ? train : val;
    dst = build_examples(cfg.mode, scenes, encoder, vocab, lm,
                         split == "train" ? &train_targets : &val_targets);
  }
  say(log, "train-adapter (" + to_string(cfg.mode) + "): " + std::to_string(train.size()) +
               " training and " + std::to_string(val.size()) + " validation examples");

  Trainer trainer(cfg, lm, vocab, std::move(train), std::move(val));
  std::string metrics = kMetricsHeader;
  if (job.resume && fs::exists(outputs.state())) {
    trainer.restore(Checkpoint::load(outputs.state()));
    metrics = metrics_prefix(outputs.metrics(), trainer.iteration());
    say(log, "resumed at iteration " + std::to_string(trainer.iteration()));
  }
  write_text_file(outputs.config(), format_train_config(cfg));

  const std::size_t every = std::max<std::size_t>(1, cfg.max_iters / 20);
  trainer.run(
      [&](const MetricsRow& row) {
        metrics += metrics_line(row);
        if (row.iteration % every == 0 || row.val_loss) {
          std::string msg = "iter " + std::to_string(row.iteration) + " lr " + fmt(row.lr) +
                            " loss " + fmt(row.train_loss);
          if (row.val_loss) msg += " val " + fmt(*row.val_loss);
          say(log, msg);
        }
      },
      [&](const Trainer& t, double) {
        t.state_checkpoint().save(outputs.state());
        write_text_file(outputs.metrics(), metrics);
      });
  write_text_file(outputs.metrics(), metrics);
  adapter_checkpoint(trainer.output_adapter(), lm, vocab, encoder, cfg.mode).save(outputs.adapter());

  outcome.iterations = trainer.iteration();
  outcome.best_val_loss = trainer.best_val_loss();
  outcome.best_iteration = trainer.best_iteration();
  outcome.backbone_hash_after = lm.content_hash();

  ordered_json manifest = ordered_json::array();
  for (const auto& f : outcome.inputs) manifest.push_back({{"path", f.path}, {"role", f.role}});
  write_text_file(outputs.inputs(), manifest.dump(1) + "\n");
  say(log, "wrote " + outputs.adapter().string() + " (best validation " +
               (outcome.best_val_loss ? fmt(*outcome.best_val_loss) : std::string("n/a")) +
               " at iteration " + std::to_string(outcome.best_iteration) + ")");
  return outcome;
}

std::vector<InputFile> read_input_manifest(const fs::path& path) {
  std::vector<InputFile> out;
  for (const auto& e : read_json_file(path)) {
    out.push_back({e.at("path").get<std::string>(), e.at("role").get<std::string>()});
  }
  return out;
}

// ---- eval / infer

LoadedBundle::LoadedBundle(const fs::path& lm_path, const fs::path& adapter_path,
                           const WorldConfig& world)
    : lm_(load_lm(lm_path)), encoder_(encoder_for(world)) {
  adapter_ = std::make_unique<Adapter>(
      load_adapter(Checkpoint::load(adapter_path), *lm_.lm, lm_.vocab, encoder_));
}

fs::path eval_json_file(const fs::path& out_dir, const std::string& suite) {
  return out_dir / ("eval_" + suite + ".json");
}

EvalReport run_eval(const EvalJob& job, const LogFn& log) {
  const DatasetLayout layout{job.data_dir};
  const WorldConfig world = load_world(layout);
  const LoadedBundle bundle(job.lm_path, job.adapter_path, world);
  const auto scenes = head(load_split(layout, job.split), job.max_scenes);
  EvalReport report;
  if (job.suite == "aqa") {
    report = eval_aqa(bundle.view(), scenes, job.decode);
  } else if (job.suite == "aac") {
    report = eval_aac(bundle.view(), scenes, job.decode);
  } else if (job.suite == "distill") {
    report = eval_distill(bundle.view(), scenes,
                          read_targets(targets_file(job.targets_dir, job.split)));
  } else {
    throw std::invalid_argument("unknown suite '" + job.suite + "' (aqa, aac or distill)");
  }
  if (!job.out_dir.empty()) {
    fs::create_directories(job.out_dir);
    write_text_file(eval_json_file(job.out_dir, job.suite), report.to_json().dump(1) + "\n");
    write_text_file(job.out_dir / ("eval_" + job.suite + ".csv"), report.aggregates_csv());
  }
  std::string msg = job.suite + " on " + job.split + ":";
  for (const auto& [k, v] : report.aggregates) msg += " " + k + "=" + fmt(v);
  say(log, msg);
  return report;
}

std::string summarize_reports(const std::vector<fs::path>& report_files) {
  std::ostringstream out;
  out.precision(17);
  out << "run,suite,metric,value\n";
  for (const auto& path : report_files) {
    const EvalReport r = EvalReport::from_json(read_json_file(path));
    const auto recomputed = r.recompute();
    if (recomputed != r.aggregates) {
      throw DatasetError(path.string() + ": aggregates do not match the item records");
    }
    const std::string run = path.parent_path().filename().string();
    for (const auto& [k, v] : r.aggregates) {
      out << run << ',' << r.suite << ',' << k << ',' << v << '\n';
    }
  }
  return out.str();
}

// ---- zero-shot audit

namespace {

struct Needles {
  std::vector<std::pair<std::string, std::vector<std::string>>> phrases;

  Needles() {
    for (const auto& q : question_universe()) phrases.push_back({"question: " + q, normalize_words(q)});
    const PromptSpec& aqa = prompt("aqa_eval");
    phrases.push_back({"instruction: " + *aqa.system, normalize_words(*aqa.system)});
    phrases.push_back({"instruction: Question:", normalize_words("Question :")});
  }
};

bool contains_run(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

void scan_string(const std::string& path, const std::string& text, const Needles& needles,
                 AuditResult& result) {
  ++result.strings_scanned;
  const auto words = normalize_words(text);
  for (const auto& [label, seq] : needles.phrases) {
    if (contains_run(words, seq)) result.findings.push_back({path, label + " in \"" + text + "\""});
  }
  for (const auto& w : words) {
    const bool number = !w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) {
      return std::isdigit(c);
    });
    if (w == "yes" || w == "no" || number) {
      result.findings.push_back({path, "answer token '" + w + "' in \"" + text + "\""});
    }
  }
}

// Fields that hold identifiers and hashes rather than text.
bool identifier_key(const std::string& key) {
  static const std::set<std::string> keys = {"id",   "scene_id", "model_hash", "features_path",
                                             "seed", "template_version", "split"};
  return keys.count(key) > 0;
}

void scan_json(const std::string& path, const json& j, const std::string& key,
               const Needles& needles, AuditResult& result) {
  if (j.is_string()) {
    if (!identifier_key(key)) scan_string(path, j.get<std::string>(), needles, result);
  } else if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      if (k == "qa" && v.is_array() && !v.empty()) {
        result.findings.push_back({path, "QA records present"});
      }
      scan_json(path, v, k, needles, result);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) scan_json(path, v, key, needles, result);
  }
}

void scan_feature_file(const std::string& path, AuditResult& result) {
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  std::uint32_t dims[2] = {0, 0};
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  const auto expected = 16 + 4ull * dims[0] * dims[1];
  if (!in || std::string(magic, 8) != "DCTFEAT1" || fs::file_size(path) != expected) {
    result.findings.push_back({path, "feature file is not a pure numeric blob"});
  }
}

}  // namespace

AuditResult zero_shot_audit(const std::vector<InputFile>& inputs) {
  const Needles needles;
  AuditResult result;
  for (const auto& f : inputs) {
    if (f.role == "backbone") {
      result.exempt.push_back(f.path);
      continue;
    }
    ++result.files_scanned;
    if (f.role == "features") {
      scan_feature_file(f.path, result);
    } else if (f.role == "dataset" || f.role == "targets") {
      std::ifstream in(f.path);
      if (!in) throw DatasetError("audit: cannot open " + f.path);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) scan_json(f.path, json::parse(line), "", needles, result);
      }
    } else if (f.role == "config") {
      scan_json(f.path, read_json_file(f.path), "", needles, result);
    } else if (f.role == "train-config") {
      // key = value lines; numeric values are hyperparameters, the rest is text.
      std::ifstream in(f.path);
      std::string line;
      while (std::getline(in, line)) {
        line = line.substr(0, line.find('#'));
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string value = line.substr(eq + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        value.erase(value.find_last_not_of(" \t\r") + 1);
        char* end = nullptr;
        std::strtod(value.c_str(), &end);
        if (value.empty() || (end != nullptr && *end == '\0')) continue;
        scan_string(f.path, value, needles, result);
      }
    } else {
      throw std::invalid_argument("audit: unknown input role '" + f.role + "'");
    }
  }
  return result;
}

}  // namespace dct
