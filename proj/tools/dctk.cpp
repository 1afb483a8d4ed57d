// SPDX-License-Identifier: Apache-2.0
//
// dctk: command-line front end for the data, training and evaluation stages.
// Exit codes: 0 success, 1 usage error, 2 runtime error.
#include <CLI11.hpp>

#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>
#include <nlohmann/json.hpp>

#include "dct/pipeline.hpp"
#include "dct/prompts.hpp"

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

void echo_config(const std::string& command, const ordered_json& config) {
  std::cerr << "dctk " << command << " config: " << config.dump() << '\n';
}

ordered_json decode_json(const dct::DecodeConfig& d) {
  return {{"beam", d.beam}, {"max_new_tokens", d.max_new_tokens}};
}

std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// ---- gen-data

struct GenDataArgs {
  std::string out;
  std::string world_file;
  dct::DatasetConfig config;
  int caption_variants = 0;
};

void gen_data(const GenDataArgs& a) {
  dct::DatasetConfig cfg = a.config;
  if (!a.world_file.empty()) {
    std::ifstream in(a.world_file);
    if (!in) throw dct::DatasetError("cannot open " + a.world_file);
    cfg.world = dct::world_config_from_json(nlohmann::json::parse(in));
  }
  if (a.caption_variants > 0) cfg.world.caption_variants = a.caption_variants;
  echo_config("gen-data", {{"out", a.out},
                           {"train", cfg.train},
                           {"val", cfg.val},
                           {"test", cfg.test},
                           {"seed", cfg.seed},
                           {"world", dct::to_json(cfg.world)}});
  dct::generate_dataset(cfg, a.out);
  log_line("wrote " + std::to_string(cfg.train + cfg.val + cfg.test) + " scenes to " + a.out);
}

// ---- pretrain-lm

struct PretrainArgs {
  dct::PretrainJob job;
  std::string data, out;
};

void pretrain(PretrainArgs a) {
  a.job.data_dir = a.data;
  a.job.out = a.out;
  const auto& o = a.job.options;
  const auto& m = a.job.mix;
  echo_config("pretrain-lm",
              {{"data", a.data},
               {"out", a.out},
               {"lm", dct::to_json(a.job.lm)},
               {"steps", o.steps},
               {"batch", o.batch},
               {"peak_lr", o.peak_lr},
               {"warmup", o.warmup},
               {"final_lr_fraction", o.final_lr_fraction},
               {"embedding_noise", o.embedding_noise},
               {"clip", o.clip},
               {"seed", o.seed},
               {"heldout", o.heldout},
               {"mix", {{"dialogue", m.dialogue}, {"aqa", m.aqa}, {"aac", m.aac}, {"other", m.other}}}});
  dct::run_pretrain(a.job, log_line);
}

// ---- prepare-targets

struct TargetArgs {
  dct::TargetJob job;
  std::string data, lm, out;
};

void prepare_targets(TargetArgs a) {
  a.job.data_dir = a.data;
  a.job.lm_path = a.lm;
  a.job.out_dir = a.out;
  const auto& c = a.job.config;
  echo_config("prepare-targets", {{"data", a.data},
                                  {"lm", a.lm},
                                  {"out", a.out},
                                  {"splits", a.job.splits},
                                  {"temperature", c.temperature},
                                  {"max_new_tokens", c.max_new_tokens},
                                  {"seed", c.seed},
                                  {"workers", c.workers}});
  dct::run_prepare_targets(a.job, log_line);
}

// ---- train-adapter

struct TrainArgs {
  std::string data, lm, targets, out, config_file, mode;
  std::optional<std::size_t> batch_size, warmup_iters, decay_iters, val_every, max_iters, seed;
  std::optional<double> peak_lr;
  bool resume = false;
  bool audit = false;
};

int train_adapter(const TrainArgs& a) {
  dct::TrainJob job;
  if (!a.config_file.empty()) {
    job.config = dct::load_train_config(a.config_file);
    job.config_file = a.config_file;
  }
  auto& c = job.config;
  if (!a.mode.empty()) c.mode = dct::train_mode_from_string(a.mode);
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.warmup_iters) c.warmup_iters = *a.warmup_iters;
  if (a.decay_iters) c.decay_iters = *a.decay_iters;
  if (a.val_every) c.val_every = *a.val_every;
  if (a.max_iters) c.max_iters = *a.max_iters;
  if (a.seed) c.seed = *a.seed;
  if (a.peak_lr) c.peak_lr = *a.peak_lr;
  job.data_dir = a.data;
  job.lm_path = a.lm;
  job.targets_dir = a.targets;
  job.out_dir = a.out;
  job.resume = a.resume;
  ordered_json cfg = {{"data", a.data}, {"lm", a.lm},     {"targets", a.targets},
                      {"out", a.out},   {"resume", a.resume}, {"config_file", a.config_file}};
  ordered_json train = ordered_json::object();
  std::istringstream lines(dct::format_train_config(c));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) train[line.substr(0, eq)] = line.substr(eq + 3);
  }
  cfg["train"] = train;
  echo_config("train-adapter", cfg);
  const dct::TrainOutcome o = dct::run_train_adapter(job, log_line);
  log_line("backbone hash " + std::string(o.backbone_hash_before == o.backbone_hash_after
                                              ? "unchanged"
                                              : "CHANGED"));
  if (a.audit) {
    const dct::AuditResult r = dct::zero_shot_audit(o.inputs);
    log_line("audit: " + std::to_string(r.files_scanned) + " files, " +
             std::to_string(r.findings.size()) + " findings");
    for (const auto& f : r.findings) log_line("  " + f.path + ": " + f.what);
    if (!r.clean()) return 2;
  }
  return 0;
}

// ---- infer

struct InferArgs {
  std::string ckpt, lm, features, instruction, prompt_name, question;
  bool no_instruction = false;
  dct::DecodeConfig decode;
};

// The backbone a training run used, from the inputs.json beside its adapter.
std::string backbone_of_run(const fs::path& adapter) {
  const fs::path manifest = adapter.parent_path() / "inputs.json";
  if (!fs::exists(manifest)) return {};
  for (const auto& f : dct::read_input_manifest(manifest)) {
    if (f.role == "backbone" && fs::path(f.path).filename() != "vocab.txt") return f.path;
  }
  return {};
}

// A registry system string selects that prompt. Other free text becomes the
// system message with the audio as the user turn.
// "Question:" splits the text: what precedes it is the system message (the
// AQA one when empty) and what follows is the question.
dct::InstructionSpec instruction_of(const InferArgs& a) {
  if (a.no_instruction) return dct::InstructionSpec::no_instruction();
  if (!a.prompt_name.empty()) return dct::InstructionSpec::from_prompt(a.prompt_name, a.question);
  const std::string text = a.instruction;
  const auto at = to_lower(text).find("question:");
  if (at != std::string::npos) {
    std::string system = text.substr(0, at);
    system.erase(system.find_last_not_of(" \t") + 1);
    auto spec = dct::InstructionSpec::from_prompt("aqa_eval", text.substr(at + 9));
    if (!system.empty()) spec.system = system;
    return spec;
  }
  if (text.empty()) return dct::InstructionSpec::no_instruction();
  for (const auto& reg : dct::prompt_registry()) {
    if (reg.system && *reg.system == text) return dct::InstructionSpec::from_prompt(reg.name);
  }
  dct::InstructionSpec spec;
  spec.system = text;
  return spec;
}

void infer(const InferArgs& a) {
  std::string lm = a.lm.empty() ? backbone_of_run(a.ckpt) : a.lm;
  if (lm.empty()) throw std::invalid_argument("no --lm given and none recorded beside " + a.ckpt);
  const dct::InstructionSpec spec = instruction_of(a);
  echo_config("infer", {{"ckpt", a.ckpt},
                        {"lm", lm},
                        {"features", a.features},
                        {"instruction", spec.describe()},
                        {"decode", decode_json(a.decode)}});
  const dct::Checkpoint head = dct::Checkpoint::load(a.ckpt);
  dct::WorldConfig world;
  world.feature_dim = head.header.at("encoder_input_dim").get<std::size_t>();
  const dct::LoadedBundle bundle(lm, a.ckpt, world);
  const dct::Array2 x = dct::read_features(a.features);
  std::cout << dct::infer(bundle.view(), x, spec, a.decode) << std::endl;
}

// ---- eval

struct EvalArgs {
  dct::EvalJob job;
  std::string data, lm, ckpt, targets, out;
};

void eval(EvalArgs a) {
  a.job.data_dir = a.data;
  a.job.adapter_path = a.ckpt;
  a.job.lm_path = a.lm.empty() ? backbone_of_run(a.ckpt) : a.lm;
  if (a.job.lm_path.empty()) {
    throw std::invalid_argument("no --lm given and none recorded beside " + a.ckpt);
  }
  a.job.targets_dir = a.targets;
  a.job.out_dir = a.out;
  echo_config("eval", {{"data", a.data},
                       {"lm", a.job.lm_path.string()},
                       {"ckpt", a.ckpt},
                       {"suite", a.job.suite},
                       {"split", a.job.split},
                       {"targets", a.targets},
                       {"max_scenes", a.job.max_scenes},
                       {"out", a.out},
                       {"decode", decode_json(a.job.decode)}});
  dct::run_eval(a.job, log_line);
  if (!a.out.empty()) {
    log_line("wrote " + dct::eval_json_file(a.out, a.job.suite).string());
  }
}

// ---- report

struct ReportArgs {
  std::vector<std::string> reports;
  std::string out, audit;
};

int report(const ReportArgs& a) {
  echo_config("report", {{"reports", a.reports}, {"out", a.out}, {"audit", a.audit}});
  int code = 0;
  if (!a.reports.empty()) {
    std::vector<fs::path> files(a.reports.begin(), a.reports.end());
    const std::string csv = dct::summarize_reports(files);
    if (a.out.empty()) {
      std::cout << csv;
    } else {
      std::ofstream(a.out) << csv;
      log_line("wrote " + a.out);
    }
  }
  if (!a.audit.empty()) {
    const dct::AuditResult r = dct::zero_shot_audit(dct::read_input_manifest(a.audit));
    std::cout << "audit " << a.audit << ": " << r.files_scanned << " files scanned, "
              << r.strings_scanned << " strings, " << r.exempt.size() << " exempt, "
              << r.findings.size() << " findings\n";
    for (const auto& f : r.findings) std::cout << "  " << f.path << ": " << f.what << '\n';
    if (!r.clean()) code = 2;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dctk: adapters that connect an audio encoder to a frozen language model"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic scene dataset");
  g->add_option("--out", gen.out, "Dataset directory")->required();
  g->add_option("--world", gen.world_file, "World config JSON (default: built-in world)");
  g->add_option("--train", gen.config.train, "Training scenes")->capture_default_str();
  g->add_option("--val", gen.config.val, "Validation scenes")->capture_default_str();
  g->add_option("--test", gen.config.test, "Test scenes")->capture_default_str();
  g->add_option("--seed", gen.config.seed, "Dataset seed")->capture_default_str();
  g->add_option("--caption-variants", gen.caption_variants, "Captions per scene (overrides the world)");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain-lm", "Pretrain and freeze the text backbone");
  p->add_option("--data", pre.data, "Dataset directory (vocabulary and world)")->required();
  p->add_option("--out", pre.out, "Backbone checkpoint to write")->required();
  p->add_option("--layers", pre.job.lm.layers)->capture_default_str();
  p->add_option("--heads", pre.job.lm.heads)->capture_default_str();
  p->add_option("--d-model", pre.job.lm.d_model)->capture_default_str();
  p->add_option("--d-ff", pre.job.lm.d_ff)->capture_default_str();
  p->add_option("--max-context", pre.job.lm.max_context)->capture_default_str();
  p->add_option("--steps", pre.job.options.steps)->capture_default_str();
  p->add_option("--batch", pre.job.options.batch)->capture_default_str();
  p->add_option("--lr", pre.job.options.peak_lr, "Peak learning rate")->capture_default_str();
  p->add_option("--warmup", pre.job.options.warmup)->capture_default_str();
  p->add_option("--embedding-noise", pre.job.options.embedding_noise)->capture_default_str();
  p->add_option("--heldout", pre.job.options.heldout, "Held-out sequences")->capture_default_str();
  p->add_option("--seed", pre.job.options.seed)->capture_default_str();

  TargetArgs tgt;
  auto* t = app.add_subcommand("prepare-targets", "Sample backbone responses to the captions");
  t->add_option("--data", tgt.data, "Dataset directory")->required();
  t->add_option("--lm", tgt.lm, "Backbone checkpoint")->required();
  t->add_option("--out", tgt.out, "Target directory")->required();
  t->add_option("--splits", tgt.job.splits, "Splits to prepare")->capture_default_str();
  t->add_option("--temperature", tgt.job.config.temperature)->capture_default_str();
  t->add_option("--max-new-tokens", tgt.job.config.max_new_tokens)->capture_default_str();
  t->add_option("--seed", tgt.job.config.seed)->capture_default_str();
  t->add_option("--workers", tgt.job.config.workers)->capture_default_str();

  TrainArgs tr;
  auto* a = app.add_subcommand("train-adapter", "Train the adapter against the frozen backbone");
  a->add_option("--data", tr.data, "Dataset directory")->required();
  a->add_option("--lm", tr.lm, "Backbone checkpoint")->required();
  a->add_option("--targets", tr.targets, "Target directory (dct mode)");
  a->add_option("--out", tr.out, "Run directory")->required();
  a->add_option("--config", tr.config_file, "key = value training config");
  a->add_option("--mode", tr.mode, "dct or caption")->check(CLI::IsMember({"dct", "caption"}));
  a->add_option("--batch-size", tr.batch_size);
  a->add_option("--peak-lr", tr.peak_lr);
  a->add_option("--warmup", tr.warmup_iters);
  a->add_option("--decay", tr.decay_iters);
  a->add_option("--val-every", tr.val_every);
  a->add_option("--max-iters", tr.max_iters);
  a->add_option("--seed", tr.seed);
  a->add_flag("--resume", tr.resume, "Continue from the run directory's state.ckpt");
  a->add_flag("--audit", tr.audit, "Scan every training input for QA text afterwards");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Answer one instruction about one feature file");
  i->add_option("--ckpt", inf.ckpt, "Adapter checkpoint")->required()->check(CLI::ExistingFile);
  i->add_option("--lm", inf.lm, "Backbone checkpoint (default: the one the run trained against)");
  i->add_option("--features", inf.features, "Feature file")->required()->check(CLI::ExistingFile);
  auto* inst = i->add_option("--instruction", inf.instruction,
                             "Instruction text; 'Question: ...' asks an AQA question");
  auto* pr = i->add_option("--prompt", inf.prompt_name, "Registry prompt name instead of text")
                 ->check(CLI::IsMember({"caption_train", "aac_eval", "aqa_eval"}));
  i->add_option("--question", inf.question, "{INSTRUCTION} text for --prompt")->needs(pr);
  i->add_flag("--no-instruction", inf.no_instruction, "Use the no-instruction template")
      ->excludes(inst)
      ->excludes(pr);
  inst->excludes(pr);
  i->add_option("--beam", inf.decode.beam)->capture_default_str()->check(CLI::PositiveNumber);
  i->add_option("--max-new-tokens", inf.decode.max_new_tokens)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Run an evaluation suite and write its report");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--ckpt", ev.ckpt, "Adapter checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--lm", ev.lm, "Backbone checkpoint (default: the one the run trained against)");
  e->add_option("--suite", ev.job.suite)
      ->capture_default_str()
      ->check(CLI::IsMember({"aqa", "aac", "distill"}));
  e->add_option("--split", ev.job.split)->capture_default_str();
  e->add_option("--targets", ev.targets, "Target directory (distill suite)");
  e->add_option("--out", ev.out, "Directory for eval_<suite>.json and .csv");
  e->add_option("--max-scenes", ev.job.max_scenes, "0: whole split")->capture_default_str();
  e->add_option("--beam", ev.job.decode.beam)->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--max-new-tokens", ev.job.decode.max_new_tokens)->capture_default_str();

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Summarize reports or audit a run's training inputs");
  r->add_option("reports", rep.reports, "eval_<suite>.json files")->check(CLI::ExistingFile);
  r->add_option("--out", rep.out, "CSV file (default: stdout)");
  r->add_option("--audit", rep.audit, "inputs.json of a training run")->check(CLI::ExistingFile);

  if (argc < 2) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;
  }

  try {
    if (g->parsed()) gen_data(gen);
    if (p->parsed()) pretrain(pre);
    if (t->parsed()) prepare_targets(tgt);
    if (a->parsed()) return train_adapter(tr);
    if (i->parsed()) infer(inf);
    if (e->parsed()) eval(ev);
    if (r->parsed()) {
      if (rep.reports.empty() && rep.audit.empty()) {
        std::cerr << r->help();
        return 1;
      }
      return report(rep);
    }
  } catch (const std::exception& err) {
    std::cerr << "dctk: error: " << err.what() << '\n';
    return 2;
  }
  return 0;
}
