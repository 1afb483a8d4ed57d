// SPDX-License-Identifier: Apache-2.0
//
// File-level stages shared by the command-line tool and the acceptance gate:
// each stage reads the artifacts of the previous ones from disk and writes
// its own.
//
//   gen-data         data/{train,val,test}.jsonl, data/features/, vocab.txt, world.json
//   pretrain-lm      backbone checkpoint
//   prepare-targets  targets/targets_{train,val}.jsonl
//   train-adapter    adapter.ckpt, state.ckpt, metrics.csv, train.cfg, inputs.json
//   eval             eval_<suite>.json, eval_<suite>.csv
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dct/dataset.hpp"
#include "dct/eval.hpp"
#include "dct/lm_io.hpp"
#include "dct/pretrain.hpp"
#include "dct/targets.hpp"
#include "dct/trainer.hpp"

namespace dct {

namespace fs = std::filesystem;

using LogFn = std::function<void(const std::string&)>;

/// Encoder output width used throughout.
inline constexpr std::size_t kEncoderDim = 32;

/// The frozen encoder that matches a dataset's feature width.
FrozenEncoder encoder_for(const WorldConfig& world);

// ---- pretrain-lm

struct PretrainJob {
  fs::path data_dir;
  LMConfig lm;  // vocab_size is taken from the dataset vocabulary
  PretrainConfig options;
  CorpusMix mix;
  fs::path out;
};

PretrainReport run_pretrain(const PretrainJob& job, const LogFn& log = {});

// ---- prepare-targets

fs::path targets_file(const fs::path& targets_dir, const std::string& split);

struct TargetJob {
  fs::path data_dir;
  fs::path lm_path;
  TargetPrepConfig config;
  fs::path out_dir;
  std::vector<std::string> splits = {"train", "val"};
};

std::map<std::string, TargetReport> run_prepare_targets(const TargetJob& job,
                                                        const LogFn& log = {});

// ---- train-adapter

struct TrainJob {
  fs::path data_dir;
  fs::path lm_path;
  fs::path targets_dir;  // dct mode only
  TrainConfig config;
  fs::path config_file;  // where `config` came from, if anywhere; recorded for the audit
  fs::path out_dir;
  bool resume = false;  // continue from out_dir/state.ckpt when present
};

/// A file the training stage opened, with what it was used for:
/// dataset, features, targets, config (JSON), train-config (key = value)
/// or backbone.
struct InputFile {
  std::string path;
  std::string role;
};

struct TrainOutcome {
  std::size_t iterations = 0;
  std::optional<double> best_val_loss;
  std::size_t best_iteration = 0;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
  std::uint64_t backbone_frozen_hash = 0;
  std::vector<InputFile> inputs;
};

struct TrainOutputs {
  fs::path root;
  fs::path adapter() const { return root / "adapter.ckpt"; }
  fs::path state() const { return root / "state.ckpt"; }
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path config() const { return root / "train.cfg"; }
  fs::path inputs() const { return root / "inputs.json"; }
};

TrainOutcome run_train_adapter(const TrainJob& job, const LogFn& log = {});

std::vector<InputFile> read_input_manifest(const fs::path& path);

// ---- eval / infer

/// Backbone, encoder and adapter loaded from disk, with cross-checked hashes.
class LoadedBundle {
 public:
  LoadedBundle(const fs::path& lm_path, const fs::path& adapter_path, const WorldConfig& world);
  ModelBundle view() const { return {*lm_.lm, lm_.vocab, encoder_, *adapter_}; }
  const LanguageModel& lm() const { return *lm_.lm; }
  const Vocabulary& vocab() const { return lm_.vocab; }

 private:
  LoadedLM lm_;
  FrozenEncoder encoder_;
  std::unique_ptr<Adapter> adapter_;
};

struct EvalJob {
  fs::path data_dir;
  fs::path lm_path;
  fs::path adapter_path;
  std::string suite = "aqa";  // aqa | aac | distill
  std::string split = "test";
  fs::path targets_dir;  // distill only
  DecodeConfig decode;
  std::size_t max_scenes = 0;  // 0: the whole split
  fs::path out_dir;
};

fs::path eval_json_file(const fs::path& out_dir, const std::string& suite);

EvalReport run_eval(const EvalJob& job, const LogFn& log = {});

/// suite,metric,value rows of several reports, labelled by file stem.
std::string summarize_reports(const std::vector<fs::path>& report_files);

// ---- zero-shot audit

struct AuditFinding {
  std::string path;
  std::string what;  // the matched question, instruction fragment or answer token
};

struct AuditResult {
  std::size_t files_scanned = 0;
  std::size_t strings_scanned = 0;
  std::vector<std::string> exempt;  // backbone files, not scanned
  std::vector<AuditFinding> findings;
  bool clean() const { return findings.empty(); }
};

/// Scans every non-backbone input of a training run for AQA question texts,
/// AQA instruction fragments and QA answer tokens (yes, no, bare numbers).
/// Text files are scanned through their string values; feature files must be
/// pure numeric blobs.
AuditResult zero_shot_audit(const std::vector<InputFile>& inputs);

}  // namespace dct
