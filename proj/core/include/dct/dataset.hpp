// SPDX-License-Identifier: Apache-2.0
//
// On-disk form of the synthetic world: one JSON line per scene plus one
// binary feature file per scene.
//
// Feature file: "DCTFEAT1" | u32 T | u32 D_in | T*D_in little-endian float32.
#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "dct/world.hpp"

namespace dct {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SceneRecord {
  Scene scene;
  std::vector<CaptionVariant> captions;  // captions[0] is canonical
  std::vector<QAPair> qa;                // empty outside the test split
  std::string features_path;             // relative to the dataset directory
  std::string split;

  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

nlohmann::ordered_json to_json(const SceneRecord& record);
SceneRecord scene_record_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<SceneRecord>& records);
std::vector<SceneRecord> read_jsonl(const std::filesystem::path& path);

void write_features(const std::filesystem::path& path, const Array2& features);
Array2 read_features(const std::filesystem::path& path);

struct DatasetConfig {
  WorldConfig world;
  std::size_t train = 2000;
  std::size_t val = 100;
  std::size_t test = 200;
  std::uint64_t seed = 0;
};

/// Layout of a generated dataset directory.
struct DatasetLayout {
  std::filesystem::path root;
  std::filesystem::path split_file(const std::string& split) const {
    return root / (split + ".jsonl");
  }
  std::filesystem::path features_dir() const { return root / "features"; }
  std::filesystem::path vocab_file() const { return root / "vocab.txt"; }
  std::filesystem::path config_file() const { return root / "world.json"; }
};

/// Writes train/val/test JSONL, feature files, the vocabulary and the world
/// config. Scene ids are "sc000001"... across splits, so splits never share
/// an id. Each scene draws from its own derived seed, so output does not
/// depend on generation order.
void generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

/// Every record of a split with its features loaded.
struct LoadedScene {
  SceneRecord record;
  Array2 features;
};
std::vector<LoadedScene> load_split(const DatasetLayout& layout, const std::string& split);

nlohmann::ordered_json to_json(const WorldConfig& world);
WorldConfig world_config_from_json(const nlohmann::json& j);

}  // namespace dct
