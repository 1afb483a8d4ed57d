// SPDX-License-Identifier: Apache-2.0
#include "dct/dataset.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "dct/lm_corpus.hpp"
#include "dct/vocab.hpp"

namespace dct {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "feature files assume little-endian");

namespace {

constexpr char kFeatureMagic[8] = {'D', 'C', 'T', 'F', 'E', 'A', 'T', '1'};

std::string scene_id(std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sc%06zu", n);
  return buf;
}

}  // namespace

ordered_json to_json(const SceneRecord& r) {
  ordered_json j;
  j["id"] = r.scene.id;
  j["split"] = r.split;
  j["frames"] = r.scene.frames;
  j["events"] = ordered_json::array();
  for (const auto& e : r.scene.events) {
    j["events"].push_back(
        {{"type", event_catalog()[static_cast<std::size_t>(e.type)].key},
         {"start", e.start},
         {"duration", e.duration}});
  }
  j["captions"] = ordered_json::array();
  for (const auto& c : r.captions) j["captions"].push_back({{"text", c.text}, {"style", to_string(c.style)}});
  j["qa"] = ordered_json::array();
  for (const auto& q : r.qa) {
    j["qa"].push_back({{"q", q.question}, {"a", q.answer}, {"kind", to_string(q.kind)}});
  }
  j["features_path"] = r.features_path;
  return j;
}

SceneRecord scene_record_from_json(const json& j) {
  try {
    SceneRecord r;
    r.scene.id = j.at("id").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.scene.frames = j.at("frames").get<int>();
    for (const auto& e : j.at("events")) {
      r.scene.events.push_back({event_index(e.at("type").get<std::string>()), e.at("start").get<int>(),
                                e.at("duration").get<int>()});
    }
    for (const auto& c : j.at("captions")) {
      r.captions.push_back({c.at("text").get<std::string>(),
                            caption_style_from_string(c.at("style").get<std::string>())});
    }
    for (const auto& q : j.at("qa")) {
      r.qa.push_back({q.at("q").get<std::string>(), q.at("a").get<std::string>(),
                      answer_kind_from_string(q.at("kind").get<std::string>())});
    }
    r.features_path = j.at("features_path").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed scene record: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw DatasetError(std::string("malformed scene record: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DatasetError(std::string("malformed scene record: ") + e.what());
  }
}

void write_jsonl(const fs::path& path, const std::vector<SceneRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw DatasetError("failed writing " + path.string());
}

std::vector<SceneRecord> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    out.push_back(scene_record_from_json(j));
  }
  return out;
}

void write_features(const fs::path& path, const Array2& features) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  const auto t = static_cast<std::uint32_t>(features.rows());
  const auto d = static_cast<std::uint32_t>(features.cols());
  out.write(kFeatureMagic, sizeof kFeatureMagic);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  std::vector<float> buf(features.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(features.data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw DatasetError("failed writing " + path.string());
}

Array2 read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open feature file " + path.string());
  char magic[8];
  std::uint32_t t = 0, d = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kFeatureMagic, 8) != 0) {
    throw DatasetError(path.string() + " is not a feature file");
  }
  if (!in.read(reinterpret_cast<char*>(&t), 4) || !in.read(reinterpret_cast<char*>(&d), 4)) {
    throw DatasetError("truncated feature file " + path.string());
  }
  std::vector<float> buf(static_cast<std::size_t>(t) * d);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw DatasetError("truncated feature file " + path.string());
  }
  Array2 out(t, d);
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i];
  return out;
}

ordered_json to_json(const WorldConfig& w) {
  ordered_json j;
  j["min_events"] = w.min_events;
  j["max_events"] = w.max_events;
  j["min_frames"] = w.min_frames;
  j["max_frames"] = w.max_frames;
  j["min_duration"] = w.min_duration;
  j["max_duration"] = w.max_duration;
  j["event_weights"] = w.event_weights;
  j["noise"] = w.noise;
  j["caption_variants"] = w.caption_variants;
  j["feature_dim"] = w.feature_dim;
  return j;
}

WorldConfig world_config_from_json(const json& j) {
  WorldConfig w;
  try {
    w.min_events = j.at("min_events").get<int>();
    w.max_events = j.at("max_events").get<int>();
    w.min_frames = j.at("min_frames").get<int>();
    w.max_frames = j.at("max_frames").get<int>();
    w.min_duration = j.at("min_duration").get<int>();
    w.max_duration = j.at("max_duration").get<int>();
    w.event_weights = j.at("event_weights").get<std::vector<double>>();
    w.noise = j.at("noise").get<double>();
    w.caption_variants = j.at("caption_variants").get<int>();
    w.feature_dim = j.at("feature_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed world config: ") + e.what());
  }
  w.validate();
  return w;
}

void generate_dataset(const DatasetConfig& config, const fs::path& out_dir) {
  config.world.validate();
  const DatasetLayout layout{out_dir};
  fs::create_directories(layout.features_dir());
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", config.train}, {"val", config.val}, {"test", config.test}};
  std::size_t next_id = 1;
  for (const auto& [split, count] : splits) {
    std::vector<SceneRecord> records;
    records.reserve(count);
    for (std::size_t i = 0; i < count; ++i, ++next_id) {
      Rng rng(derive_seed(config.seed, "scene", next_id));
      SceneRecord r;
      r.split = split;
      r.scene = gen_scene(rng, config.world, scene_id(next_id));
      r.captions = gen_captions(r.scene, rng, config.world.caption_variants);
      if (r.split == "test") {
        r.qa = gen_qa(r.scene, rng);
      } else {
        (void)gen_qa(r.scene, rng);  // keeps feature draws split-independent
      }
      Rng feature_rng(derive_seed(config.seed, "features", next_id));
      const Array2 features = render_features(r.scene, feature_rng, config.world);
      r.features_path = "features/" + r.scene.id + ".f32";
      write_features(layout.root / r.features_path, features);
      records.push_back(std::move(r));
    }
    write_jsonl(layout.split_file(split), records);
  }
  Vocabulary::build(vocabulary_text()).save(layout.vocab_file());
  std::ofstream(layout.config_file()) << to_json(config.world).dump(2) << '\n';
}

std::vector<LoadedScene> load_split(const DatasetLayout& layout, const std::string& split) {
  std::vector<LoadedScene> out;
  for (auto& r : read_jsonl(layout.split_file(split))) {
    Array2 x = read_features(layout.root / r.features_path);
    out.push_back({std::move(r), std::move(x)});
  }
  return out;
}

}  // namespace dct
