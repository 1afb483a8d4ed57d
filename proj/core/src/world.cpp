// SPDX-License-Identifier: Apache-2.0
#include "dct/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dct/vocab.hpp"

namespace dct {

const std::vector<EventType>& event_catalog() {
  static const std::vector<EventType> catalog = {
      {"dog_bark", "dog barking", "a dog barking", "a hound yelping", "a dog is barking",
       "barking sounds are heard", "is a dog barking ?"},
      {"birds_chirp", "birds chirping", "birds chirping", "birds singing", "birds are chirping",
       "bird songs are heard", "are birds chirping ?"},
      {"phone_ring", "phone ringing", "a telephone bell ringing", "phone sounds",
       "telephone bell is ringing", "phone sounds are heard", "is a phone ringing ?"},
      {"rain", "rain", "rain falling", "raindrops pattering", "rain is falling",
       "raindrops are heard", "is there rain ?"},
      {"waves", "waves", "waves crashing", "water splashing", "waves are crashing",
       "water splashes are heard", "are there waves ?"},
      {"car_horn", "car horn", "a car horn honking", "a vehicle beeping", "a car horn is honking",
       "beeping from a vehicle is heard", "is there a car horn ?"},
      {"siren", "siren", "a siren wailing", "an emergency alarm", "a siren is wailing",
       "an emergency alarm is heard", "is there a siren ?"},
      {"engine", "engine", "an engine idling", "a motor humming", "an engine is idling",
       "motor hum is heard", "is there an engine ?"},
      {"wind", "wind", "wind blowing", "a gusty breeze", "wind is blowing", "gusts are heard",
       "is there wind ?"},
      {"thunder", "thunder", "thunder rumbling", "a stormy roar", "thunder is rumbling",
       "a stormy roar is heard", "is there thunder ?"},
      {"footsteps", "footsteps", "footsteps walking", "people treading", "someone is walking",
       "treading sounds are heard", "are there footsteps ?"},
      {"door_knock", "door knocking", "a door knocking", "rapping on wood",
       "someone is knocking on a door", "rapping sounds are heard", "is someone knocking ?"},
      {"baby_cry", "baby crying", "a baby crying", "an infant wailing", "a baby is crying",
       "infant cries are heard", "is a baby crying ?"},
      {"speech", "man speaking", "a man speaking", "a male voice talking", "a man is speaking",
       "a male voice is heard", "is a man speaking ?"},
      {"music", "music", "music playing", "a melody", "music is playing", "a melody is heard",
       "is there music ?"},
      {"clock_tick", "clock ticking", "a clock ticking", "a timepiece tapping",
       "a clock is ticking", "ticking is heard", "is a clock ticking ?"},
      {"applause", "applause", "people clapping", "a crowd applauding", "people are clapping",
       "applause is heard", "is there applause ?"},
      {"cat_meow", "cat meowing", "a cat meowing", "a kitten mewing", "a cat is meowing",
       "mewing is heard", "is a cat meowing ?"},
      {"glass_break", "glass breaking", "glass breaking", "a shattering window",
       "glass is breaking", "shattering is heard", "is glass breaking ?"},
      {"water_tap", "water running", "water running from a tap", "a faucet flowing",
       "water is running", "a faucet flow is heard", "is water running ?"},
  };
  return catalog;
}

int event_index(std::string_view key) {
  const auto& cat = event_catalog();
  for (std::size_t i = 0; i < cat.size(); ++i) {
    if (cat[i].key == key) return static_cast<int>(i);
  }
  throw std::out_of_range("unknown event type '" + std::string(key) + "'");
}

std::vector<int> Scene::event_types() const {
  std::vector<int> out;
  for (const auto& e : events) out.push_back(e.type);
  return out;
}

void WorldConfig::validate() const {
  const int n_types = static_cast<int>(event_catalog().size());
  if (min_events < 1 || max_events < min_events || max_events > n_types) {
    throw std::invalid_argument("WorldConfig: event count range invalid");
  }
  if (min_frames < 1 || max_frames < min_frames) {
    throw std::invalid_argument("WorldConfig: frame range invalid");
  }
  if (min_duration < 1 || max_duration < min_duration) {
    throw std::invalid_argument("WorldConfig: duration range invalid");
  }
  if (min_duration * max_events > min_frames) {
    throw std::invalid_argument("WorldConfig: " + std::to_string(max_events) + " events of " +
                                std::to_string(min_duration) + " frames do not fit in " +
                                std::to_string(min_frames) + " frames");
  }
  if (!event_weights.empty()) {
    if (event_weights.size() != event_catalog().size()) {
      throw std::invalid_argument("WorldConfig: need one weight per event type");
    }
    int positive = 0;
    for (double w : event_weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("WorldConfig: negative event weight");
      positive += w > 0.0;
    }
    if (positive < max_events) {
      throw std::invalid_argument("WorldConfig: fewer weighted event types than max_events");
    }
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("WorldConfig: noise must be >= 0");
  if (caption_variants < 1) throw std::invalid_argument("WorldConfig: caption_variants >= 1");
  if (feature_dim < 3) throw std::invalid_argument("WorldConfig: feature_dim >= 3");
}

Scene gen_scene(Rng& rng, const WorldConfig& config, std::string id) {
  config.validate();
  const int n_types = static_cast<int>(event_catalog().size());
  std::vector<double> weights = config.event_weights;
  if (weights.empty()) weights.assign(static_cast<std::size_t>(n_types), 1.0);

  Scene scene;
  scene.id = std::move(id);
  const int n = rng.between(config.min_events, config.max_events);
  scene.frames = rng.between(config.min_frames, config.max_frames);

  std::vector<int> types;
  while (static_cast<int>(types.size()) < n) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> probs(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) probs[i] = weights[i] / total;
    const int t = sample_categorical(probs, rng);
    types.push_back(t);
    weights[static_cast<std::size_t>(t)] = 0.0;
  }

  const int slot = scene.frames / n;
  const int dmax = std::min(config.max_duration, slot);
  const int dmin = std::min(config.min_duration, dmax);
  for (int i = 0; i < n; ++i) {
    const int d = rng.between(dmin, dmax);
    const int start = i * slot + rng.between(0, slot - d);
    scene.events.push_back({types[static_cast<std::size_t>(i)], start, d});
  }
  return scene;
}

std::string to_string(CaptionStyle style) {
  switch (style) {
    case CaptionStyle::kCanonical:
      return "canonical";
    case CaptionStyle::kSynonym:
      return "synonym";
    case CaptionStyle::kOrderFlipped:
      return "order-flipped";
  }
  return "canonical";
}

CaptionStyle caption_style_from_string(std::string_view s) {
  if (s == "canonical") return CaptionStyle::kCanonical;
  if (s == "synonym") return CaptionStyle::kSynonym;
  if (s == "order-flipped") return CaptionStyle::kOrderFlipped;
  throw std::invalid_argument("unknown caption style '" + std::string(s) + "'");
}

namespace {

std::string join_then(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += " and then ";
    out += parts[i];
  }
  return out;
}

std::vector<std::string> phrases(const Scene& scene, bool synonym) {
  std::vector<std::string> out;
  for (const auto& e : scene.events) {
    const auto& t = event_catalog()[static_cast<std::size_t>(e.type)];
    out.push_back(synonym ? t.phrase_synonym : t.phrase);
  }
  return out;
}

// "C after A and then B": the last event after everything before it.
std::string flipped(const std::vector<std::string>& p) {
  const std::vector<std::string> head(p.begin(), p.end() - 1);
  return p.back() + " after " + join_then(head);
}

}  // namespace

std::string canonical_caption(const Scene& scene) {
  if (scene.events.empty()) throw std::invalid_argument("canonical_caption: scene has no events");
  if (scene.events.size() == 1) {
    return event_catalog()[static_cast<std::size_t>(scene.events[0].type)].clause;
  }
  return join_then(phrases(scene, false));
}

std::vector<CaptionVariant> gen_captions(const Scene& scene, Rng& rng, int k) {
  if (k < 1) throw std::invalid_argument("gen_captions: k must be >= 1");
  std::vector<CaptionVariant> fixed = {{canonical_caption(scene), CaptionStyle::kCanonical}};
  std::vector<CaptionVariant> optional;
  if (scene.events.size() == 1) {
    const auto& t = event_catalog()[static_cast<std::size_t>(scene.events[0].type)];
    optional.push_back({t.clause_synonym, CaptionStyle::kSynonym});
  } else {
    const auto canon = phrases(scene, false);
    const auto syn = phrases(scene, true);
    fixed.push_back({flipped(canon), CaptionStyle::kOrderFlipped});
    optional.push_back({join_then(syn), CaptionStyle::kSynonym});
    optional.push_back({flipped(syn), CaptionStyle::kOrderFlipped});
  }
  std::vector<CaptionVariant> out;
  for (auto& c : fixed) {
    if (static_cast<int>(out.size()) < k) out.push_back(std::move(c));
  }
  while (static_cast<int>(out.size()) < k && !optional.empty()) {
    const auto pick = static_cast<std::ptrdiff_t>(rng.below(optional.size()));
    out.push_back(std::move(optional[static_cast<std::size_t>(pick)]));
    optional.erase(optional.begin() + pick);
  }
  return out;
}

std::string to_string(AnswerKind kind) {
  switch (kind) {
    case AnswerKind::kYesNo:
      return "yesno";
    case AnswerKind::kCount:
      return "count";
    case AnswerKind::kOrder:
      return "order";
  }
  return "yesno";
}

AnswerKind answer_kind_from_string(std::string_view s) {
  if (s == "yesno") return AnswerKind::kYesNo;
  if (s == "count") return AnswerKind::kCount;
  if (s == "order") return AnswerKind::kOrder;
  throw std::invalid_argument("unknown answer kind '" + std::string(s) + "'");
}

std::vector<QAPair> gen_qa(const Scene& scene, Rng& rng) {
  const auto& cat = event_catalog();
  const auto present = scene.event_types();
  if (present.empty()) throw std::invalid_argument("gen_qa: scene has no events");
  std::vector<int> absent;
  for (int t = 0; t < static_cast<int>(cat.size()); ++t) {
    if (std::find(present.begin(), present.end(), t) == present.end()) absent.push_back(t);
  }
  std::vector<QAPair> out;
  const int yes = present[rng.below(present.size())];
  out.push_back({cat[static_cast<std::size_t>(yes)].question, "yes", AnswerKind::kYesNo});
  const int no = absent[rng.below(absent.size())];
  out.push_back({cat[static_cast<std::size_t>(no)].question, "no", AnswerKind::kYesNo});
  out.push_back({"how many sounds are there ?", std::to_string(present.size()), AnswerKind::kCount});
  if (present.size() >= 2) {
    if (rng.below(2) == 0) {
      out.push_back({"what comes first ?", cat[static_cast<std::size_t>(present.front())].name,
                     AnswerKind::kOrder});
    } else {
      out.push_back({"what comes last ?", cat[static_cast<std::size_t>(present.back())].name,
                     AnswerKind::kOrder});
    }
  }
  return out;
}

std::vector<std::string> question_universe() {
  std::vector<std::string> out;
  for (const auto& t : event_catalog()) out.push_back(t.question);
  out.push_back("how many sounds are there ?");
  out.push_back("what comes first ?");
  out.push_back("what comes last ?");
  return out;
}

std::vector<double> event_signature(int type, std::size_t feature_dim) {
  const auto n_types = event_catalog().size();
  if (type < 0 || static_cast<std::size_t>(type) >= n_types) {
    throw std::out_of_range("event_signature: bad type");
  }
  // All 3-band combinations in a fixed shuffled order; type i takes the i-th.
  std::vector<std::array<std::size_t, 3>> combos;
  for (std::size_t a = 0; a < feature_dim; ++a)
    for (std::size_t b = a + 1; b < feature_dim; ++b)
      for (std::size_t c = b + 1; c < feature_dim; ++c) combos.push_back({a, b, c});
  Rng rng(0x51C4A7u);
  for (std::size_t i = combos.size(); i > 1; --i) std::swap(combos[i - 1], combos[rng.below(i)]);
  std::vector<double> sig(feature_dim, 0.0);
  for (std::size_t band : combos[static_cast<std::size_t>(type)]) sig[band] = 1.0;
  return sig;
}

Array2 render_features(const Scene& scene, Rng& rng, const WorldConfig& config) {
  if (scene.frames <= 0) throw std::invalid_argument("render_features: scene has no frames");
  const std::size_t d = config.feature_dim;
  Array2 x(static_cast<std::size_t>(scene.frames), d);
  for (const auto& e : scene.events) {
    if (e.start < 0 || e.duration <= 0 || e.start + e.duration > scene.frames) {
      throw std::invalid_argument("render_features: event outside the clip");
    }
    const auto sig = event_signature(e.type, d);
    for (int f = e.start; f < e.start + e.duration; ++f) {
      auto row = x.row(static_cast<std::size_t>(f));
      for (std::size_t c = 0; c < d; ++c) row[c] += sig[c];
    }
  }
  if (config.noise > 0.0) {
    for (double& v : x.data()) v += config.noise * rng.normal();
  }
  return x;
}

FrozenEncoder::FrozenEncoder(std::size_t d_in, std::size_t d_out, std::uint64_t seed)
    : weight_(d_in, d_out), bias_(1, d_out) {
  if (d_in == 0 || d_out == 0) throw std::invalid_argument("FrozenEncoder: zero width");
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (double& v : weight_.data()) v = scale * rng.normal();
  for (double& v : bias_.data()) v = 0.1 * rng.normal();
}

Array2 FrozenEncoder::forward(const Array2& features) const {
  if (features.rows() == 0) throw std::invalid_argument("encoder: empty input");
  if (features.cols() != input_dim()) {
    throw ShapeError("encoder: feature width " + std::to_string(features.cols()) + " != " +
                     std::to_string(input_dim()));
  }
  const std::size_t t_out = (features.rows() + 1) / 2;
  Array2 pooled(t_out, input_dim());
  for (std::size_t i = 0; i < t_out; ++i) {
    const auto a = features.row(2 * i);
    auto out = pooled.row(i);
    const bool has_pair = 2 * i + 1 < features.rows();
    for (std::size_t c = 0; c < input_dim(); ++c) {
      out[c] = 0.5 * (a[c] + (has_pair ? features(2 * i + 1, c) : 0.0));
    }
  }
  Array2 out(t_out, output_dim());
  out.map().noalias() = pooled.map() * weight_.map();
  out.map().rowwise() += bias_.map().row(0);
  return out;
}

std::uint64_t FrozenEncoder::hash() const {
  std::uint64_t h = fnv1a(std::string_view{});
  for (const Array2* a : {&weight_, &bias_}) {
    h = fnv1a(std::span<const std::uint8_t>(
                  reinterpret_cast<const std::uint8_t*>(a->data().data()), a->data().size_bytes()),
              h);
  }
  return h;
}

}  // namespace dct
