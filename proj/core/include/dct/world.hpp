// SPDX-License-Identifier: Apache-2.0
//
// The synthetic sound world: a closed catalog of event types, scenes of
// ordered events, caption variants, closed-form QA, frame features and the
// frozen featurizer that stands in for a pretrained audio encoder.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dct/array2.hpp"
#include "dct/sampling.hpp"

namespace dct {

struct EventType {
  std::string key;             // dog_bark
  std::string name;            // dog barking  (canonical event phrase, used by the judge)
  std::string phrase;          // a dog barking
  std::string phrase_synonym;  // a hound yelping
  std::string clause;          // a dog is barking
  std::string clause_synonym;  // barking sounds are heard
  std::string question;        // is a dog barking ?
};

const std::vector<EventType>& event_catalog();
/// Index of `key` in the catalog; throws std::out_of_range.
int event_index(std::string_view key);

struct SceneEvent {
  int type = 0;
  int start = 0;
  int duration = 0;
  friend bool operator==(const SceneEvent&, const SceneEvent&) = default;
};

struct Scene {
  std::string id;
  std::vector<SceneEvent> events;  // sorted by start frame
  int frames = 0;

  std::vector<int> event_types() const;
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct WorldConfig {
  int min_events = 1;
  int max_events = 4;
  int min_frames = 40;
  int max_frames = 200;
  int min_duration = 10;
  int max_duration = 30;
  /// Relative event-type weights; empty means uniform over the catalog.
  std::vector<double> event_weights;
  double noise = 0.2;
  int caption_variants = 3;
  std::size_t feature_dim = 16;

  /// Throws std::invalid_argument when no scene can satisfy the config.
  void validate() const;
};

/// Events occupy consecutive equal slots of the clip in order, so their start
/// frames are strictly increasing and intervals never overlap.
Scene gen_scene(Rng& rng, const WorldConfig& config, std::string id);

enum class CaptionStyle { kCanonical, kSynonym, kOrderFlipped };
std::string to_string(CaptionStyle style);
CaptionStyle caption_style_from_string(std::string_view s);

struct CaptionVariant {
  std::string text;
  CaptionStyle style = CaptionStyle::kCanonical;
  friend bool operator==(const CaptionVariant&, const CaptionVariant&) = default;
};

/// "a dog barking and then birds chirping"; one-event scenes use the clause.
std::string canonical_caption(const Scene& scene);

/// Up to k distinct variants. The canonical caption comes first; scenes with
/// two or more events also get an order-flipped variant ("B after A").
std::vector<CaptionVariant> gen_captions(const Scene& scene, Rng& rng, int k);

enum class AnswerKind { kYesNo, kCount, kOrder };
std::string to_string(AnswerKind kind);
AnswerKind answer_kind_from_string(std::string_view s);

struct QAPair {
  std::string question;
  std::string answer;  // "yes" | "no" | digits | canonical event name
  AnswerKind kind = AnswerKind::kYesNo;
  friend bool operator==(const QAPair&, const QAPair&) = default;
};

/// One present-event question (yes), one absent-event question (no), one
/// count question and, with two or more events, one first/last question.
std::vector<QAPair> gen_qa(const Scene& scene, Rng& rng);

/// Every question text gen_qa can emit.
std::vector<std::string> question_universe();

/// Frame-band signature of an event type: D_in values in {0, 1}, three ones.
std::vector<double> event_signature(int type, std::size_t feature_dim);

/// T x D_in. Each event adds its signature over its interval; then i.i.d.
/// Gaussian noise with amplitude config.noise.
Array2 render_features(const Scene& scene, Rng& rng, const WorldConfig& config);

/// Frozen stand-in for the pretrained audio encoder: stride-2 frame average
/// (odd tail padded with a zero frame) followed by a fixed seeded affine map.
class FrozenEncoder {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0xE1C0DE5ULL;

  explicit FrozenEncoder(std::size_t d_in = 16, std::size_t d_out = 32,
                         std::uint64_t seed = kDefaultSeed);

  /// T x D_in -> ceil(T/2) x D_out. Throws std::invalid_argument on empty
  /// input and ShapeError on a width mismatch.
  Array2 forward(const Array2& features) const;

  std::size_t input_dim() const { return weight_.rows(); }
  std::size_t output_dim() const { return weight_.cols(); }
  std::uint64_t hash() const;

 private:
  Array2 weight_;  // D_in x D_out
  Array2 bias_;    // 1 x D_out
};

}  // namespace dct
