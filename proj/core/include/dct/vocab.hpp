// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dct {

using TokenId = int;

/// Reserved ids. They are never produced by text tokenization.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kSysOpen = 3;
inline constexpr TokenId kUsrOpen = 4;
inline constexpr TokenId kAsstOpen = 5;
inline constexpr TokenId kSegClose = 6;
inline constexpr TokenId kReservedCount = 7;
/// Placeholder for injected audio embeddings; not a vocabulary entry.
inline constexpr TokenId kAudioSlot = -1;
}  // namespace special

class UnknownTokenError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Lowercases and splits on whitespace and ASCII punctuation; punctuation
/// characters become single-character tokens.
std::vector<std::string> normalize_words(std::string_view text);
/// Space-joined normalize_words(text).
std::string normalize_text(std::string_view text);

/// Word-level bijection id <-> string. Layout: the 7 reserved markers, the
/// sorted corpus words, then a trailing "<unk>" used only in lenient mode.
class Vocabulary {
 public:
  static Vocabulary build(std::span<const std::string> corpus);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// Throws std::invalid_argument unless reserved markers lead and <unk> ends.
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t size() const { return tokens_.size(); }
  TokenId unk_id() const { return static_cast<TokenId>(tokens_.size()) - 1; }
  bool contains(std::string_view word) const;
  TokenId id(std::string_view word) const;
  const std::string& token(TokenId id) const;

  /// Strict mode throws UnknownTokenError on out-of-vocabulary words.
  std::vector<TokenId> tokenize(std::string_view text, bool strict = true) const;
  /// Throws std::out_of_range for ids outside [0, size()).
  std::string detokenize(std::span<const TokenId> ids) const;

  /// FNV-1a over the serialized token list.
  std::uint64_t hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace dct
