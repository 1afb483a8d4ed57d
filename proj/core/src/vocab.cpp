// SPDX-License-Identifier: Apache-2.0
#include "dct/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace dct {

namespace {

const std::vector<std::string>& reserved_names() {
  static const std::vector<std::string> names = {"<pad>", "<bos>",  "<eos>", "<sys>",
                                                 "<usr>", "<asst>", "</seg>"};
  return names;
}

constexpr const char* kUnk = "<unk>";

}  // namespace

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : normalize_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("Vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::set<std::string> words;
  for (const auto& text : corpus) {
    for (auto& w : normalize_words(text)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens = reserved_names();
  tokens.insert(tokens.end(), words.begin(), words.end());
  tokens.emplace_back(kUnk);
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  try {
    return from_tokens(std::move(tokens));
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("malformed vocabulary file " + path.string());
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& reserved = reserved_names();
  if (tokens.size() < reserved.size() + 1 ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin()) || tokens.back() != kUnk) {
    throw std::invalid_argument("token list does not follow the vocabulary layout");
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.find(std::string(word)) != index_.end();
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw UnknownTokenError("unknown word '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text, bool strict) const {
  std::vector<TokenId> ids;
  for (const auto& w : normalize_words(text)) {
    auto it = index_.find(w);
    const bool usable = it != index_.end() && it->second >= special::kReservedCount &&
                        it->second != unk_id();
    if (usable) {
      ids.push_back(it->second);
    } else if (strict) {
      throw UnknownTokenError("unknown word '" + w + "'");
    } else {
      ids.push_back(unk_id());
    }
  }
  return ids;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a(std::string_view{});
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\n"), h);
  }
  return h;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                             text.size()),
               seed);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace dct
