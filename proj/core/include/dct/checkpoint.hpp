// SPDX-License-Identifier: Apache-2.0
//
// Binary container shared by LM, adapter and trainer state:
//
//   "DCTCKPT1" | u32 header bytes | header JSON | u32 section count |
//   per section: str id | u8 precision | u32 array count |
//     per array: str name | u32 rows | u32 cols | little-endian values
//
// Strings are u32 length + bytes. Precision 4 = float32, 8 = float64.
#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "dct/array2.hpp"

namespace dct {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a checkpoint is incompatible with what the caller holds
/// (format, template, vocabulary or model hash).
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

enum class Precision : std::uint8_t { kFloat32 = 4, kFloat64 = 8 };

struct CheckpointSection {
  std::string id;
  Precision precision = Precision::kFloat64;
  std::vector<std::pair<std::string, Array2>> arrays;

  std::vector<Array2> values() const;
};

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<CheckpointSection> sections;

  bool has_section(const std::string& id) const;
  const CheckpointSection& section(const std::string& id) const;
  /// Adds or replaces a section.
  void put(CheckpointSection section);

  /// Writes atomically (temp file + rename).
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace dct
