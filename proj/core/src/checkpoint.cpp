// SPDX-License-Identifier: Apache-2.0
#include "dct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dct {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'C', 'T', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated checkpoint");
  return v;
}

std::string get_str(std::istream& is, std::size_t limit = 1u << 30) {
  const std::uint32_t n = get_u32(is);
  if (n > limit) throw CheckpointError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace

std::vector<Array2> CheckpointSection::values() const {
  std::vector<Array2> out;
  out.reserve(arrays.size());
  for (const auto& [name, a] : arrays) out.push_back(a);
  return out;
}

bool Checkpoint::has_section(const std::string& id) const {
  for (const auto& s : sections) {
    if (s.id == id) return true;
  }
  return false;
}

const CheckpointSection& Checkpoint::section(const std::string& id) const {
  for (const auto& s : sections) {
    if (s.id == id) return s;
  }
  throw CheckpointError("checkpoint has no section '" + id + "'");
}

void Checkpoint::put(CheckpointSection section) {
  for (auto& s : sections) {
    if (s.id == section.id) {
      s = std::move(section);
      return;
    }
  }
  sections.push_back(std::move(section));
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    nlohmann::json h = header;
    h["format_version"] = kCheckpointFormatVersion;
    put_str(os, h.dump());
    put_u32(os, static_cast<std::uint32_t>(sections.size()));
    for (const auto& s : sections) {
      put_str(os, s.id);
      os.put(static_cast<char>(s.precision));
      put_u32(os, static_cast<std::uint32_t>(s.arrays.size()));
      for (const auto& [name, a] : s.arrays) {
        put_str(os, name);
        put_u32(os, static_cast<std::uint32_t>(a.rows()));
        put_u32(os, static_cast<std::uint32_t>(a.cols()));
        if (s.precision == Precision::kFloat64) {
          os.write(reinterpret_cast<const char*>(a.data().data()),
                   static_cast<std::streamsize>(a.data().size_bytes()));
        } else {
          std::vector<float> f(a.size());
          for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(a.data()[i]);
          os.write(reinterpret_cast<const char*>(f.data()),
                   static_cast<std::streamsize>(f.size() * sizeof(float)));
        }
      }
    }
    if (!os) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(get_str(is));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (ckpt.header.value("format_version", 0u) != kCheckpointFormatVersion) {
    throw VersionMismatchError("unsupported checkpoint format version in " + path.string());
  }
  const std::uint32_t n_sections = get_u32(is);
  for (std::uint32_t si = 0; si < n_sections; ++si) {
    CheckpointSection s;
    s.id = get_str(is, 1024);
    const int p = is.get();
    if (p != 4 && p != 8) throw CheckpointError("corrupt checkpoint precision tag");
    s.precision = static_cast<Precision>(p);
    const std::uint32_t n_arrays = get_u32(is);
    for (std::uint32_t ai = 0; ai < n_arrays; ++ai) {
      std::string name = get_str(is, 1024);
      const std::uint32_t rows = get_u32(is);
      const std::uint32_t cols = get_u32(is);
      Array2 a(rows, cols);
      if (s.precision == Precision::kFloat64) {
        if (!is.read(reinterpret_cast<char*>(a.data().data()),
                     static_cast<std::streamsize>(a.data().size_bytes()))) {
          throw CheckpointError("truncated checkpoint");
        }
      } else {
        std::vector<float> f(a.size());
        if (!is.read(reinterpret_cast<char*>(f.data()),
                     static_cast<std::streamsize>(f.size() * sizeof(float)))) {
          throw CheckpointError("truncated checkpoint");
        }
        for (std::size_t i = 0; i < f.size(); ++i) a.data()[i] = f[i];
      }
      s.arrays.emplace_back(std::move(name), std::move(a));
    }
    ckpt.sections.push_back(std::move(s));
  }
  return ckpt;
}

}  // namespace dct
