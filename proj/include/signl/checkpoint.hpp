#pragma once

// SIGC checkpoints: "SIGC", u16 version, u32 entry count, then per entry
// u16 name length, UTF-8 name, u8 rank, u32 dims, f32 payload. All
// little-endian.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "signl/errors.hpp"
#include "signl/featio.hpp"
#include "signl/tensorgrad.hpp"

namespace signl {

inline constexpr std::array<char, 4> kSigcMagic{'S', 'I', 'G', 'C'};
inline constexpr std::uint16_t kSigcVersion = 1;
inline constexpr std::size_t kSigcHeaderBytes = 10;

struct CheckpointEntry {
  std::string name;
  Shape dims;
  std::vector<float> values;
};

// Exact byte size of a checkpoint holding these entries.
inline std::size_t checkpoint_size(const std::vector<CheckpointEntry>& entries) {
  std::size_t n = kSigcHeaderBytes;
  for (const auto& e : entries) n += 2 + e.name.size() + 1 + 4 * e.dims.size() + 4 * e.values.size();
  return n;
}

inline std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out;
  out.reserve(checkpoint_size(entries));
  out.append(kSigcMagic.data(), kSigcMagic.size());
  le::put_u16(out, kSigcVersion);
  le::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.size() > 0xffff) throw FormatError("bad checkpoint entry name");
    if (e.dims.empty() || e.dims.size() > 255 || shape_numel(e.dims) != e.values.size()) {
      throw FormatError("checkpoint entry " + e.name + " has inconsistent dims");
    }
    le::put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    out.push_back(static_cast<char>(e.dims.size()));
    for (auto d : e.dims) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.values) le::put_f32(out, v);
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > size) throw FormatError("SIGC checkpoint truncated at byte " + std::to_string(pos));
  };
  need(kSigcHeaderBytes);
  if (std::memcmp(p, kSigcMagic.data(), 4) != 0) throw FormatError("bad SIGC magic");
  if (le::get_u16(p + 4) != kSigcVersion) throw FormatError("unsupported SIGC version");
  const std::uint32_t count = le::get_u32(p + 6);
  pos = kSigcHeaderBytes;
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    need(2);
    const std::size_t len = le::get_u16(p + pos);
    pos += 2;
    need(len + 1);
    e.name.assign(bytes.data() + pos, len);
    pos += len;
    const std::size_t rank = p[pos++];
    if (rank == 0) throw FormatError("checkpoint entry " + e.name + " has rank 0");
    need(4 * rank);
    for (std::size_t r = 0; r < rank; ++r, pos += 4) e.dims.push_back(le::get_u32(p + pos));
    const std::size_t numel = shape_numel(e.dims);
    need(4 * numel);
    e.values.resize(numel);
    for (std::size_t k = 0; k < numel; ++k, pos += 4) e.values[k] = le::get_f32(p + pos);
    entries.push_back(std::move(e));
  }
  if (pos != size) throw FormatError("trailing bytes after SIGC entries");
  return entries;
}

template <std::floating_point T>
std::vector<CheckpointEntry> entries_from_store(const ParamStore<T>& store) {
  std::vector<CheckpointEntry> out;
  for (const auto& [name, t] : store.entries()) {
    out.push_back({name, t.dims(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  return out;
}

template <std::floating_point T>
void save_checkpoint(const ParamStore<T>& store, const fs::path& path) {
  write_file_bytes(path, encode_checkpoint(entries_from_store(store)));
}

inline std::vector<CheckpointEntry> read_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

struct LoadOptions {
  // File entries with these prefixes are skipped (e.g. a projection head).
  std::vector<std::string> ignore_prefixes;
  // Store parameters with these prefixes may be absent from the file.
  std::vector<std::string> optional_prefixes;
  // File entries the store does not know are tolerated under these prefixes.
  std::vector<std::string> extra_prefixes;
};

namespace ckpt_detail {
inline bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.starts_with(p)) return true;
  }
  return false;
}
}  // namespace ckpt_detail

// Copies checkpoint values into the store after validating names and shapes
// against it. Returns the names that were loaded.
template <std::floating_point T>
std::vector<std::string> load_into(ParamStore<T>& store, const std::vector<CheckpointEntry>& entries,
                                   const LoadOptions& opts = {}) {
  using ckpt_detail::has_prefix;
  std::vector<std::string> loaded;
  for (const auto& e : entries) {
    if (has_prefix(e.name, opts.ignore_prefixes)) continue;
    if (!store.contains(e.name)) {
      if (has_prefix(e.name, opts.extra_prefixes)) continue;
      throw IncompatibleError("checkpoint entry " + e.name + " " + shape_str(e.dims) +
                              " has no counterpart in the configured model");
    }
    auto& t = store.get(e.name);
    if (t.dims() != e.dims) {
      throw IncompatibleError("checkpoint entry " + e.name + " is " + shape_str(e.dims) + ", model expects " +
                              shape_str(t.dims()));
    }
    loaded.push_back(e.name);
  }
  for (const auto& [name, t] : store.entries()) {
    if (has_prefix(name, opts.optional_prefixes)) continue;
    if (std::find(loaded.begin(), loaded.end(), name) == loaded.end()) {
      throw IncompatibleError("checkpoint lacks parameter " + name + " " + shape_str(t.dims()));
    }
  }
  for (const auto& e : entries) {
    if (std::find(loaded.begin(), loaded.end(), e.name) == loaded.end()) continue;
    auto dst = store.get(e.name).data();
    for (std::size_t i = 0; i < e.values.size(); ++i) dst[i] = static_cast<T>(e.values[i]);
  }
  return loaded;
}

template <std::floating_point T>
std::vector<std::string> load_checkpoint(ParamStore<T>& store, const fs::path& path, const LoadOptions& opts = {}) {
  return load_into(store, read_checkpoint(path), opts);
}

}  // namespace signl
