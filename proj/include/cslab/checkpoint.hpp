// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file checkpoint.hpp
 * @brief Binary checkpoint container. Layout (all integers little-endian):
 *
 *     offset  size  field
 *     0       8     magic "CSLABCK1"
 *     8       4     u32 format version (1)
 *     12      8     u64 manifest byte length M
 *     20      M     manifest, UTF-8 JSON
 *     20+M    8     u64 blob byte length B (multiple of 8)
 *     28+M    B     parameter values, IEEE-754 binary64 little-endian
 *
 * The manifest holds hyperparameters, lineage, seed, vocabulary and a
 * parameter table of (name, group, layer, role, shape, offset) where offset
 * counts doubles from the start of the blob. See docs/checkpoint_format.md.
 */

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "model.hpp"

namespace cslab {

inline constexpr char checkpoint_magic[8] = {'C', 'S', 'L', 'A', 'B', 'C', 'K', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

inline void put_le(std::string &out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(std::string_view in, std::size_t pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size())
    throw DataError("checkpoint is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

} // namespace detail

inline nlohmann::json checkpoint_manifest(const ModelParams &p) {
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto &e : p.entries()) {
    table.push_back({{"name", e.name},
                     {"group", group_name(e.group)},
                     {"layer", e.layer},
                     {"role", e.role},
                     {"shape", e.value.shape()},
                     {"offset", offset}});
    offset += e.value.size();
  }
  return {{"format_version", checkpoint_version},
          {"hyperparams", p.hp},
          {"lineage", p.lineage},
          {"seed", p.seed},
          {"vocab", p.vocab},
          {"params", table}};
}

/// Serialized bytes; identical parameters always give identical bytes.
inline std::string checkpoint_bytes(const ModelParams &p) {
  const std::string manifest = checkpoint_manifest(p).dump();
  std::string out(checkpoint_magic, sizeof checkpoint_magic);
  detail::put_le(out, checkpoint_version, 4);
  detail::put_le(out, manifest.size(), 8);
  out += manifest;
  detail::put_le(out, p.parameter_count() * 8, 8);
  out.reserve(out.size() + p.parameter_count() * 8);
  for (const auto &e : p.entries())
    for (double v : e.value.data())
      detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

inline ModelParams checkpoint_from_bytes(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), checkpoint_magic, sizeof checkpoint_magic) != 0)
    throw DataError("not a checkpoint (bad magic)");
  const auto version = detail::get_le(bytes, 8, 4);
  if (version != checkpoint_version)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto mlen = detail::get_le(bytes, 12, 8);
  if (20 + mlen > bytes.size())
    throw DataError("checkpoint manifest is truncated");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.substr(20, mlen));
  } catch (const nlohmann::json::exception &e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const std::size_t blob_at = 28 + mlen;
  const auto blen = detail::get_le(bytes, 20 + mlen, 8);
  if (blen % 8 != 0 || blob_at + blen != bytes.size())
    throw DataError("checkpoint blob length does not match file size");
  const std::size_t n_values = blen / 8;

  ModelParams p;
  try {
    p.hp = m.at("hyperparams").get<Hyperparams>();
    p.lineage = m.at("lineage");
    p.seed = m.at("seed").get<std::uint64_t>();
    p.vocab = m.at("vocab").get<std::vector<std::string>>();
    for (const auto &row : m.at("params")) {
      const auto shape = row.at("shape").get<Shape>();
      const auto offset = row.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset + n > n_values)
        throw DataError("parameter " + row.at("name").get<std::string>() + " lies outside the blob");
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i)
        values[i] = std::bit_cast<double>(detail::get_le(bytes, blob_at + 8 * (offset + i), 8));
      p.add(parse_group(row.at("group").get<std::string>()), row.at("layer").get<int>(),
            row.at("role").get<std::string>(), Tensor(shape, std::move(values)));
      if (p.entries().back().name != row.at("name").get<std::string>())
        throw DataError("parameter table name does not match its group/layer/role");
    }
  } catch (const nlohmann::json::exception &e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const ConfigError &e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  p.hp.validate();
  if (p.parameter_count() != n_values || p.parameter_count() != expected_parameter_count(p.hp))
    throw DataError("checkpoint parameter count does not match its hyperparameters");
  return p;
}

/// Writes to a temporary sibling, then renames over `path`.
inline void save_checkpoint(const std::filesystem::path &path, const ModelParams &p) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot write " + tmp.string());
    const std::string bytes = checkpoint_bytes(p);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush())
      throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline std::string read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ModelParams load_checkpoint(const std::filesystem::path &path) {
  return checkpoint_from_bytes(read_file_bytes(path));
}

} // namespace cslab
