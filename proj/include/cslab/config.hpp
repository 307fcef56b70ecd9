// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file config.hpp
 * @brief `key = value` configuration files.
 *
 * One entry per line, `#` starts a comment, keys are unique. Lists are comma
 * separated. Unknown keys are reported by validate_keys() so typos fail loudly.
 */

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace cslab {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string &s, const std::string &what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw ConfigError(what + ": '" + s + "' is not a number");
  }
}

inline long long parse_int(const std::string &s, const std::string &what) {
  long long v = 0;
  const auto *end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError(what + ": '" + s + "' is not an integer");
  return v;
}

inline std::vector<double> parse_double_list(const std::string &s, const std::string &what) {
  std::vector<double> out;
  if (trim(s).empty())
    return out;
  for (const auto &item : split(s, ','))
    out.push_back(parse_double(item, what));
  return out;
}

class KeyValueConfig {
public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream &in, const std::string &origin = "<config>") {
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      if (trim(line).empty())
        continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      std::string key = trim(std::string_view(line).substr(0, eq));
      std::string value = trim(std::string_view(line).substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!cfg.values_.emplace(key, value).second)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string &path) {
    std::ifstream in(path);
    if (!in)
      throw IoError("cannot open config " + path);
    return parse(in, path);
  }

  static KeyValueConfig from_string(const std::string &text) {
    std::istringstream in(text);
    return parse(in);
  }

  bool has(const std::string &key) const { return values_.count(key) != 0; }
  void set(const std::string &key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string &key, const std::string &fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get_double(const std::string &key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(it->second, key);
  }
  long long get_int(const std::string &key, long long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(it->second, key);
  }
  std::size_t get_size(const std::string &key, std::size_t fallback) const {
    const long long v = get_int(key, static_cast<long long>(fallback));
    if (v < 0)
      throw ConfigError(key + " must be non-negative");
    return static_cast<std::size_t>(v);
  }
  bool get_bool(const std::string &key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end())
      return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes")
      return true;
    if (it->second == "false" || it->second == "0" || it->second == "no")
      return false;
    throw ConfigError(key + ": '" + it->second + "' is not a boolean");
  }
  std::vector<double> get_double_list(const std::string &key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double_list(it->second, key);
  }

  /// Throws ConfigError naming the first key not in `known`.
  void validate_keys(const std::set<std::string> &known) const {
    for (const auto &[k, v] : values_)
      if (!known.count(k))
        throw ConfigError("unknown config key '" + k + "'");
  }

  /// Keys matching `prefix`, with the prefix stripped.
  KeyValueConfig section(const std::string &prefix) const {
    KeyValueConfig out;
    for (const auto &[k, v] : values_)
      if (k.rfind(prefix, 0) == 0)
        out.values_[k.substr(prefix.size())] = v;
    return out;
  }

  const std::map<std::string, std::string> &values() const { return values_; }

private:
  std::map<std::string, std::string> values_;
};

} // namespace cslab
