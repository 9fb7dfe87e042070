// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

// Plain-text key=value configuration files. Blank lines and text after '#'
// are ignored; keys and values are trimmed of surrounding whitespace.
namespace fbnet::kv {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

// Throws ConfigError on a line without '=' or with an empty key, or when a
// key repeats.
std::vector<Entry> parse(const std::string& text);
std::string read_file(const std::string& path);

// Typed value parsers; throw ConfigError naming `key` on malformed input.
int to_int(const std::string& key, const std::string& value);
std::int64_t to_int64(const std::string& key, const std::string& value);
std::uint64_t to_uint64(const std::string& key, const std::string& value);
double to_double(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);

// Round-trippable decimal rendering of a double.
std::string format_double(double v);

}  // namespace fbnet::kv
