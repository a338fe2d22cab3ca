// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace tspt {

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` lines; `#` starts a comment. Throws ConfigError on a
/// line without `=` or a repeated key.
KeyValues parse_kv(const std::string& text);
KeyValues load_kv(const std::filesystem::path& path);
std::string format_kv(const KeyValues& kv);
/// Shortest text that parses back to the same double.
std::string format_double(double v);
void save_kv(const std::filesystem::path& path, const KeyValues& kv);

/// Typed lookups that throw ConfigError naming the key on a bad value.
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
long long kv_int(const KeyValues& kv, const std::string& key, long long fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string kv_string(const KeyValues& kv, const std::string& key,
                      const std::string& fallback);

}  // namespace tspt
