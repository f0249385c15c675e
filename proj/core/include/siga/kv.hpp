// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace siga {

/// One `key = value` line. Blank lines and lines starting with '#' are skipped.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::vector<KeyValue> parse_key_values(const std::string& text);
std::vector<KeyValue> read_key_values(const std::filesystem::path& path);

double parse_double(const KeyValue& kv);
long long parse_int(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);

}  // namespace siga
