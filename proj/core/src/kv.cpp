// SPDX-License-Identifier: Apache-2.0
#include "siga/kv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "siga/errors.hpp"

namespace siga {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<KeyValue> parse_key_values(const std::string& text) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", n);
    KeyValue kv{trim(t.substr(0, eq)), trim(t.substr(eq + 1)), n};
    if (kv.key.empty()) throw ParseError("empty key", n);
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<KeyValue> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

double parse_double(const KeyValue& kv) {
  try {
    std::size_t used = 0;
    const double v = std::stod(kv.value, &used);
    if (used != kv.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("'" + kv.key + "' expects a number, got '" + kv.value + "'", kv.line);
  }
}

long long parse_int(const KeyValue& kv) {
  long long v = 0;
  const char* b = kv.value.data();
  const char* e = b + kv.value.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) {
    throw ParseError("'" + kv.key + "' expects an integer, got '" + kv.value + "'", kv.line);
  }
  return v;
}

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  throw ParseError("'" + kv.key + "' expects true/false, got '" + kv.value + "'", kv.line);
}

}  // namespace siga
