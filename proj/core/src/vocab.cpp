// SPDX-License-Identifier: Apache-2.0
#include "siga/vocab.hpp"

#include <cctype>

#include "siga/errors.hpp"
#include "siga/synth.hpp"

namespace siga::vocab {

int char_to_class(char c) {
  const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto pos = data::kFullCharset.find(lc);
  if (pos == std::string_view::npos) {
    throw ContractError(std::string("symbol '") + c + "' is not in the vocabulary");
  }
  return static_cast<int>(pos);
}

char class_to_char(int cls) {
  if (cls < 0 || cls >= kEos) throw ContractError("class " + std::to_string(cls) + " is not a character");
  return data::kFullCharset[static_cast<std::size_t>(cls)];
}

std::vector<int> encode_target(std::string_view label, std::size_t steps) {
  if (label.size() + 1 > steps) {
    throw ContractError("label '" + std::string(label) + "' longer than " +
                        std::to_string(steps - 1) + " characters");
  }
  std::vector<int> out(steps, kEos);
  for (std::size_t i = 0; i < label.size(); ++i) out[i] = char_to_class(label[i]);
  return out;
}

std::string decode_classes(const std::vector<int>& classes) {
  std::string s;
  for (int c : classes) {
    if (c == kEos) break;
    s.push_back(class_to_char(c));
  }
  return s;
}

std::string normalize(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

}  // namespace siga::vocab
