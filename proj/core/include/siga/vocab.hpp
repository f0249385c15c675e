// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace siga::vocab {

/// Output classes: 36 alphanumerics then EOS. The embedding table has one
/// more row for the <start> token.
inline constexpr int kNumClasses = 37;
inline constexpr int kEos = 36;
inline constexpr int kStart = 37;
inline constexpr int kEmbeddingRows = 38;

/// Case-insensitive; throws ContractError for symbols outside 0-9a-z.
int char_to_class(char c);
char class_to_char(int cls);

/// Class indices of `label` followed by EOS, padded with EOS to `steps`.
/// Throws ContractError when the label does not fit (length > steps - 1).
std::vector<int> encode_target(std::string_view label, std::size_t steps);

/// Characters before the first EOS.
std::string decode_classes(const std::vector<int>& classes);

/// Lowercased alphanumeric projection used for exact-match scoring.
std::string normalize(std::string_view s);

}  // namespace siga::vocab
