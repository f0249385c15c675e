// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "siga/params.hpp"

namespace siga {

/// "SIGA" then the format version byte.
inline constexpr char kCheckpointMagic[4] = {'S', 'I', 'G', 'A'};
inline constexpr std::uint8_t kCheckpointVersion = 0x01;

/// Layout: magic, version, u32 entry count, then per entry u16 name length,
/// name, u8 rank, u32 dims, f32 values; all little-endian.
std::vector<std::uint8_t> serialize_params(const ModelParams& ps);
/// Throws FormatError (with byte offset) on any malformed input. Entries whose
/// name ends in `.running_mean`, `.running_var` or starts with `meta.` load as
/// non-trainable.
ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ModelParams& ps, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace siga
