// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "siga/tensor.hpp"

namespace siga::gpc {

/// S_gt = [1 - S_m, 1[beta_1 >= delta] S_m, ..., 1[beta_T >= delta] S_m],
/// zero-padded to `channels` (1 + M) when T < M. Never on the tape.
/// Single sample: beta [T, W], s_m [H, W] -> [channels, H, W].
/// Batch: beta [B, T, W], s_m [B, H, W] -> [B, channels, H, W].
/// channels = 0 means 1 + T.
Tensor build_glyph_pseudo_label(const Tensor& beta, const Tensor& s_m, double delta,
                                std::size_t channels = 0);

/// Same values, detached from any tape.
Tensor detach_targets(const Tensor& s_gt);

}  // namespace siga::gpc
