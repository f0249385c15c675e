// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "siga/config.hpp"
#include "siga/params.hpp"
#include "siga/tensor.hpp"

namespace siga::glan {

/// Glyph head (`glan.a`, `glan.b`, `glan.proj`) and pooling features
/// (`glan.feat.a`, `glan.feat.b`).
void init_glan_params(ModelParams& ps, const Geometry& g, Rng& rng);

inline std::size_t glyph_channels(const Geometry& g) { return 1 + g.max_chars; }

/// Weights of the final 1x1 projection: C * N_s, whatever the vocabulary.
inline std::size_t projection_weight_count(std::size_t channels, std::size_t n_s) {
  return channels * n_s;
}
/// The same projection in a head with one channel per character class.
inline std::size_t category_dependent_weight_count(std::size_t channels, std::size_t classes) {
  return channels * classes;
}

/// O0 [B, c0, H, W] -> S_gam [B, 1 + M, H, W], softmax over channels.
Tensor glyph_head_forward(const Tensor& o0, ModelParams& ps, const RunMode& mode);

/// Mean over samples of (1/L) sum over channels 1..L of 1 - 2 sum(w w*) / (sum w + sum w* + eps).
/// Accepts [Ns, H, W] with one length or [B, Ns, H, W] with one length per sample.
Tensor dice_loss(const Tensor& s_gam, const Tensor& s_gt, std::span<const std::size_t> lengths);

/// Pixel-mean BCE between the detached target S_m and the union of all
/// character channels of S_gam.
Tensor union_ce_loss(const Tensor& s_gam, const Tensor& s_m);

struct GlanLosses {
  Tensor dice;
  Tensor cel;
  Tensor total;
};
GlanLosses glan_loss(const Tensor& s_gam, const Tensor& s_gt, const Tensor& s_m,
                     std::span<const std::size_t> lengths);

/// I[b, m] = sum_p S_gam[b, m+1, p] F[b, :, p] / (sum_p S_gam[b, m+1, p] + eps)
/// with F two conv blocks over O0. Result [B, M, c0].
Tensor pool_glyph_features(const Tensor& o0, const Tensor& s_gam, ModelParams& ps,
                           const RunMode& mode);

}  // namespace siga::glan
