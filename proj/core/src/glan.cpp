// SPDX-License-Identifier: Apache-2.0
#include "siga/glan.hpp"

#include "siga/counters.hpp"
#include "siga/errors.hpp"
#include "siga/losses.hpp"
#include "siga/ops.hpp"

namespace siga::glan {

void init_glan_params(ModelParams& ps, const Geometry& g, Rng& rng) {
  layers::init_conv_block(ps, "glan.a", g.c0, g.c0, rng);
  layers::init_conv_block(ps, "glan.b", g.c0, g.c0, rng);
  layers::init_conv1x1(ps, "glan.proj", g.c0, glyph_channels(g), rng);
  layers::init_conv_block(ps, "glan.feat.a", g.c0, g.c0, rng);
  layers::init_conv_block(ps, "glan.feat.b", g.c0, g.c0, rng);
}

Tensor glyph_head_forward(const Tensor& o0, ModelParams& ps, const RunMode& mode) {
  if (o0.rank() != 4) throw ShapeError("glyph_head_forward: expected [B,C,H,W], got " + to_string(o0.shape()));
  ++counters().glyph_head;
  const Tensor x = layers::conv_block(ps, "glan.b", layers::conv_block(ps, "glan.a", o0, mode), mode);
  return softmax(layers::conv1x1(ps, "glan.proj", x), 1);
}

namespace {

Tensor as_batch(const Tensor& t) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3) return reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)});
  throw ShapeError("glyph maps must be [Ns,H,W] or [B,Ns,H,W], got " + to_string(t.shape()));
}

}  // namespace

Tensor dice_loss(const Tensor& s_gam, const Tensor& s_gt, std::span<const std::size_t> lengths) {
  if (s_gam.shape() != s_gt.shape()) {
    throw ShapeError("dice_loss: " + to_string(s_gam.shape()) + " vs " + to_string(s_gt.shape()));
  }
  const Tensor pred = as_batch(s_gam), tgt = as_batch(s_gt);
  const std::size_t B = pred.dim(0), K = pred.dim(1), P = pred.dim(2) * pred.dim(3);
  if (lengths.size() != B) throw ContractError("dice_loss: one length per sample required");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t L = lengths[b];
    if (L == 0) throw ContractError("dice_loss: L must be at least 1");
    if (L + 1 > K) throw ContractError("dice_loss: L exceeds the character channels");
    const Tensor w = reshape(slice(slice(pred, 0, b, b + 1), 1, 1, L + 1), {L, P});
    const Tensor ws = reshape(slice(slice(tgt, 0, b, b + 1), 1, 1, L + 1), {L, P});
    const Tensor inter = sum(mul(w, ws), 1);
    const Tensor denom = affine(add(sum(w, 1), sum(ws, 1)), 1.0, kProbEps);
    const Tensor ratio = mean_all(div(inter, denom));
    total = add(total, affine(ratio, -2.0, 1.0));
  }
  return scale(total, 1.0 / static_cast<double>(B));
}

Tensor union_ce_loss(const Tensor& s_gam, const Tensor& s_m) {
  const Tensor pred = as_batch(s_gam);
  const Tensor u = sum(slice(pred, 1, 1, pred.dim(1)), 1);  // [B, H, W]
  const Tensor rho = s_m.rank() == 2 ? reshape(s_m.detach(), {1, s_m.dim(0), s_m.dim(1)}) : s_m.detach();
  if (u.shape() != rho.shape()) {
    throw ShapeError("union_ce_loss: union " + to_string(u.shape()) + " vs mask " +
                     to_string(rho.shape()));
  }
  return binary_cross_entropy(u, rho);
}

GlanLosses glan_loss(const Tensor& s_gam, const Tensor& s_gt, const Tensor& s_m,
                     std::span<const std::size_t> lengths) {
  GlanLosses out;
  out.dice = dice_loss(s_gam, s_gt.detach(), lengths);
  out.cel = union_ce_loss(s_gam, s_m);
  out.total = add(out.dice, out.cel);
  return out;
}

Tensor pool_glyph_features(const Tensor& o0, const Tensor& s_gam, ModelParams& ps,
                           const RunMode& mode) {
  if (o0.rank() != 4 || s_gam.rank() != 4 || o0.dim(0) != s_gam.dim(0) ||
      o0.dim(2) != s_gam.dim(2) || o0.dim(3) != s_gam.dim(3) || s_gam.dim(1) < 2) {
    throw ShapeError("pool_glyph_features: features " + to_string(o0.shape()) + " vs maps " +
                     to_string(s_gam.shape()));
  }
  ++counters().glyph_pool;
  const std::size_t B = o0.dim(0), P = o0.dim(2) * o0.dim(3), M = s_gam.dim(1) - 1;
  const Tensor f = layers::conv_block(ps, "glan.feat.b",
                                      layers::conv_block(ps, "glan.feat.a", o0, mode), mode);
  const std::size_t C = f.dim(1);
  const Tensor a = reshape(slice(s_gam, 1, 1, M + 1), {B, M, P});
  const Tensor num = matmul(a, permute(reshape(f, {B, C, P}), {0, 2, 1}));  // [B, M, C]
  const Tensor den = affine(reshape(sum(a, 2), {B, M, 1}), 1.0, kProbEps);
  return div(num, broadcast_to(den, {B, M, C}));
}

}  // namespace siga::glan
