// SPDX-License-Identifier: Apache-2.0
#include "siga/text_seg.hpp"

#include <algorithm>
#include <cmath>

#include "siga/counters.hpp"
#include "siga/errors.hpp"
#include "siga/losses.hpp"
#include "siga/ops.hpp"

namespace siga::seg {

ClusterMask kmeans_mask(const Image& image, int k, int max_iters) {
  if (k != 2) throw ContractError("kmeans_mask supports k = 2 only");
  if (image.pixels.empty()) throw ContractError("kmeans_mask: empty image");
  for (double v : image.pixels) {
    if (!std::isfinite(v)) throw NumericError("kmeans_mask: non-finite pixel");
  }
  ++counters().kmeans;

  const auto [lo_it, hi_it] = std::minmax_element(image.pixels.begin(), image.pixels.end());
  double c_lo = *lo_it, c_hi = *hi_it;
  if (c_hi - c_lo < kMinSeparability) {
    throw DegenerateImage("kmeans_mask: image intensity is constant");
  }

  const std::size_t n = image.pixels.size();
  std::vector<std::uint8_t> assign(n, 0);  // 1 = the cluster seeded at the maximum
  int it = 0;
  for (; it < max_iters; ++it) {
    bool changed = false;
    double sum_lo = 0.0, sum_hi = 0.0;
    std::size_t n_lo = 0, n_hi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = image.pixels[i];
      const std::uint8_t a = std::abs(v - c_hi) < std::abs(v - c_lo) ? 1 : 0;
      if (it == 0 || a != assign[i]) changed = true;
      assign[i] = a;
      if (a) {
        sum_hi += v;
        ++n_hi;
      } else {
        sum_lo += v;
        ++n_lo;
      }
    }
    if (n_lo) c_lo = sum_lo / static_cast<double>(n_lo);
    if (n_hi) c_hi = sum_hi / static_cast<double>(n_hi);
    if (!changed) break;
  }

  ClusterMask out;
  out.iterations = it;
  out.separability = std::abs(c_hi - c_lo);
  if (out.separability < kMinSeparability) {
    throw DegenerateImage("kmeans_mask: clusters collapsed");
  }

  const std::size_t H = image.height, W = image.width;
  std::size_t border_hi = 0, border_total = 0;
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      if (r != 0 && r != H - 1 && c != 0 && c != W - 1) continue;
      ++border_total;
      border_hi += assign[r * W + c];
    }
  }
  const std::size_t border_lo = border_total - border_hi;
  // Fewer border pixels means more likely text; ties go to the brighter cluster.
  const std::uint8_t fg = border_lo < border_hi ? 0 : 1;
  out.centroid_fg = fg ? c_hi : c_lo;
  out.centroid_bg = fg ? c_lo : c_hi;
  out.s_pl = Mask(H, W);
  for (std::size_t i = 0; i < n; ++i) out.s_pl.bits[i] = assign[i] == fg ? 1 : 0;
  return out;
}

void init_pyramid_params(ModelParams& ps, const Geometry& g, Rng& rng) {
  layers::init_conv_block(ps, "pyr.o2.a", g.c2, g.c2, rng);
  layers::init_conv_block(ps, "pyr.o2.b", g.c2, g.c2, rng);
  layers::init_conv_block(ps, "pyr.o1.a", g.c2 + g.c1, g.c1, rng);
  layers::init_conv_block(ps, "pyr.o1.b", g.c1, g.c1, rng);
  layers::init_conv_block(ps, "pyr.o0.a", g.c1 + g.c0, g.c0, rng);
  layers::init_conv_block(ps, "pyr.o0.b", g.c0, g.c0, rng);
  layers::init_conv1x1(ps, "pyr.mask", g.c0, 1, rng);
}

namespace {

Tensor phi(ModelParams& ps, const std::string& level, const Tensor& x, const RunMode& mode) {
  return layers::conv_block(ps, level + ".b", layers::conv_block(ps, level + ".a", x, mode), mode);
}

void require_level(const Tensor& t, std::size_t b, std::size_t h, std::size_t w,
                   const char* what) {
  if (t.rank() != 4 || t.dim(0) != b || t.dim(2) != h || t.dim(3) != w) {
    throw ShapeError(std::string("pyramid_forward: ") + what + " has shape " +
                     to_string(t.shape()) + ", expected [" + std::to_string(b) + ",C," +
                     std::to_string(h) + "," + std::to_string(w) + "]");
  }
}

}  // namespace

PyramidOutputs pyramid_forward(const Tensor& p0, const Tensor& p1, const Tensor& p2,
                               ModelParams& ps, const RunMode& mode) {
  if (p0.rank() != 4) throw ShapeError("pyramid_forward: P0 must be [B,C,H,W], got " + to_string(p0.shape()));
  const std::size_t B = p0.dim(0), H = p0.dim(2), W = p0.dim(3);
  require_level(p1, B, H / 2, W / 2, "P1");
  require_level(p2, B, H / 4, W / 4, "P2");
  ++counters().pyramid;

  PyramidOutputs out;
  out.o2 = phi(ps, "pyr.o2", p2, mode);
  out.o1 = phi(ps, "pyr.o1", concat({upsample_nearest_2x(out.o2), p1}, 1), mode);
  out.o0 = phi(ps, "pyr.o0", concat({upsample_nearest_2x(out.o1), p0}, 1), mode);
  out.s_m = reshape(sigmoid(layers::conv1x1(ps, "pyr.mask", out.o0)), {B, H, W});
  return out;
}

Tensor seg_loss(const Tensor& s_m, const Tensor& s_pl) {
  if (s_m.shape() != s_pl.shape()) {
    throw ShapeError("seg_loss: shape mismatch " + to_string(s_m.shape()) + " vs " +
                     to_string(s_pl.shape()));
  }
  return binary_cross_entropy(s_m, s_pl);
}

Tensor mask_to_tensor(const Mask& m) {
  std::vector<double> v(m.bits.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m.bits[i] ? 1.0 : 0.0;
  return Tensor::from({m.height, m.width}, std::move(v));
}

}  // namespace siga::seg
