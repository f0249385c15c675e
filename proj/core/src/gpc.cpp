// SPDX-License-Identifier: Apache-2.0
#include "siga/gpc.hpp"

#include "siga/counters.hpp"
#include "siga/errors.hpp"

namespace siga::gpc {

Tensor build_glyph_pseudo_label(const Tensor& beta, const Tensor& s_m, double delta,
                                std::size_t channels) {
  if (!(delta > 0.0 && delta < 1.0)) throw ContractError("build_glyph_pseudo_label: delta outside (0,1)");
  const bool batched = beta.rank() == 3;
  if (!((batched && s_m.rank() == 3 && beta.dim(0) == s_m.dim(0)) ||
        (beta.rank() == 2 && s_m.rank() == 2)) ||
      beta.dim(beta.rank() - 1) != s_m.dim(s_m.rank() - 1)) {
    throw ShapeError("build_glyph_pseudo_label: beta " + to_string(beta.shape()) + " vs mask " +
                     to_string(s_m.shape()));
  }
  ++counters().gpc;
  const std::size_t B = batched ? beta.dim(0) : 1;
  const std::size_t T = beta.dim(beta.rank() - 2), W = beta.dim(beta.rank() - 1);
  const std::size_t H = s_m.dim(s_m.rank() - 2);
  const std::size_t K = channels == 0 ? 1 + T : channels;
  if (K < 1 + T) throw ContractError("build_glyph_pseudo_label: fewer channels than steps");

  const auto bv = beta.data();
  const auto mv = s_m.data();
  std::vector<double> out(B * K * H * W, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double* m = mv.data() + b * H * W;
    double* o = out.data() + b * K * H * W;
    for (std::size_t p = 0; p < H * W; ++p) o[p] = 1.0 - m[p];
    for (std::size_t t = 0; t < T; ++t) {
      const double* row = bv.data() + (b * T + t) * W;
      double* ch = o + (1 + t) * H * W;
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          if (row[c] >= delta) ch[r * W + c] = m[r * W + c];
        }
      }
    }
  }
  Shape shape = batched ? Shape{B, K, H, W} : Shape{K, H, W};
  return Tensor::from(std::move(shape), std::move(out));
}

Tensor detach_targets(const Tensor& s_gt) { return s_gt.detach(); }

}  // namespace siga::gpc
