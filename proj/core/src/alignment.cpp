// SPDX-License-Identifier: Apache-2.0
#include "siga/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "siga/counters.hpp"
#include "siga/errors.hpp"
#include "siga/losses.hpp"
#include "siga/ops.hpp"

namespace siga::align {

Tensor interpolate_alpha(const Tensor& alpha, std::size_t width) {
  return linear_interp_1d(alpha, width);
}

double squash(double x, double mu, double lambda) {
  return 1.0 / (1.0 + std::exp(-mu * (x - lambda)));
}

Tensor squash(const Tensor& x, double mu, double lambda) {
  return sigmoid(affine(x, mu, -mu * lambda));
}

Tensor correlation(const Tensor& alpha) {
  if (alpha.rank() != 2) throw ShapeError("correlation: expected [L,N], got " + to_string(alpha.shape()));
  // Strict upper triangle of the Gram matrix, so disjoint supports give an exact 0.
  const std::size_t L = alpha.dim(0);
  std::vector<double> upper(L * L, 0.0);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t u = t + 1; u < L; ++u) upper[t * L + u] = 1.0;
  const Tensor gram = matmul(alpha, permute(alpha, {1, 0}));
  return sum_all(mul(gram, Tensor::from({L, L}, std::move(upper))));
}

Tensor saliency(const Tensor& beta, const Tensor& s_m, double mu, double lambda) {
  if (beta.rank() != 2 || s_m.rank() != 2 || beta.dim(1) != s_m.dim(1)) {
    throw ShapeError("saliency: beta " + to_string(beta.shape()) + " vs mask " +
                     to_string(s_m.shape()));
  }
  ++counters().alignment;
  const Tensor cols = sum(squash(beta, mu, lambda), 0);  // [W]
  return mul(broadcast_to(cols, s_m.shape()), s_m);
}

AlignmentLosses alignment_loss(const Tensor& alpha, const Tensor& beta, const Tensor& s_m,
                               const AlignmentOptions& opt) {
  if (alpha.rank() != 2 || beta.rank() != 2 || alpha.dim(0) != beta.dim(0)) {
    throw ShapeError("alignment_loss: alpha " + to_string(alpha.shape()) + " vs beta " +
                     to_string(beta.shape()));
  }
  AlignmentLosses out;
  out.l_cor = opt.use_cor ? correlation(alpha) : Tensor::scalar(0.0);
  if (opt.use_dif) {
    out.l_dif = binary_cross_entropy(saliency(beta, s_m, opt.mu, opt.lambda), s_m);
  } else {
    out.l_dif = Tensor::scalar(0.0);
  }
  out.l_seq = add(out.l_cor, out.l_dif);
  return out;
}

AlignmentLosses alignment_loss_batch(const Tensor& alpha, const Tensor& beta, const Tensor& s_m,
                                     std::span<const std::size_t> lengths,
                                     const AlignmentOptions& opt) {
  if (alpha.rank() != 3 || beta.rank() != 3 || s_m.rank() != 3 || alpha.dim(0) != beta.dim(0) ||
      alpha.dim(1) != beta.dim(1) || s_m.dim(0) != alpha.dim(0) || lengths.size() != alpha.dim(0)) {
    throw ShapeError("alignment_loss_batch: alpha " + to_string(alpha.shape()) + ", beta " +
                     to_string(beta.shape()) + ", mask " + to_string(s_m.shape()));
  }
  const std::size_t B = alpha.dim(0), T = alpha.dim(1);
  Tensor cor = Tensor::scalar(0.0), dif = Tensor::scalar(0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t L = std::min(lengths[b], T);
    if (L == 0) throw ContractError("alignment_loss_batch: empty label");
    const Tensor a = slice(reshape(slice(alpha, 0, b, b + 1), {T, alpha.dim(2)}), 0, 0, L);
    const Tensor be = slice(reshape(slice(beta, 0, b, b + 1), {T, beta.dim(2)}), 0, 0, L);
    const Tensor m = reshape(slice(s_m, 0, b, b + 1), {s_m.dim(1), s_m.dim(2)});
    const AlignmentLosses l = alignment_loss(a, be, m, opt);
    cor = add(cor, l.l_cor);
    dif = add(dif, l.l_dif);
  }
  const double inv = 1.0 / static_cast<double>(B);
  AlignmentLosses out;
  out.l_cor = scale(cor, inv);
  out.l_dif = scale(dif, inv);
  out.l_seq = add(out.l_cor, out.l_dif);
  return out;
}

double theta_metric(const data::CharBox& box, std::span<const double> beta_t, double threshold) {
  const int W = static_cast<int>(beta_t.size());
  if (box.x0 < 0 || box.x1 > W || box.x0 > box.x1) {
    throw ContractError("theta_metric: box [" + std::to_string(box.x0) + "," +
                        std::to_string(box.x1) + ") outside width " + std::to_string(W));
  }
  std::size_t inter = 0, uni = 0;
  for (int j = 0; j < W; ++j) {
    const bool l = j >= box.x0 && j < box.x1;
    const bool p = beta_t[static_cast<std::size_t>(j)] > threshold;
    inter += l && p;
    uni += l || p;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ThetaSum theta_over_batch(const Tensor& alpha, std::size_t width,
                          const std::vector<std::vector<data::CharBox>>& boxes, double threshold) {
  if (alpha.rank() != 3 || alpha.dim(0) != boxes.size()) {
    throw ShapeError("theta_over_batch: alpha " + to_string(alpha.shape()) + " for " +
                     std::to_string(boxes.size()) + " samples");
  }
  NoGradGuard guard;
  const Tensor beta = interpolate_alpha(alpha.detach(), width);
  const std::size_t T = alpha.dim(1);
  ThetaSum out;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    for (std::size_t t = 0; t < boxes[b].size() && t < T; ++t) {
      const double* row = beta.data().data() + (b * T + t) * width;
      out.sum += theta_metric(boxes[b][t], {row, width}, threshold);
      ++out.count;
    }
  }
  return out;
}

}  // namespace siga::align
