// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "siga/synth.hpp"
#include "siga/tensor.hpp"

namespace siga::align {

/// Endpoint-anchored resampling of attention rows from N columns to `width`.
/// alpha: [..., N] -> [..., width].
Tensor interpolate_alpha(const Tensor& alpha, std::size_t width);

/// 1 / (1 + exp(-mu (x - lambda))).
double squash(double x, double mu, double lambda);
Tensor squash(const Tensor& x, double mu, double lambda);

/// Sum of alpha_t . alpha_t' over t < t'. alpha: [L, N] -> scalar.
Tensor correlation(const Tensor& alpha);

/// sum_t broadcast_over_rows(squash(beta_t)) * S_m, unclamped.
/// beta: [L, W], s_m: [H, W] -> [H, W].
Tensor saliency(const Tensor& beta, const Tensor& s_m, double mu, double lambda);

struct AlignmentLosses {
  Tensor l_cor;  // scalar
  Tensor l_dif;  // scalar
  Tensor l_seq;  // l_cor + l_dif (only the enabled terms)
};

struct AlignmentOptions {
  double mu = 70.0;
  double lambda = 0.1;
  bool use_cor = true;
  bool use_dif = true;
};

/// Single sample: alpha [L, N], beta [L, W], s_m [H, W]. L_dif is the pixel-mean
/// BCE with S_m as the (non-detached) target and the clamped saliency as the
/// prediction.
AlignmentLosses alignment_loss(const Tensor& alpha, const Tensor& beta, const Tensor& s_m,
                               const AlignmentOptions& opt = {});

/// Batch version averaging per-sample losses. alpha: [B, T, N], beta: [B, T, W],
/// s_m: [B, H, W]; only the first lengths[b] rows of sample b take part.
AlignmentLosses alignment_loss_batch(const Tensor& alpha, const Tensor& beta, const Tensor& s_m,
                                     std::span<const std::size_t> lengths,
                                     const AlignmentOptions& opt = {});

inline constexpr double kThetaThreshold = 0.05;

/// IoU between the box's column indicator and 1[beta_t > threshold] on raw beta.
/// Both empty -> 1, exactly one empty -> 0.
double theta_metric(const data::CharBox& box, std::span<const double> beta_t,
                    double threshold = kThetaThreshold);

/// Sum of theta over characters and the number of characters scored, for a
/// trace alpha [B, T, N]; rows beyond T are not scored.
struct ThetaSum {
  double sum = 0.0;
  std::size_t count = 0;
};
ThetaSum theta_over_batch(const Tensor& alpha, std::size_t width,
                          const std::vector<std::vector<data::CharBox>>& boxes,
                          double threshold = kThetaThreshold);

}  // namespace siga::align
