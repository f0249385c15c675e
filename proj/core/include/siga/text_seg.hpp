// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "siga/config.hpp"
#include "siga/image.hpp"
#include "siga/params.hpp"
#include "siga/tensor.hpp"

namespace siga::seg {

/// Two-cluster pseudo-label of an image's text foreground.
struct ClusterMask {
  Mask s_pl;  // 1 = text
  double centroid_fg = 0.0;
  double centroid_bg = 0.0;
  double separability = 0.0;
  int iterations = 0;
};

inline constexpr double kMinSeparability = 1e-6;

/// Lloyd's algorithm on scalar intensities with centroids seeded at the
/// image minimum and maximum. The cluster owning the smaller share of border
/// pixels is labelled foreground; on a tie the brighter centroid wins.
/// Throws DegenerateImage when the centroids end up closer than 1e-6.
ClusterMask kmeans_mask(const Image& image, int k = 2, int max_iters = 20);

/// Top-down pyramid features and the predicted text mask.
struct PyramidOutputs {
  Tensor o2;   // [B, c2, H/4, W/4]
  Tensor o1;   // [B, c1, H/2, W/2]
  Tensor o0;   // [B, c0, H, W]
  Tensor s_m;  // [B, H, W], values in (0, 1)
};

void init_pyramid_params(ModelParams& ps, const Geometry& g, Rng& rng);

/// O2 = phi(P2), O1 = phi([up(O2), P1]), O0 = phi([up(O1), P0]),
/// S_m = sigmoid(conv1x1(O0)); phi is two conv-standardize-ReLU blocks.
PyramidOutputs pyramid_forward(const Tensor& p0, const Tensor& p1, const Tensor& p2,
                               ModelParams& ps, const RunMode& mode);

/// Pixel-mean binary cross-entropy between S_m and the cluster pseudo-label.
Tensor seg_loss(const Tensor& s_m, const Tensor& s_pl);

Tensor mask_to_tensor(const Mask& m);

}  // namespace siga::seg
