// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siga/attn_decoder.hpp"
#include "siga/config.hpp"
#include "siga/params.hpp"
#include "siga/synth.hpp"
#include "siga/tensor.hpp"
#include "siga/text_seg.hpp"

namespace siga {

/// Every parameter group is created regardless of the switches, in a fixed
/// order, so ablation runs with the same seed share their initialization.
/// Also stores the geometry and switches under `meta.config`.
ModelParams init_model(const TrainConfig& cfg);

/// Geometry and switches recorded in `meta.config`.
struct ModelMeta {
  Geometry geometry;
  Switches switches;
};
ModelMeta read_meta(const ModelParams& ps);
void write_meta(ModelParams& ps, const ModelMeta& meta);

/// z = sigmoid(Linear([g, i])), fused = z * g + (1 - z) * i. g, i: [B, C].
Tensor gate_fuse(const Tensor& g, const Tensor& i, ModelParams& ps);

/// Glyph features [B, M, c0] projected to the decoder width: [B, M, C].
Tensor project_glyph_features(const Tensor& feats, ModelParams& ps);

/// A training or evaluation batch.
struct Batch {
  Tensor images;  // [B, 1, H, W]
  std::vector<std::string> labels;
  std::vector<std::vector<data::CharBox>> boxes;
  std::vector<std::size_t> lengths;
  /// Cluster pseudo-labels [B, H, W] and whether each sample produced one.
  Tensor s_pl;
  std::vector<bool> s_pl_valid;
};

/// Assembles images and labels. Pseudo-labels are taken from `pseudo` when
/// given (indexed like `samples`), and left undefined otherwise.
Batch make_batch(const std::vector<data::Sample>& samples, std::span<const std::size_t> indices,
                 const std::vector<std::optional<Mask>>* pseudo = nullptr);

/// K-means pseudo-label per sample; nullopt for degenerate images.
std::vector<std::optional<Mask>> cluster_pseudo_labels(const std::vector<data::Sample>& samples,
                                                       const TrainConfig& cfg);

struct LossBreakdown {
  double total = 0.0;
  double rec = 0.0;
  double ins = 0.0;
  double seq = 0.0;
  double seg = 0.0;
  double cor = 0.0;
  double dif = 0.0;
  double dice = 0.0;
  double cel = 0.0;
};

/// Constructed targets to hold fixed instead of rebuilding them from the
/// current S_m and beta; used when differencing the objective numerically.
struct FrozenTargets {
  Tensor s_gt;  // [B, 1 + M, H, W]
  Tensor rho;   // [B, H, W]
};

struct ForwardResult {
  Tensor total;
  LossBreakdown parts;
  Tensor l_rec, l_ins, l_seq, l_seg;  // undefined when the branch is off
  Tensor l_cor, l_dif, l_dice, l_cel;
  attn::DecodeOutput decode;
  std::optional<seg::PyramidOutputs> pyramid;
  Tensor s_gam;
  Tensor beta;
  Tensor s_gt;
  Tensor s_sal;  // unclamped saliency per sample, [B, H, W]
};

/// w_rec L_rec + w_ins L_ins + w_seq L_seq + w_seg L_seg; disabled branches are
/// not computed at all.
ForwardResult total_loss(const Batch& batch, ModelParams& ps, const TrainConfig& cfg,
                         const RunMode& mode, const FrozenTargets* frozen = nullptr);

/// Inference forward: greedy decode, glyph fusion when enabled. Touches no
/// pseudo-label, alignment or constructed-target code.
struct InferenceResult {
  attn::DecodeOutput decode;
  std::optional<seg::PyramidOutputs> pyramid;
  Tensor s_gam;
};
/// `with_maps` also runs the segmentation and glyph heads when fusion is off.
InferenceResult infer(const Tensor& images, ModelParams& ps, const ModelMeta& meta,
                      bool with_maps = false);

Tensor images_to_tensor(const std::vector<data::Sample>& samples,
                        std::span<const std::size_t> indices);

}  // namespace siga
