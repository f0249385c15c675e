// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace siga {

/// Network geometry. Defaults are the desk-scale model: 16x64 inputs,
/// 16-column sequence of 32-d features, 8 decoding steps and 8 glyph slots.
struct Geometry {
  std::size_t height = 16;      // H
  std::size_t width = 64;       // W
  std::size_t seq_len = 16;     // N = W / 4
  std::size_t channels = 32;    // C, also the recurrent state size
  std::size_t decode_steps = 8; // T
  std::size_t max_chars = 8;    // M; glyph map has 1 + M channels
  std::size_t c0 = 16;          // P0 / O0 channels
  std::size_t c1 = 24;          // P1 / O1 channels
  std::size_t c2 = 32;          // P2 / O2 channels
  std::size_t embed_dim = 16;
  std::size_t attn_dim = 32;

  bool operator==(const Geometry&) const = default;
};

/// Which model branches are active. Baseline = everything off.
struct Switches {
  bool enable_js = true;     // joint self-supervision: segmentation, alignment, GPC, glyph head
  bool enable_acfm = true;   // glyph-feature fusion into the decoder
  bool enable_align = true;  // L_cor + L_dif within the joint branch
  bool enable_cor = true;    // individual alignment terms, only read when enable_align
  bool enable_dif = true;

  bool operator==(const Switches&) const = default;
};

struct TrainConfig {
  Geometry geometry;
  Switches switches;

  double mu = 70.0;
  double lambda = 0.1;
  double delta = 0.05;
  int kmeans_k = 2;
  int kmeans_iters = 20;

  double w_rec = 1.0;
  double w_ins = 1.0;
  double w_seq = 1.0;
  double w_seg = 1.0;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  std::size_t batch_size = 16;
  std::size_t steps = 500;
  std::size_t eval_every = 100;
  std::size_t eval_samples = 256;
  std::uint64_t seed = 0;
  bool deterministic = true;
};

/// Throws ConfigError on violated invariants.
void validate(const TrainConfig& cfg);

/// Parses `key = value` lines over the defaults; unknown keys are a ConfigError.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& cfg);

}  // namespace siga
