// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "siga/config.hpp"
#include "siga/params.hpp"
#include "siga/tensor.hpp"

namespace siga::attn {

/// Encoder features for a batch.
struct EncoderOut {
  Tensor p0;     // [B, c0, H, W]
  Tensor p1;     // [B, c1, H/2, W/2]
  Tensor p2;     // [B, c2, H/4, W/4]
  Tensor h_seq;  // [B, N, C]: column i is the sequence item h_i
};

/// Recurrent decoder state for a batch.
struct DecodeState {
  Tensor s;                 // [B, C]
  std::vector<int> y_prev;  // previous symbol per item; vocab::kStart at t = 0
  std::size_t t = 0;
};

struct AttentionStep {
  Tensor alpha;  // [B, N], rows sum to 1
  Tensor glimpse;  // [B, C]
};

struct StepOutput {
  Tensor logits;  // [B, vocab::kNumClasses]
  DecodeState state;
};

/// Attention weights for a decoded batch; beta is filled by the alignment module.
struct AttentionTrace {
  Tensor alpha;  // [B, T, N]
  Tensor beta;   // [B, T, W] (undefined until interpolated)
  std::vector<std::size_t> lengths;  // ground-truth character counts (training only)
};

struct DecodeOutput {
  Tensor logits;  // [B, T, vocab::kNumClasses]
  AttentionTrace trace;
  std::vector<std::vector<int>> predictions;  // greedy argmax per step
};

void init_encoder_params(ModelParams& ps, const Geometry& g, Rng& rng);
void init_decoder_params(ModelParams& ps, const Geometry& g, Rng& rng);

/// images: [B, 1, H, W] with values in [0, 1].
EncoderOut encode(const Tensor& images, ModelParams& ps, const RunMode& mode);

/// V h_i + b for every sequence item, computed once per decode: [B, N, A].
Tensor attention_keys(const Tensor& h_seq, ModelParams& ps);

/// e_i = w^T tanh(W s + V h_i + b), alpha = softmax(e), g = sum_i alpha_i h_i.
AttentionStep attention_step(const Tensor& s_prev, const Tensor& h_seq, const Tensor& keys,
                             ModelParams& ps);
AttentionStep attention_step(const Tensor& s_prev, const Tensor& h_seq, ModelParams& ps);

/// One gated-recurrent step over [glimpse, E(y_prev)] followed by the classifier.
/// `y_teacher`, when given, becomes the next step's previous symbol (teacher
/// forcing); otherwise the argmax prediction is fed back.
StepOutput decode_step(const DecodeState& state, const Tensor& glimpse, ModelParams& ps,
                       const std::vector<int>* y_teacher = nullptr);

DecodeState initial_state(std::size_t batch, const Geometry& g);

/// Optional per-step replacement of the glimpse, e.g. glyph-feature fusion.
/// Receives (step, glimpse) and returns the decoder input of size C.
using GlimpseHook = std::function<Tensor(std::size_t, const Tensor&)>;

/// Runs T steps. With `labels`, uses teacher forcing on the encoded targets
/// (ContractError if a label exceeds T - 1 characters).
DecodeOutput decode_sequence(const EncoderOut& enc, ModelParams& ps, const Geometry& g,
                             const std::vector<std::string>* labels = nullptr,
                             const GlimpseHook& hook = {});

/// Cross-entropy over steps up to and including each label's EOS.
Tensor recognition_loss(const Tensor& logits, const std::vector<std::string>& labels);

/// Strings decoded greedily, cut at the first EOS.
std::vector<std::string> decode_strings(const DecodeOutput& out);

}  // namespace siga::attn
