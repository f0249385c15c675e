// SPDX-License-Identifier: Apache-2.0
#include "siga/attn_decoder.hpp"

#include <cmath>

#include "siga/errors.hpp"
#include "siga/ops.hpp"
#include "siga/vocab.hpp"

namespace siga::attn {

void init_encoder_params(ModelParams& ps, const Geometry& g, Rng& rng) {
  layers::init_conv_block(ps, "enc.stem", 1, g.c0, rng);
  layers::init_conv_block(ps, "enc.block1", g.c0, g.c1, rng);
  layers::init_conv_block(ps, "enc.block2", g.c1, g.c2, rng);
  layers::init_conv1x1(ps, "enc.collapse", g.c2, g.channels, rng);
}

void init_decoder_params(ModelParams& ps, const Geometry& g, Rng& rng) {
  const std::size_t C = g.channels, A = g.attn_dim, E = g.embed_dim;
  layers::init_linear(ps, "att.state", C, A, rng);  // W s + b
  {
    // V h carries no bias of its own; the single b of the score lives on W s.
    const double bound = std::sqrt(6.0 / static_cast<double>(C + A));
    std::vector<double> v(C * A);
    for (double& x : v) x = rng.uniform(-bound, bound);
    ps.add("att.key.w", {C, A}, std::move(v));
  }
  {
    const double bound = std::sqrt(6.0 / static_cast<double>(A + 1));
    std::vector<double> v(A);
    for (double& x : v) x = rng.uniform(-bound, bound);
    ps.add("att.score.w", {A, 1}, std::move(v));
  }
  {
    std::vector<double> v(static_cast<std::size_t>(vocab::kEmbeddingRows) * E);
    for (double& x : v) x = rng.uniform(-0.1, 0.1);
    ps.add("emb.table", {static_cast<std::size_t>(vocab::kEmbeddingRows), E}, std::move(v));
  }
  layers::init_linear(ps, "gru.x", C + E, 3 * C, rng);
  {
    const double bound = std::sqrt(6.0 / static_cast<double>(3 * C));
    std::vector<double> v(C * 2 * C);
    for (double& x : v) x = rng.uniform(-bound, bound);
    ps.add("gru.h_zr.w", {C, 2 * C}, std::move(v));
    std::vector<double> u(C * C);
    for (double& x : u) x = rng.uniform(-bound, bound);
    ps.add("gru.h_cand.w", {C, C}, std::move(u));
  }
  layers::init_linear(ps, "cls", C, static_cast<std::size_t>(vocab::kNumClasses), rng);
}

EncoderOut encode(const Tensor& images, ModelParams& ps, const RunMode& mode) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) % 4 != 0 ||
      images.dim(3) % 4 != 0) {
    throw ShapeError("encode: expected [B,1,H,W] with H, W multiples of 4, got " +
                     to_string(images.shape()));
  }
  const std::size_t B = images.dim(0), N = images.dim(3) / 4;
  EncoderOut out;
  out.p0 = layers::conv_block(ps, "enc.stem", images, mode);
  out.p1 = layers::conv_block(ps, "enc.block1", avg_pool(out.p0, 2, 2), mode);
  out.p2 = layers::conv_block(ps, "enc.block2", avg_pool(out.p1, 2, 2), mode);
  Tensor col = out.p2;
  while (col.dim(2) > 1) {
    if (col.dim(2) % 2 != 0) throw ShapeError("encode: height does not halve to 1");
    col = avg_pool(col, 2, 1);
  }
  const Tensor seq = layers::conv1x1(ps, "enc.collapse", col);  // [B, C, 1, N]
  const std::size_t C = seq.dim(1);
  out.h_seq = permute(reshape(seq, {B, C, N}), {0, 2, 1});
  return out;
}

Tensor attention_keys(const Tensor& h_seq, ModelParams& ps) {
  return matmul(h_seq, ps.get("att.key.w"));
}

AttentionStep attention_step(const Tensor& s_prev, const Tensor& h_seq, const Tensor& keys,
                             ModelParams& ps) {
  if (h_seq.rank() != 3 || s_prev.rank() != 2 || s_prev.dim(0) != h_seq.dim(0) ||
      keys.rank() != 3 || keys.dim(0) != h_seq.dim(0) || keys.dim(1) != h_seq.dim(1)) {
    throw ShapeError("attention_step: state " + to_string(s_prev.shape()) + ", sequence " +
                     to_string(h_seq.shape()) + ", keys " + to_string(keys.shape()));
  }
  const std::size_t B = h_seq.dim(0), N = h_seq.dim(1), A = keys.dim(2);
  const Tensor query = reshape(layers::linear(ps, "att.state", s_prev), {B, 1, A});
  const Tensor hidden = tanh(add(keys, broadcast_to(query, {B, N, A})));
  const Tensor scores = reshape(matmul(hidden, ps.get("att.score.w")), {B, N});
  AttentionStep out;
  out.alpha = softmax(scores, 1);
  out.glimpse = reshape(matmul(reshape(out.alpha, {B, 1, N}), h_seq), {B, h_seq.dim(2)});
  return out;
}

AttentionStep attention_step(const Tensor& s_prev, const Tensor& h_seq, ModelParams& ps) {
  return attention_step(s_prev, h_seq, attention_keys(h_seq, ps), ps);
}

DecodeState initial_state(std::size_t batch, const Geometry& g) {
  return {Tensor::zeros({batch, g.channels}), std::vector<int>(batch, vocab::kStart), 0};
}

StepOutput decode_step(const DecodeState& state, const Tensor& glimpse, ModelParams& ps,
                       const std::vector<int>* y_teacher) {
  const std::size_t B = state.s.dim(0), C = state.s.dim(1);
  if (glimpse.shape() != Shape{B, C}) {
    throw ShapeError("decode_step: glimpse " + to_string(glimpse.shape()) + " vs state " +
                     to_string(state.s.shape()));
  }
  if (state.y_prev.size() != B) throw ContractError("decode_step: y_prev size mismatch");
  for (int y : state.y_prev) {
    if (y < 0 || y >= vocab::kEmbeddingRows) {
      throw ContractError("decode_step: unknown symbol index " + std::to_string(y));
    }
  }
  const Tensor emb = embedding_lookup(ps.get("emb.table"), state.y_prev);
  const Tensor gx = layers::linear(ps, "gru.x", concat({glimpse, emb}, 1));  // [B, 3C]
  const Tensor gh = matmul(state.s, ps.get("gru.h_zr.w"));                     // [B, 2C]
  const Tensor z = sigmoid(add(slice(gx, 1, 0, C), slice(gh, 1, 0, C)));
  const Tensor r = sigmoid(add(slice(gx, 1, C, 2 * C), slice(gh, 1, C, 2 * C)));
  const Tensor cand =
      tanh(add(slice(gx, 1, 2 * C, 3 * C), matmul(mul(r, state.s), ps.get("gru.h_cand.w"))));
  // s' = z * s + (1 - z) * cand
  const Tensor s_next = add(cand, mul(z, sub(state.s, cand)));

  StepOutput out;
  out.logits = layers::linear(ps, "cls", s_next);
  out.state.s = s_next;
  out.state.t = state.t + 1;
  if (y_teacher) {
    if (y_teacher->size() != B) throw ContractError("decode_step: teacher symbols size mismatch");
    for (int y : *y_teacher) {
      if (y < 0 || y >= vocab::kNumClasses) {
        throw ContractError("decode_step: unknown symbol index " + std::to_string(y));
      }
    }
    out.state.y_prev = *y_teacher;
  } else {
    out.state.y_prev = argmax_rows(out.logits);
  }
  return out;
}

DecodeOutput decode_sequence(const EncoderOut& enc, ModelParams& ps, const Geometry& g,
                             const std::vector<std::string>* labels, const GlimpseHook& hook) {
  const std::size_t B = enc.h_seq.dim(0), N = enc.h_seq.dim(1), T = g.decode_steps;
  const std::size_t K = static_cast<std::size_t>(vocab::kNumClasses);
  std::vector<std::vector<int>> targets;
  DecodeOutput out;
  if (labels) {
    if (labels->size() != B) throw ContractError("decode_sequence: label count mismatch");
    for (const std::string& l : *labels) {
      if (l.size() > g.max_chars - 1) {
        throw ContractError("decode_sequence: label '" + l + "' longer than " +
                            std::to_string(g.max_chars - 1) + " characters");
      }
      targets.push_back(vocab::encode_target(l, T));
      out.trace.lengths.push_back(l.size());
    }
  }

  const Tensor keys = attention_keys(enc.h_seq, ps);
  DecodeState state = initial_state(B, g);
  std::vector<Tensor> alphas, logits;
  out.predictions.assign(B, {});
  for (std::size_t t = 0; t < T; ++t) {
    const AttentionStep att = attention_step(state.s, enc.h_seq, keys, ps);
    const Tensor input = hook ? hook(t, att.glimpse) : att.glimpse;
    std::vector<int> teacher;
    if (labels) {
      for (std::size_t b = 0; b < B; ++b) teacher.push_back(targets[b][t]);
    }
    StepOutput step = decode_step(state, input, ps, labels ? &teacher : nullptr);
    const std::vector<int> pred = argmax_rows(step.logits);
    for (std::size_t b = 0; b < B; ++b) out.predictions[b].push_back(pred[b]);
    alphas.push_back(reshape(att.alpha, {B, 1, N}));
    logits.push_back(reshape(step.logits, {B, 1, K}));
    state = std::move(step.state);
  }
  out.trace.alpha = concat(alphas, 1);
  out.logits = concat(logits, 1);
  return out;
}

Tensor recognition_loss(const Tensor& logits, const std::vector<std::string>& labels) {
  if (logits.rank() != 3 || logits.dim(0) != labels.size()) {
    throw ShapeError("recognition_loss: logits " + to_string(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), T = logits.dim(1);
  std::vector<int> idx;
  std::vector<double> mask(B * T, 0.0);
  double count = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::vector<int> tgt = vocab::encode_target(labels[b], T);
    idx.insert(idx.end(), tgt.begin(), tgt.end());
    for (std::size_t t = 0; t <= labels[b].size() && t < T; ++t) {
      mask[b * T + t] = 1.0;
      count += 1.0;
    }
  }
  const Tensor picked = gather_last(log_softmax(logits, 2), idx);  // [B, T]
  const Tensor masked = mul(picked, Tensor::from({B, T}, std::move(mask)));
  return scale(sum_all(masked), -1.0 / count);
}

std::vector<std::string> decode_strings(const DecodeOutput& out) {
  std::vector<std::string> s;
  for (const auto& p : out.predictions) s.push_back(vocab::decode_classes(p));
  return s;
}

}  // namespace siga::attn
