// SPDX-License-Identifier: Apache-2.0
#include "siga/model.hpp"

#include "siga/alignment.hpp"
#include "siga/counters.hpp"
#include "siga/errors.hpp"
#include "siga/glan.hpp"
#include "siga/gpc.hpp"
#include "siga/ops.hpp"

namespace siga {

namespace {

constexpr const char* kMetaName = "meta.config";
constexpr std::size_t kMetaSize = 17;

std::vector<double> meta_values(const ModelMeta& m) {
  const Geometry& g = m.geometry;
  const Switches& s = m.switches;
  return {static_cast<double>(ModelParams::kVersion),
          static_cast<double>(g.height),
          static_cast<double>(g.width),
          static_cast<double>(g.seq_len),
          static_cast<double>(g.channels),
          static_cast<double>(g.decode_steps),
          static_cast<double>(g.max_chars),
          static_cast<double>(g.c0),
          static_cast<double>(g.c1),
          static_cast<double>(g.c2),
          static_cast<double>(g.embed_dim),
          static_cast<double>(g.attn_dim),
          s.enable_js ? 1.0 : 0.0,
          s.enable_acfm ? 1.0 : 0.0,
          s.enable_align ? 1.0 : 0.0,
          s.enable_cor ? 1.0 : 0.0,
          s.enable_dif ? 1.0 : 0.0};
}

}  // namespace

void write_meta(ModelParams& ps, const ModelMeta& meta) {
  std::vector<double> v = meta_values(meta);
  if (ps.contains(kMetaName)) {
    auto dst = ps.get(kMetaName).data_mut();
    std::copy(v.begin(), v.end(), dst.begin());
  } else {
    ps.add(kMetaName, {kMetaSize}, std::move(v), false);
  }
}

ModelMeta read_meta(const ModelParams& ps) {
  if (!ps.contains(kMetaName)) throw ConfigError("checkpoint has no model configuration entry");
  const Tensor& t = ps.get(kMetaName);
  if (t.numel() != kMetaSize) throw ConfigError("model configuration entry has the wrong size");
  const auto v = t.data();
  if (v[0] != ModelParams::kVersion) throw ConfigError("unsupported model version");
  auto sz = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
  ModelMeta m;
  m.geometry = {sz(1), sz(2), sz(3), sz(4), sz(5), sz(6), sz(7), sz(8), sz(9), sz(10), sz(11)};
  m.switches = {v[12] != 0.0, v[13] != 0.0, v[14] != 0.0, v[15] != 0.0, v[16] != 0.0};
  return m;
}

ModelParams init_model(const TrainConfig& cfg) {
  validate(cfg);
  const Geometry& g = cfg.geometry;
  Rng rng(cfg.seed);
  ModelParams ps;
  attn::init_encoder_params(ps, g, rng);
  attn::init_decoder_params(ps, g, rng);
  seg::init_pyramid_params(ps, g, rng);
  glan::init_glan_params(ps, g, rng);
  layers::init_linear(ps, "fuse.proj", g.c0, g.channels, rng);
  layers::init_linear(ps, "fuse.gate", 2 * g.channels, g.channels, rng);
  write_meta(ps, {g, cfg.switches});
  return ps;
}

Tensor gate_fuse(const Tensor& g, const Tensor& i, ModelParams& ps) {
  if (g.shape() != i.shape() || g.rank() != 2) {
    throw ShapeError("gate_fuse: glimpse " + to_string(g.shape()) + " vs glyph feature " +
                     to_string(i.shape()));
  }
  const Tensor z = sigmoid(layers::linear(ps, "fuse.gate", concat({g, i}, 1)));
  return add(i, mul(z, sub(g, i)));
}

Tensor project_glyph_features(const Tensor& feats, ModelParams& ps) {
  const std::size_t B = feats.dim(0), M = feats.dim(1);
  const Tensor p = layers::linear(ps, "fuse.proj", reshape(feats, {B * M, feats.dim(2)}));
  return reshape(p, {B, M, p.dim(1)});
}

Tensor images_to_tensor(const std::vector<data::Sample>& samples,
                        std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("images_to_tensor: empty batch");
  const std::size_t H = samples[indices[0]].image.height, W = samples[indices[0]].image.width;
  std::vector<double> v;
  v.reserve(indices.size() * H * W);
  for (std::size_t i : indices) {
    const Image& img = samples.at(i).image;
    if (img.height != H || img.width != W) throw ShapeError("images_to_tensor: mixed image sizes");
    v.insert(v.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor::from({indices.size(), 1, H, W}, std::move(v));
}

Batch make_batch(const std::vector<data::Sample>& samples, std::span<const std::size_t> indices,
                 const std::vector<std::optional<Mask>>* pseudo) {
  Batch b;
  b.images = images_to_tensor(samples, indices);
  const std::size_t H = b.images.dim(2), W = b.images.dim(3);
  std::vector<double> pl;
  if (pseudo) pl.reserve(indices.size() * H * W);
  for (std::size_t i : indices) {
    const data::Sample& s = samples[i];
    b.labels.push_back(s.label);
    b.boxes.push_back(s.char_boxes);
    b.lengths.push_back(s.label.size());
    if (pseudo) {
      const std::optional<Mask>& m = pseudo->at(i);
      b.s_pl_valid.push_back(m.has_value());
      for (std::size_t p = 0; p < H * W; ++p) pl.push_back(m && m->bits[p] ? 1.0 : 0.0);
    }
  }
  if (pseudo) b.s_pl = Tensor::from({indices.size(), H, W}, std::move(pl));
  return b;
}

std::vector<std::optional<Mask>> cluster_pseudo_labels(const std::vector<data::Sample>& samples,
                                                       const TrainConfig& cfg) {
  std::vector<std::optional<Mask>> out;
  out.reserve(samples.size());
  for (const data::Sample& s : samples) {
    try {
      out.emplace_back(seg::kmeans_mask(s.image, cfg.kmeans_k, cfg.kmeans_iters).s_pl);
    } catch (const DegenerateImage&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

namespace {

attn::GlimpseHook fusion_hook(const Tensor& projected, ModelParams& ps) {
  return [projected, &ps](std::size_t t, const Tensor& glimpse) {
    const std::size_t B = projected.dim(0), M = projected.dim(1), C = projected.dim(2);
    if (t >= M) return glimpse;
    ++counters().fusion;
    return gate_fuse(glimpse, reshape(slice(projected, 1, t, t + 1), {B, C}), ps);
  };
}

Tensor instance_loss(const Tensor& s_m, const Batch& batch) {
  if (!batch.s_pl.defined()) throw ContractError("total_loss: batch carries no pseudo-labels");
  std::vector<Tensor> pred, tgt;
  bool all = true;
  for (bool v : batch.s_pl_valid) all = all && v;
  if (all) return seg::seg_loss(s_m, batch.s_pl);
  for (std::size_t b = 0; b < batch.s_pl_valid.size(); ++b) {
    if (!batch.s_pl_valid[b]) continue;
    pred.push_back(slice(s_m, 0, b, b + 1));
    tgt.push_back(slice(batch.s_pl, 0, b, b + 1));
  }
  if (pred.empty()) return Tensor::scalar(0.0);
  return seg::seg_loss(concat(pred, 0), concat(tgt, 0));
}

}  // namespace

ForwardResult total_loss(const Batch& batch, ModelParams& ps, const TrainConfig& cfg,
                         const RunMode& mode, const FrozenTargets* frozen) {
  const Geometry& g = cfg.geometry;
  const Switches& sw = cfg.switches;
  ForwardResult r;
  const attn::EncoderOut enc = attn::encode(batch.images, ps, mode);

  attn::GlimpseHook hook;
  if (sw.enable_js || sw.enable_acfm) {
    r.pyramid = seg::pyramid_forward(enc.p0, enc.p1, enc.p2, ps, mode);
    r.s_gam = glan::glyph_head_forward(r.pyramid->o0, ps, mode);
    if (sw.enable_acfm) {
      const Tensor feats = glan::pool_glyph_features(r.pyramid->o0, r.s_gam, ps, mode);
      hook = fusion_hook(project_glyph_features(feats, ps), ps);
    }
  }
  r.decode = attn::decode_sequence(enc, ps, g, &batch.labels, hook);
  r.l_rec = attn::recognition_loss(r.decode.logits, batch.labels);
  r.total = scale(r.l_rec, cfg.w_rec);
  r.parts.rec = r.l_rec.item();

  if (sw.enable_js) {
    const Tensor& s_m = r.pyramid->s_m;
    r.l_ins = instance_loss(s_m, batch);
    r.beta = align::interpolate_alpha(r.decode.trace.alpha, g.width);
    r.decode.trace.beta = r.beta;
    if (sw.enable_align && (sw.enable_cor || sw.enable_dif)) {
      align::AlignmentOptions opt{cfg.mu, cfg.lambda, sw.enable_cor, sw.enable_dif};
      const align::AlignmentLosses a =
          align::alignment_loss_batch(r.decode.trace.alpha, r.beta, s_m, batch.lengths, opt);
      r.l_cor = a.l_cor;
      r.l_dif = a.l_dif;
      r.l_seq = a.l_seq;
      r.parts.cor = a.l_cor.item();
      r.parts.dif = a.l_dif.item();
    } else {
      r.l_seq = Tensor::scalar(0.0);
    }
    if (frozen) {
      r.s_gt = frozen->s_gt;
    } else {
      NoGradGuard guard;
      r.s_gt = gpc::build_glyph_pseudo_label(r.beta.detach(), s_m.detach(), cfg.delta,
                                             glan::glyph_channels(g));
    }
    const glan::GlanLosses gl =
        glan::glan_loss(r.s_gam, r.s_gt, frozen ? frozen->rho : s_m, batch.lengths);
    r.l_dice = gl.dice;
    r.l_cel = gl.cel;
    r.l_seg = gl.total;
    r.parts.ins = r.l_ins.item();
    r.parts.seq = r.l_seq.item();
    r.parts.seg = r.l_seg.item();
    r.parts.dice = gl.dice.item();
    r.parts.cel = gl.cel.item();
    r.total = add(r.total, scale(r.l_ins, cfg.w_ins));
    r.total = add(r.total, scale(r.l_seq, cfg.w_seq));
    r.total = add(r.total, scale(r.l_seg, cfg.w_seg));
  }
  r.parts.total = r.total.item();
  return r;
}

InferenceResult infer(const Tensor& images, ModelParams& ps, const ModelMeta& meta,
                      bool with_maps) {
  const RunMode mode = RunMode::eval();
  InferenceResult r;
  const attn::EncoderOut enc = attn::encode(images, ps, mode);
  attn::GlimpseHook hook;
  if (meta.switches.enable_acfm || with_maps) {
    r.pyramid = seg::pyramid_forward(enc.p0, enc.p1, enc.p2, ps, mode);
    r.s_gam = glan::glyph_head_forward(r.pyramid->o0, ps, mode);
    if (meta.switches.enable_acfm) {
      const Tensor feats = glan::pool_glyph_features(r.pyramid->o0, r.s_gam, ps, mode);
      hook = fusion_hook(project_glyph_features(feats, ps), ps);
    }
  }
  r.decode = attn::decode_sequence(enc, ps, meta.geometry, nullptr, hook);
  return r;
}

}  // namespace siga
