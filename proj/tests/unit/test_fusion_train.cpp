// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "siga/checkpoint.hpp"
#include "siga/counters.hpp"
#include "siga/errors.hpp"
#include "siga/model.hpp"
#include "siga/ops.hpp"
#include "siga/train.hpp"

using namespace siga;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(s));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(s), std::move(v));
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

TrainConfig baseline_config() {
  TrainConfig cfg;
  cfg.switches.enable_js = false;
  cfg.switches.enable_acfm = false;
  return cfg;
}

struct CounterSnapshot {
  std::uint64_t kmeans, pyramid, alignment, gpc, glyph_head, glyph_pool, fusion;
  static CounterSnapshot take() {
    const auto& c = counters();
    return {c.kmeans, c.pyramid, c.alignment, c.gpc, c.glyph_head, c.glyph_pool, c.fusion};
  }
};

}  // namespace

TEST(GateFuse, SaturationAndFixedPoint) {
  TrainConfig cfg;
  ModelParams ps = init_model(cfg);
  Rng rng(1);
  const Tensor g = random_tensor(rng, {3, 32}), i = random_tensor(rng, {3, 32});
  auto bias = ps.get("fuse.gate.b").data_mut();
  for (double& b : bias) b = 1000.0;
  Tensor f = gate_fuse(g, i, ps);
  for (std::size_t k = 0; k < g.numel(); ++k) EXPECT_NEAR(f[k], g[k], 1e-12);
  for (double& b : bias) b = -1000.0;
  f = gate_fuse(g, i, ps);
  for (std::size_t k = 0; k < g.numel(); ++k) EXPECT_NEAR(f[k], i[k], 1e-12);
  for (double& b : bias) b = 0.3;
  f = gate_fuse(g, g, ps);
  for (std::size_t k = 0; k < g.numel(); ++k) EXPECT_NEAR(f[k], g[k], 1e-15);
}

TEST(GateFuse, ConvexCombination) {
  TrainConfig cfg;
  cfg.seed = 4;
  ModelParams ps = init_model(cfg);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor g = random_tensor(rng, {4, 32}, -3, 3), i = random_tensor(rng, {4, 32}, -3, 3);
    const Tensor f = gate_fuse(g, i, ps);
    for (std::size_t k = 0; k < f.numel(); ++k) {
      EXPECT_GE(f[k], std::min(g[k], i[k]) - 1e-15);
      EXPECT_LE(f[k], std::max(g[k], i[k]) + 1e-15);
    }
  }
}

TEST(TotalLoss, BaselineIsRecognitionOnlyAndAllocatesNothingElse) {
  const TrainConfig cfg = baseline_config();
  ModelParams ps = init_model(cfg);
  const auto samples = data::generate_corpus(3, 4, {});
  const auto idx = iota(4);
  const Batch batch = make_batch(samples, idx);
  const CounterSnapshot before = CounterSnapshot::take();
  const ForwardResult fr = total_loss(batch, ps, cfg, RunMode::train());
  active_tape().clear();
  const CounterSnapshot after = CounterSnapshot::take();
  EXPECT_EQ(fr.total.item(), fr.l_rec.item());
  EXPECT_FALSE(fr.l_ins.defined());
  EXPECT_FALSE(fr.l_seq.defined());
  EXPECT_FALSE(fr.l_seg.defined());
  EXPECT_FALSE(fr.pyramid.has_value());
  EXPECT_FALSE(fr.s_gam.defined());
  EXPECT_EQ(after.pyramid, before.pyramid);
  EXPECT_EQ(after.alignment, before.alignment);
  EXPECT_EQ(after.gpc, before.gpc);
  EXPECT_EQ(after.glyph_head, before.glyph_head);
  EXPECT_EQ(after.glyph_pool, before.glyph_pool);
  EXPECT_EQ(after.fusion, before.fusion);
}

TEST(TotalLoss, BreakdownSumsToTotal) {
  TrainConfig cfg;
  ModelParams ps = init_model(cfg);
  const auto samples = data::generate_corpus(5, 4, {});
  const auto pseudo = cluster_pseudo_labels(samples, cfg);
  const auto idx = iota(4);
  const Batch batch = make_batch(samples, idx, &pseudo);
  const ForwardResult fr = total_loss(batch, ps, cfg, RunMode::train());
  active_tape().clear();
  const auto& p = fr.parts;
  EXPECT_NEAR(p.total, p.rec + p.ins + p.seq + p.seg, 1e-12);
  EXPECT_NEAR(p.seq, p.cor + p.dif, 1e-12);
  EXPECT_NEAR(p.seg, p.dice + p.cel, 1e-12);
  EXPECT_GT(p.ins, 0.0);
  EXPECT_GT(p.dice, 0.0);
}

TEST(TotalLoss, WeightsScaleTerms) {
  TrainConfig cfg;
  cfg.w_rec = 0.5;
  cfg.w_ins = 2.0;
  cfg.w_seq = 0.0;
  cfg.w_seg = 3.0;
  ModelParams ps = init_model(cfg);
  const auto samples = data::generate_corpus(5, 2, {});
  const auto pseudo = cluster_pseudo_labels(samples, cfg);
  const auto idx = iota(2);
  const ForwardResult fr = total_loss(make_batch(samples, idx, &pseudo), ps, cfg, RunMode::frozen_train());
  active_tape().clear();
  const auto& p = fr.parts;
  EXPECT_NEAR(p.total, 0.5 * p.rec + 2.0 * p.ins + 3.0 * p.seg, 1e-12);
}

TEST(TotalLoss, DegenerateImageSkipsOnlyIns) {
  TrainConfig cfg;
  ModelParams ps = init_model(cfg);
  auto samples = data::generate_corpus(6, 2, {});
  for (double& v : samples[1].image.pixels) v = 0.5;
  const auto pseudo = cluster_pseudo_labels(samples, cfg);
  ASSERT_TRUE(pseudo[0].has_value());
  ASSERT_FALSE(pseudo[1].has_value());
  const auto idx = iota(2);
  const ForwardResult fr = total_loss(make_batch(samples, idx, &pseudo), ps, cfg, RunMode::frozen_train());
  active_tape().clear();
  EXPECT_TRUE(std::isfinite(fr.parts.total));
  EXPECT_GT(fr.parts.seq, 0.0);
  EXPECT_GT(fr.parts.seg, 0.0);

  EXPECT_GT(fr.parts.ins, 0.0);
}

TEST(Adam, ZeroGradientFromFreshStateIsNoOp) {
  ModelParams ps = init_model(TrainConfig{});
  const auto before = serialize_params(ps);
  ps.zero_grad();
  Adam opt(1e-3, 0.9, 0.999, 1e-8);
  opt.step(ps);
  opt.step(ps);
  EXPECT_EQ(serialize_params(ps), before);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  ModelParams ps;
  ps.add("w", {3}, {1.0, -2.0, 0.5});
  auto g = ps.get("w").grad_mut();
  ASSERT_EQ(g.size(), 3u);
  g[0] = 0.2;
  g[1] = -4.0;
  g[2] = 0.0;
  Adam opt(0.01, 0.9, 0.999, 1e-8);
  opt.step(ps);
  const auto w = ps.get("w").data();
  EXPECT_NEAR(w[0], 1.0 - 0.01 * 0.2 / (0.2 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(w[2], 0.5);
}

TEST(Adam, SkipsNonTrainable) {
  ModelParams ps;
  ps.add("x.running_mean", {1}, {3.0}, false);
  ps.get("x.running_mean").grad_mut()[0] = 1.0;
  Adam opt(0.1, 0.9, 0.999, 1e-8);
  opt.step(ps);
  EXPECT_EQ(ps.get("x.running_mean")[0], 3.0);
}

TEST(ClipGradNorm, ScalesToMax) {
  ModelParams ps;
  ps.add("a", {2}, {0.0, 0.0});
  auto g = ps.get("a").grad_mut();
  g[0] = 3.0;
  g[1] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(ps.get("a").grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(ps.get("a").grad()[1], 0.8, 1e-15);
}

TEST(Checkpoint, HeaderBytes) {
  ModelParams ps;
  ps.add("ab", {2}, {1.0, -0.5});
  const auto bytes = serialize_params(ps);
  const std::vector<std::uint8_t> want{'S', 'I', 'G', 'A', 0x01, 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 2, 0, 0, 0,
                                       0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xbf};
  EXPECT_EQ(bytes, want);
}

TEST(Checkpoint, RoundTripAt32Bit) {
  TrainConfig cfg;
  cfg.seed = 9;
  const ModelParams ps = init_model(cfg);
  const fs::path p = fs::temp_directory_path() / "siga_test_ckpt.bin";
  save_checkpoint(ps, p);
  const ModelParams back = load_checkpoint(p);
  ASSERT_EQ(back.entries().size(), ps.entries().size());
  for (std::size_t k = 0; k < ps.entries().size(); ++k) {
    const auto& a = ps.entries()[k];
    const auto& b = back.entries()[k];
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(a.value.shape(), b.value.shape());
    EXPECT_EQ(a.trainable, b.trainable) << a.name;
    for (std::size_t i = 0; i < a.value.numel(); ++i) {
      ASSERT_EQ(static_cast<float>(a.value[i]), b.value[i]) << a.name;
    }
  }
  EXPECT_EQ(serialize_params(back), serialize_params(ps));
  EXPECT_EQ(read_meta(back).geometry, cfg.geometry);
}

TEST(Checkpoint, TruncationAndCorruption) {
  ModelParams ps;
  ps.add("w", {2, 2}, {1, 2, 3, 4});
  const auto bytes = serialize_params(ps);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(deserialize_params(part), FormatError) << cut;
  }
  auto bad = bytes;
  bad[0] = 'X';
  try {
    (void)deserialize_params(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  bad = bytes;
  bad[4] = 0x02;
  try {
    (void)deserialize_params(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(deserialize_params(bad), FormatError);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "siga_no_such_ckpt.bin"), Error);
}

TEST(Config, ParseAndFormatRoundTrip) {
  const TrainConfig cfg = parse_train_config("# comment\nlr = 0.002\nsteps = 40\nenable_acfm = false\nseed = 12\n\nw_seg = 0.5\n");
  EXPECT_EQ(cfg.lr, 0.002);
  EXPECT_EQ(cfg.steps, 40u);
  EXPECT_FALSE(cfg.switches.enable_acfm);
  EXPECT_EQ(cfg.seed, 12u);
  EXPECT_EQ(cfg.w_seg, 0.5);
  const TrainConfig back = parse_train_config(format_train_config(cfg));
  EXPECT_EQ(format_train_config(back), format_train_config(cfg));
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_train_config("learning_rate = 1\n"), ConfigError);
  EXPECT_THROW(parse_train_config("delta = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_train_config("w_ins = -1\n"), ConfigError);
  EXPECT_THROW(parse_train_config("decode_steps = 12\n"), ConfigError);
  EXPECT_THROW(parse_train_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_train_config("just words\n"), ConfigError);
}

TEST(Metrics, FormatParseRoundTrip) {
  MetricsRecord r;
  r.step = 250;
  r.loss = {4.5, 3.0, 0.25, 0.75, 0.5, 0, 0, 0, 0};
  r.acc = 0.125;
  r.theta = 0.3125;
  const std::string text = "# adam lr=0.001 constant step size\n" + metrics_header() + "\n" + format_metrics(r) + "\n";
  EXPECT_EQ(metrics_header(), "step\tloss_total\tloss_rec\tloss_ins\tloss_seq\tloss_seg\tacc\ttheta");
  const auto back = parse_metrics(text);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].step, 250u);
  EXPECT_EQ(back[0].loss.total, 4.5);
  EXPECT_EQ(back[0].loss.seg, 0.5);
  EXPECT_EQ(back[0].acc, 0.125);
  EXPECT_EQ(back[0].theta, 0.3125);
}

TEST(Train, SameSeedBitwiseIdentical) {
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 4;
  cfg.eval_every = 2;
  cfg.eval_samples = 8;
  cfg.seed = 3;
  data::SynthConfig sc;
  sc.noise_sigma = 0.05;
  const auto tr = data::generate_corpus(1, 16, sc), te = data::generate_corpus(2, 8, sc);
  std::ostringstream la, lb;
  const TrainResult a = train(tr, te, cfg, &la);
  const TrainResult b = train(tr, te, cfg, &lb);
  EXPECT_EQ(serialize_params(a.params), serialize_params(b.params));
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(parse_metrics(la.str()).size(), 2u);
  EXPECT_EQ(la.str().rfind("# adam lr=", 0), 0u);
  cfg.seed = 4;
  EXPECT_NE(serialize_params(train(tr, te, cfg).params), serialize_params(a.params));
}

TEST(Train, DivergenceReportsStep) {
  TrainConfig cfg = baseline_config();
  cfg.steps = 50;
  cfg.batch_size = 4;
  cfg.lr = 1e300;
  cfg.eval_every = 1000;
  const auto tr = data::generate_corpus(1, 8, {});
  try {
    (void)train(tr, {}, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_TRUE(std::isfinite(e.last_finite().total));
  }
}

TEST(Train, OverfitSixteenSamples) {
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch_size = 16;
  cfg.eval_every = 500;
  cfg.eval_samples = 16;
  cfg.lr = 3e-3;
  const auto tr = data::generate_corpus(40, 16, {});
  const TrainResult r = train(tr, tr, cfg);
  ModelParams ps = r.params;
  const EvalReport rep = evaluate(ps, tr);
  EXPECT_EQ(rep.accuracy, 1.0) << format_report(rep);
}

TEST(Evaluate, PureInference) {
  TrainConfig cfg;
  ModelParams ps = init_model(cfg);
  const auto te = data::generate_corpus(7, 10, {});
  const EvalReport rep = evaluate(ps, te, 4);
  EXPECT_EQ(rep.count, 10u);
  EXPECT_EQ(rep.kmeans_runs, 0u);
  EXPECT_EQ(rep.alignment_runs, 0u);
  EXPECT_EQ(rep.gpc_runs, 0u);
  std::size_t by_len = 0;
  for (const auto& [len, pair] : rep.by_length) by_len += pair.first;
  EXPECT_EQ(by_len, 10u);
  EXPECT_GT(rep.theta_chars, 0u);
}

TEST(Evaluate, GeometryMismatchIsConfigError) {
  ModelParams ps = init_model(TrainConfig{});
  data::SynthConfig sc;
  sc.height = 32;
  EXPECT_THROW(evaluate(ps, data::generate_corpus(1, 2, sc)), ConfigError);
}

TEST(Infer, DeterministicAndMapsOnRequest) {
  TrainConfig cfg = baseline_config();
  ModelParams ps = init_model(cfg);
  const auto s = data::generate_corpus(8, 3, {});
  const Tensor images = images_to_tensor(s, iota(3));
  const ModelMeta meta = read_meta(ps);
  const InferenceResult a = infer(images, ps, meta), b = infer(images, ps, meta);
  EXPECT_EQ(a.decode.predictions, b.decode.predictions);
  EXPECT_FALSE(a.pyramid.has_value());
  const InferenceResult m = infer(images, ps, meta, true);
  ASSERT_TRUE(m.pyramid.has_value());
  EXPECT_EQ(m.s_gam.shape(), (Shape{3, 9, 16, 64}));
  EXPECT_EQ(m.decode.predictions, a.decode.predictions);
}
