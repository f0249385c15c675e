// SPDX-License-Identifier: Apache-2.0
// Command-line front end: gen, train, eval, viz, gradcheck.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "siga/alignment.hpp"
#include "siga/checkpoint.hpp"
#include "siga/counters.hpp"
#include "siga/errors.hpp"
#include "siga/glan.hpp"
#include "siga/gpc.hpp"
#include "siga/model.hpp"
#include "siga/ops.hpp"
#include "siga/oracles.hpp"
#include "siga/synth.hpp"
#include "siga/text_seg.hpp"
#include "siga/train.hpp"

namespace fs = std::filesystem;
using namespace siga;

namespace {

struct GenArgs {
  fs::path out;
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  int min_len = 1;
  int max_len = 7;
  double noise = 0.0;
  double invert_prob = 0.0;
  double min_contrast = 0.5;
};

struct TrainArgs {
  fs::path data, eval_data, config, out, metrics;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  bool no_js = false, no_acfm = false, no_align = false;
};

struct EvalArgs {
  fs::path data, ckpt, report, config;
};

struct VizArgs {
  fs::path ckpt, image, out, config;
};

int run_gen(const GenArgs& a) {
  data::SynthConfig cfg;
  cfg.min_len = a.min_len;
  cfg.max_len = a.max_len;
  cfg.noise_sigma = a.noise;
  cfg.invert_prob = a.invert_prob;
  cfg.min_contrast = a.min_contrast;
  data::validate(cfg);
  const auto samples = data::generate_corpus(a.seed, a.count, cfg);
  data::write_dataset(samples, a.out, a.seed, cfg);
  std::cout << "wrote " << samples.size() << " samples to " << a.out.string() << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.steps) cfg.steps = *a.steps;
  if (a.seed) cfg.seed = *a.seed;
  if (a.no_js) cfg.switches.enable_js = false;
  if (a.no_acfm) cfg.switches.enable_acfm = false;
  if (a.no_align) cfg.switches.enable_align = false;
  validate(cfg);

  const auto train_set = data::read_dataset(a.data);
  const auto eval_set = a.eval_data.empty() ? std::vector<data::Sample>{} : data::read_dataset(a.eval_data);
  const fs::path metrics_path = a.metrics.empty() ? fs::path(a.out.string() + ".metrics.tsv") : a.metrics;
  std::ofstream metrics(metrics_path);
  if (!metrics) throw Error("cannot open " + metrics_path.string());

  TrainHooks hooks;
  hooks.on_metrics = [](const MetricsRecord& r) {
    std::fprintf(stderr, "step %zu  loss %.4f  acc %.4f  theta %.4f\n", r.step, r.loss.total, r.acc,
                 r.theta);
  };
  TrainResult result = train(train_set, eval_set, cfg, &metrics, hooks);
  save_checkpoint(result.params, a.out);
  std::cout << "saved " << a.out.string() << " after " << result.steps << " steps\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  ModelParams ps = load_checkpoint(a.ckpt);
  if (!a.config.empty()) {
    const TrainConfig cfg = load_train_config(a.config);
    if (!(read_meta(ps).geometry == cfg.geometry)) {
      throw ConfigError("checkpoint geometry does not match " + a.config.string());
    }
  }
  const auto samples = data::read_dataset(a.data);
  counters().reset();
  const EvalReport rep = evaluate(ps, samples);
  const std::string text = format_report(rep);
  if (!a.report.empty()) {
    std::ofstream f(a.report);
    if (!f) throw Error("cannot open " + a.report.string());
    f << text;
  }
  std::cout << text;
  std::cout << "counters: " << counters().summary() << "\n";
  return 0;
}

Image plane(const Tensor& t, std::size_t offset, std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t i = 0; i < h * w; ++i) img.pixels[i] = std::clamp(t[offset + i], 0.0, 1.0);
  return img;
}

std::string indexed(const std::string& stem, std::size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu.pgm", stem.c_str(), k);
  return buf;
}

int run_viz(const VizArgs& a) {
  ModelParams ps = load_checkpoint(a.ckpt);
  const ModelMeta meta = read_meta(ps);
  const TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  const Image img = read_pgm(a.image);
  const std::size_t H = meta.geometry.height, W = meta.geometry.width, T = meta.geometry.decode_steps;
  if (img.height != H || img.width != W) {
    throw ConfigError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                      ", model expects " + std::to_string(H) + "x" + std::to_string(W));
  }
  fs::create_directories(a.out);

  Mask s_pl(H, W);
  try {
    s_pl = seg::kmeans_mask(img, cfg.kmeans_k, cfg.kmeans_iters).s_pl;
  } catch (const DegenerateImage&) {
    std::cerr << "constant image: S_pl left empty\n";
  }
  Image pl(H, W);
  for (std::size_t i = 0; i < H * W; ++i) pl.pixels[i] = s_pl.bits[i];
  write_pgm(pl, a.out / "s_pl.pgm");

  NoGradGuard guard;
  const InferenceResult r = infer(Tensor::from({1, 1, H, W}, img.pixels), ps, meta, true);
  const Tensor& s_m = r.pyramid->s_m;
  write_pgm(plane(s_m, 0, H, W), a.out / "s_m.pgm");

  const Tensor beta = align::interpolate_alpha(r.decode.trace.alpha, W);  // [1, T, W]
  constexpr std::size_t kStripRows = 4;
  Image strips(T * kStripRows, W);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < W; ++c) {
      const double v = align::squash(beta[t * W + c], cfg.mu, cfg.lambda);
      for (std::size_t k = 0; k < kStripRows; ++k) strips.at(t * kStripRows + k, c) = v;
    }
  }
  write_pgm(strips, a.out / "beta_strips.pgm");

  const std::size_t K = glan::glyph_channels(meta.geometry);
  const Tensor s_gt = gpc::build_glyph_pseudo_label(beta, s_m, cfg.delta, K);
  for (std::size_t k = 0; k < K; ++k) {
    write_pgm(plane(s_gt, k * H * W, H, W), a.out / indexed("s_gt", k));
    write_pgm(plane(r.s_gam, k * H * W, H, W), a.out / indexed("s_gam", k));
  }
  const std::string pred = attn::decode_strings(r.decode).front();
  std::ofstream(a.out / "prediction.txt") << pred << "\n";
  std::cout << "prediction: " << pred << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  int failures = 0;
  for (const OracleResult& r : run_gradient_oracles(seed)) {
    std::printf("%-22s max_rel_err=%.3e  tol=%.0e  %s\n", r.name.c_str(), r.max_rel_err,
                r.tolerance, r.passed() ? "ok" : "FAIL");
    failures += !r.passed();
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"siga: self-supervised implicit glyph attention (desk scale)"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--count", gen.count, "number of samples");
  g->add_option("--seed", gen.seed, "corpus seed");
  g->add_option("--min-len", gen.min_len, "shortest label");
  g->add_option("--max-len", gen.max_len, "longest label");
  g->add_option("--noise", gen.noise, "Gaussian noise sigma");
  g->add_option("--invert-prob", gen.invert_prob, "probability of dark text on light");
  g->add_option("--min-contrast", gen.min_contrast, "minimum text/background contrast");

  TrainArgs tr;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--data", tr.data, "training dataset directory")->required();
  t->add_option("--eval-data", tr.eval_data, "held-out dataset for the metrics log");
  t->add_option("--config", tr.config, "key = value config file");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--metrics", tr.metrics, "metrics log path (default <out>.metrics.tsv)");
  auto* steps_opt = t->add_option("--steps", steps, "optimizer steps");
  auto* seed_opt = t->add_option("--seed", seed, "model and batch-order seed");
  t->add_flag("--no-js", tr.no_js, "disable joint self-supervision");
  t->add_flag("--no-acfm", tr.no_acfm, "disable glyph-feature fusion");
  t->add_flag("--no-align", tr.no_align, "disable the alignment losses");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--report", ev.report, "report path");
  e->add_option("--config", ev.config, "config whose geometry must match the checkpoint");

  VizArgs vz;
  auto* v = app.add_subcommand("viz", "write mask and attention panels for one image");
  v->add_option("--ckpt", vz.ckpt, "checkpoint")->required();
  v->add_option("--image", vz.image, "PGM image")->required();
  v->add_option("--out", vz.out, "output directory")->required();
  v->add_option("--config", vz.config, "config for mu, lambda, delta");

  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference oracle suite");
  gc->add_option("--seed", gc_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return run_gen(gen);
    if (*t) {
      if (*steps_opt) tr.steps = steps;
      if (*seed_opt) tr.seed = seed;
      return run_train(tr);
    }
    if (*e) return run_eval(ev);
    if (*v) return run_viz(vz);
    if (*gc) return run_gradcheck(gc_seed);
  } catch (const TrainingDiverged& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
