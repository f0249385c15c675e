// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "siga/alignment.hpp"
#include "siga/checkpoint.hpp"
#include "siga/counters.hpp"
#include "siga/glan.hpp"
#include "siga/gpc.hpp"
#include "siga/image.hpp"
#include "siga/ops.hpp"
#include "siga/oracles.hpp"
#include "siga/synth.hpp"
#include "siga/text_seg.hpp"
#include "siga/train.hpp"

namespace fs = std::filesystem;
using namespace siga;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  fs::path workdir = "acceptance_work";
  std::string cli;
  std::vector<int> only;
  std::size_t steps = 1000;
  std::size_t batch = 16;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(f, v[i]);
  return s;
}

class Report {
 public:
  explicit Report(const fs::path& file) : file_(file) {}

  void line(int id, bool ok, const std::string& what, const std::string& detail) {
    std::ostringstream s;
    s << (ok ? "PASS" : "FAIL") << " [" << id << "] " << what << ": " << detail;
    std::cout << s.str() << std::endl;
    file_ << s.str() << std::endl;
    all_ok_ = all_ok_ && ok;
  }

  void note(const std::string& text) {
    std::cout << "  " << text << std::endl;
    file_ << "  " << text << std::endl;
  }

  bool ok() const { return all_ok_; }

 private:
  std::ofstream file_;
  bool all_ok_ = true;
};

// Standard toy corpus: 2,000 train / 500 test, lengths 1-7, noise 0.05.
struct Corpus {
  std::vector<data::Sample> train, test;
};

Corpus standard_corpus() {
  data::SynthConfig sc;
  sc.noise_sigma = 0.05;
  return {data::generate_corpus(100, 2000, sc), data::generate_corpus(200, 500, sc)};
}

struct Run {
  std::string name;
  std::uint64_t seed = 0;
  double acc = 0.0, theta = 0.0, seconds = 0.0;
  ModelParams params;
};

Run train_and_eval(const std::string& name, const Switches& sw, std::uint64_t seed,
                   const Corpus& c, const Options& opt) {
  TrainConfig cfg;
  cfg.switches = sw;
  cfg.seed = seed;
  cfg.steps = opt.steps;
  cfg.batch_size = opt.batch;
  cfg.eval_every = opt.steps;  // one held-out evaluation, after the last step
  cfg.eval_samples = c.test.size();
  const auto t0 = Clock::now();
  TrainResult r = train(c.train, c.test, cfg);
  Run out;
  out.name = name;
  out.seed = seed;
  out.acc = r.metrics.back().acc;
  out.theta = r.metrics.back().theta;
  out.seconds = seconds_since(t0);
  out.params = std::move(r.params);
  std::cout << "  run " << name << " seed " << seed << ": acc " << fmt("%.4f", out.acc) << " theta "
            << fmt("%.4f", out.theta) << " (" << fmt("%.1f", out.seconds) << " s)" << std::endl;
  return out;
}

void criterion1(Report& rep) {
  const auto t0 = Clock::now();
  const auto results = run_gradient_oracles(0);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.max_rel_err >= worst) {
      worst = r.max_rel_err;
      worst_name = r.name;
    }
    if (!r.passed()) failed += " " + r.name;
  }
  const bool ok = failed.empty() && secs <= 60.0;
  rep.line(1, ok, "gradient oracles",
           std::to_string(results.size()) + " cases, worst " + fmt("%.3g", worst) + " (" + worst_name +
               ") <= 1e-4, " + fmt("%.1f", secs) + " s <= 60 s" + (failed.empty() ? "" : "; failed:" + failed));
}

void criterion2(Report& rep) {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  check(std::abs(align::squash(0.1, 70.0, 0.1) - 0.5) <= 1e-12, "squash(lambda)");
  check(std::abs(align::correlation(Tensor::from({3, 4}, {0.5, 0.5, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1})).item()) <= 1e-12,
        "S_cor disjoint");
  const std::vector<double> beta{0.0, 0.3, 0.3, 0.0};
  check(std::abs(align::theta_metric({1, 3}, beta) - 1.0) <= 1e-12, "theta(l,l)");
  check(std::abs(align::theta_metric({3, 4}, beta)) <= 1e-12, "theta disjoint");
  {
    const Tensor w = Tensor::from({3, 2, 2}, {0, 0, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0});
    const std::vector<std::size_t> l{2};
    check(glan::dice_loss(w, w, l).item() <= 1e-6, "dice perfect");
  }
  {
    Rng rng(0);
    std::vector<double> v(6 * 37);
    for (double& x : v) x = rng.uniform(-20.0, 20.0);
    const Tensor p = softmax(Tensor::from({6, 37}, v), 1);
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 37; ++k) s += p[r * 37 + k];
      check(std::abs(s - 1.0) <= 1e-10, "softmax row " + std::to_string(r));
    }
  }
  {
    const Tensor s_m = Tensor::from({1, 3}, {0.9, 0.8, 0.1});
    const Tensor b = Tensor::from({2, 3}, {0.06, 0.01, 0.0, 0.0, 0.2, 0.9});
    const Tensor s_gt = gpc::build_glyph_pseudo_label(b, s_m, 0.05);
    const std::vector<double> want{0.1, 0.2, 0.9, 0.9, 0.0, 0.0, 0.0, 0.8, 0.1};
    for (std::size_t i = 0; i < want.size(); ++i) check(std::abs(s_gt[i] - want[i]) <= 1e-12, "gpc example");
  }
  rep.line(2, bad.empty(), "formula identities",
           bad.empty() ? "squash, S_cor, theta, dice, softmax, glyph pseudo-label all within tolerance"
                       : "failed: " + bad.front());
}

void criterion3(Report& rep) {
  const std::size_t ours = glan::projection_weight_count(256, 27);
  const std::size_t grown = glan::projection_weight_count(256, 27);  // vocabulary does not enter
  const std::size_t dependent = glan::category_dependent_weight_count(256, 6763);
  Geometry g;
  ModelParams ps;
  Rng rng(0);
  glan::init_glan_params(ps, g, rng);
  const bool desk = ps.get("glan.proj.w").numel() == glan::projection_weight_count(g.c0, glan::glyph_channels(g));
  const bool ok = ours == 6912 && grown == ours && dependent == 1731328 && desk;
  rep.line(3, ok, "category-independent glyph head",
           "C*N_s = " + std::to_string(ours) + " at 37 and 6763 classes; category-dependent " +
               std::to_string(dependent) + "; desk head " + std::to_string(ps.get("glan.proj.w").numel()));
}

void criterion6(Report& rep) {
  data::SynthConfig clean;
  clean.invert_prob = 0.5;
  std::size_t exact = 0;
  const auto a = data::generate_corpus(600, 1000, clean);
  for (const auto& s : a) exact += iou(seg::kmeans_mask(s.image).s_pl, s.glyph_mask) == 1.0;
  data::SynthConfig noisy;
  noisy.noise_sigma = 0.05;
  std::size_t good = 0;
  const auto b = data::generate_corpus(601, 1000, noisy);
  for (const auto& s : b) good += iou(seg::kmeans_mask(s.image).s_pl, s.glyph_mask) >= 0.9;
  const bool ok = exact == a.size() && good >= 950;
  rep.line(6, ok, "self-supervision fidelity",
           "noiseless IoU=1 on " + std::to_string(exact) + "/1000; sigma=0.05 IoU>=0.9 on " +
               std::to_string(good) + "/1000 (need >=950)");
}

void criterion8(Report& rep, const fs::path& work) {
  std::vector<std::string> bad;
  data::SynthConfig sc;
  sc.noise_sigma = 0.05;
  const auto tr = data::generate_corpus(7, 64, sc), te = data::generate_corpus(8, 32, sc);
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 8;
  cfg.eval_every = 10;
  cfg.eval_samples = 32;
  cfg.seed = 11;
  std::ostringstream la, lb;
  const auto ra = train(tr, te, cfg, &la);
  const auto rb = train(tr, te, cfg, &lb);
  const auto bytes = serialize_params(ra.params);
  if (bytes != serialize_params(rb.params)) bad.push_back("checkpoints differ");
  if (la.str() != lb.str()) bad.push_back("metrics logs differ");

  const fs::path ckpt = work / "determinism.ckpt";
  save_checkpoint(ra.params, ckpt);
  if (serialize_params(load_checkpoint(ckpt)) != bytes) bad.push_back("checkpoint round trip");

  const fs::path ds = work / "roundtrip_data";
  fs::remove_all(ds);
  data::write_dataset(te, ds, 8, sc);
  const auto back = data::read_dataset(ds);
  bool same = back.size() == te.size();
  for (std::size_t i = 0; same && i < te.size(); ++i) {
    same = back[i].label == te[i].label && back[i].char_boxes == te[i].char_boxes &&
           back[i].glyph_mask == te[i].glyph_mask;
    for (std::size_t p = 0; same && p < te[i].image.pixels.size(); ++p) {
      same = back[i].image.pixels[p] == dequantize(quantize(te[i].image.pixels[p]));
    }
  }
  if (!same) bad.push_back("dataset round trip");
  rep.line(8, bad.empty(), "determinism and round trips",
           bad.empty() ? "same seed gives identical checkpoint (" + std::to_string(bytes.size()) +
                             " bytes) and metrics log; checkpoint and dataset round trips exact"
                       : bad.front());
}

void criterion4(Report& rep, const Corpus& c, const Options& opt, std::vector<Run>& js_runs,
                ModelParams* keep) {
  const Switches base{false, false, true, true, true};
  const Switches js{true, false, true, true, true};
  const Switches full{true, true, true, true, true};
  std::vector<double> a_base, a_js, a_full;
  double total = 0.0;
  for (std::uint64_t seed : opt.seeds) {
    Run b = train_and_eval("baseline", base, seed, c, opt);
    Run j = train_and_eval("js", js, seed, c, opt);
    Run f = train_and_eval("js+acfm", full, seed, c, opt);
    a_base.push_back(b.acc);
    a_js.push_back(j.acc);
    a_full.push_back(f.acc);
    total += b.seconds + j.seconds + f.seconds;
    if (keep && seed == opt.seeds.front()) *keep = f.params;
    js_runs.push_back(std::move(j));
  }
  const double mb = median(a_base), mj = median(a_js), mf = median(a_full);
  const bool ok = mj > mb && mf >= mj - 0.003 && total <= 1800.0;
  rep.line(4, ok, "structure ablation",
           "median acc baseline " + fmt("%.4f", mb) + " [" + join(a_base, "%.3f") + "], js " + fmt("%.4f", mj) +
               " [" + join(a_js, "%.3f") + "], js+acfm " + fmt("%.4f", mf) + " [" + join(a_full, "%.3f") +
               "]; need js > baseline and js+acfm >= js - 0.003; " + fmt("%.0f", total) +
               " s <= 1800 s (" + std::to_string(opt.steps) + " steps, batch " + std::to_string(opt.batch) + ")");
}

void criterion5(Report& rep, const Corpus& c, const Options& opt, std::vector<Run> js_runs) {
  const Switches none{true, false, false, true, true};
  const Switches cor{true, false, true, true, false};
  const Switches dif{true, false, true, false, true};
  std::vector<double> t_on, t_none, t_cor, t_dif;
  for (std::size_t i = 0; i < opt.seeds.size(); ++i) {
    const std::uint64_t seed = opt.seeds[i];
    if (i < js_runs.size()) {
      t_on.push_back(js_runs[i].theta);
    } else {
      t_on.push_back(train_and_eval("align", {true, false, true, true, true}, seed, c, opt).theta);
    }
    t_none.push_back(train_and_eval("no-align", none, seed, c, opt).theta);
    t_cor.push_back(train_and_eval("cor-only", cor, seed, c, opt).theta);
    t_dif.push_back(train_and_eval("dif-only", dif, seed, c, opt).theta);
  }
  const double on = median(t_on), off = median(t_none), mc = median(t_cor), md = median(t_dif);
  const bool ok = on >= off + 0.02 && mc >= off - 0.01 && md >= off - 0.01;
  rep.line(5, ok, "alignment ablation",
           "median theta align " + fmt("%.4f", on) + " [" + join(t_on, "%.3f") + "], none " + fmt("%.4f", off) +
               " [" + join(t_none, "%.3f") + "], cor-only " + fmt("%.4f", mc) + " [" + join(t_cor, "%.3f") +
               "], dif-only " + fmt("%.4f", md) + " [" + join(t_dif, "%.3f") +
               "]; need align >= none + 0.02 and each single term >= none - 0.01");
}

std::string capture(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  status = pclose(p);
  return out;
}

void criterion7(Report& rep, const Corpus& c, const Options& opt, const fs::path& work,
                ModelParams* trained) {
  ModelParams ps;
  if (trained && !trained->entries().empty()) {
    ps = *trained;
  } else {
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.batch_size = 8;
    cfg.eval_every = 10;
    cfg.eval_samples = 16;
    ps = train(c.train, {}, cfg).params;
  }
  const fs::path ckpt = work / "purity.ckpt";
  save_checkpoint(ps, ckpt);
  const fs::path data_dir = work / "purity_test";
  fs::remove_all(data_dir);
  const std::vector<data::Sample> test(c.test.begin(), c.test.begin() + 100);
  data::write_dataset(test, data_dir, 200);

  // In process: counters across evaluate().
  const auto rep_eval = evaluate(ps, test);
  bool ok = rep_eval.kmeans_runs == 0 && rep_eval.alignment_runs == 0 && rep_eval.gpc_runs == 0;
  std::string detail = "in-process kmeans/alignment/gpc = " + std::to_string(rep_eval.kmeans_runs) + "/" +
                       std::to_string(rep_eval.alignment_runs) + "/" + std::to_string(rep_eval.gpc_runs);

  if (!opt.cli.empty()) {
    int status = 0;
    const std::string out = capture("\"" + opt.cli + "\" eval --data \"" + data_dir.string() + "\" --ckpt \"" +
                                        ckpt.string() + "\" --report \"" + (work / "purity_report.txt").string() + "\"",
                                    status);
    const auto pos = out.find("counters: ");
    const std::string line = pos == std::string::npos ? "" : out.substr(pos, out.find('\n', pos) - pos);
    const bool cli_ok = status == 0 && line.find("kmeans=0") != std::string::npos &&
                        line.find("alignment=0") != std::string::npos && line.find("gpc=0") != std::string::npos;
    ok = ok && cli_ok;
    detail += "; siga eval " + (line.empty() ? std::string("printed no counters") : line);
  } else {
    detail += "; CLI not given";
    ok = false;
  }
  rep.line(7, ok, "inference purity", detail);
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"SIGA acceptance criteria"};
  app.add_option("--workdir", opt.workdir, "scratch directory");
  app.add_option("--cli", opt.cli, "path to the siga executable");
  app.add_option("--only", opt.only, "criteria to run (default all)");
  app.add_option("--steps", opt.steps, "training steps per ablation run");
  app.add_option("--batch", opt.batch, "batch size for ablation runs");
  app.add_option("--seeds", opt.seeds, "ablation seeds");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(opt.workdir);
  Report rep(opt.workdir / "acceptance_report.txt");
  const std::set<int> only(opt.only.begin(), opt.only.end());
  auto want = [&](int id) { return only.empty() || only.count(id); };

  try {
    if (want(1)) criterion1(rep);
    if (want(2)) criterion2(rep);
    if (want(3)) criterion3(rep);
    if (want(6)) criterion6(rep);
    if (want(8)) criterion8(rep, opt.workdir);
    if (want(4) || want(5) || want(7)) {
      const Corpus c = standard_corpus();
      std::vector<Run> js_runs;
      ModelParams trained;
      if (want(4)) criterion4(rep, c, opt, js_runs, &trained);
      if (want(5)) criterion5(rep, c, opt, js_runs);
      if (want(7)) criterion7(rep, c, opt, opt.workdir, &trained);
    }
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << "\n";
    return 2;
  }
  return rep.ok() ? 0 : 1;
}
