// SPDX-License-Identifier: Apache-2.0
#include "siga/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "siga/alignment.hpp"
#include "siga/counters.hpp"
#include "siga/errors.hpp"
#include "siga/vocab.hpp"

namespace siga {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ModelParams& ps) {
  std::vector<ModelParams::Entry>& entries = ps.entries();
  if (m_.empty()) {
    m_.resize(entries.size());
    v_.resize(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (!entries[k].trainable) continue;
      m_[k].assign(entries[k].value.numel(), 0.0);
      v_[k].assign(entries[k].value.numel(), 0.0);
    }
  } else if (m_.size() != entries.size()) {
    throw ContractError("Adam: parameter set changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!entries[k].trainable) continue;
    Tensor& p = entries[k].value;
    auto w = p.data_mut();
    const auto g = p.grad();
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

double clip_grad_norm(ModelParams& ps, double max_norm) {
  double sq = 0.0;
  for (auto& e : ps.entries()) {
    if (!e.trainable) continue;
    for (double g : e.value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& e : ps.entries()) {
      if (!e.trainable) continue;
      for (double& g : e.value.grad_mut()) g *= f;
    }
  }
  return norm;
}

EvalReport evaluate(ModelParams& ps, const std::vector<data::Sample>& samples,
                    std::size_t batch_size, std::size_t limit) {
  const ModelMeta meta = read_meta(ps);
  const std::size_t n = limit == 0 ? samples.size() : std::min(limit, samples.size());
  if (batch_size == 0) throw ContractError("evaluate: batch size must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    const Image& img = samples[i].image;
    if (img.height != meta.geometry.height || img.width != meta.geometry.width) {
      throw ConfigError("evaluate: image " + std::to_string(i) + " is " +
                        std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " but the model expects " + std::to_string(meta.geometry.height) + "x" +
                        std::to_string(meta.geometry.width));
    }
  }
  const std::uint64_t k0 = counters().kmeans, a0 = counters().alignment, g0 = counters().gpc;

  NoGradGuard guard;
  EvalReport r;
  double theta_sum = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const InferenceResult out = infer(images_to_tensor(samples, idx), ps, meta);
    const std::vector<std::string> pred = attn::decode_strings(out.decode);
    std::vector<std::vector<data::CharBox>> boxes;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const data::Sample& s = samples[idx[j]];
      const bool ok = vocab::normalize(pred[j]) == vocab::normalize(s.label);
      ++r.count;
      r.correct += ok;
      auto& row = r.by_length[s.label.size()];
      ++row.first;
      row.second += ok;
      r.predictions.push_back(pred[j]);
      boxes.push_back(s.char_boxes);
    }
    const align::ThetaSum th =
        align::theta_over_batch(out.decode.trace.alpha, meta.geometry.width, boxes);
    theta_sum += th.sum;
    r.theta_chars += th.count;
  }
  r.accuracy = r.count ? static_cast<double>(r.correct) / static_cast<double>(r.count) : 0.0;
  r.mean_theta = r.theta_chars ? theta_sum / static_cast<double>(r.theta_chars) : 0.0;
  r.kmeans_runs = counters().kmeans - k0;
  r.alignment_runs = counters().alignment - a0;
  r.gpc_runs = counters().gpc - g0;
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "samples = %zu\ncorrect = %zu\naccuracy = %.6f\n", r.count,
                r.correct, r.accuracy);
  os << buf;
  std::snprintf(buf, sizeof buf, "mean_theta = %.6f\ntheta_chars = %zu\n", r.mean_theta,
                r.theta_chars);
  os << buf;
  os << "kmeans_runs = " << r.kmeans_runs << "\nalignment_runs = " << r.alignment_runs
     << "\ngpc_runs = " << r.gpc_runs << "\n";
  os << "\nlength\tsamples\tcorrect\taccuracy\n";
  for (const auto& [len, row] : r.by_length) {
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%zu\t%.6f\n", len, row.first, row.second,
                  row.first ? static_cast<double>(row.second) / static_cast<double>(row.first)
                            : 0.0);
    os << buf;
  }
  return os.str();
}

std::string metrics_header() {
  return "step\tloss_total\tloss_rec\tloss_ins\tloss_seq\tloss_seg\tacc\ttheta";
}

std::string format_metrics(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.6f\t%.6f", r.step,
                r.loss.total, r.loss.rec, r.loss.ins, r.loss.seq, r.loss.seg, r.acc, r.theta);
  return buf;
}

std::vector<MetricsRecord> parse_metrics(const std::string& text) {
  std::vector<MetricsRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("step\t", 0) == 0) continue;
    std::istringstream ls(line);
    MetricsRecord r;
    if (!(ls >> r.step >> r.loss.total >> r.loss.rec >> r.loss.ins >> r.loss.seq >> r.loss.seg >>
          r.acc >> r.theta)) {
      throw ParseError("malformed metrics record", lineno);
    }
    out.push_back(r);
  }
  return out;
}

namespace {

std::string describe(const LossBreakdown& b) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "total=%.6g rec=%.6g ins=%.6g seq=%.6g seg=%.6g", b.total, b.rec,
                b.ins, b.seq, b.seg);
  return buf;
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.total) && std::isfinite(b.rec) && std::isfinite(b.ins) &&
         std::isfinite(b.seq) && std::isfinite(b.seg);
}

}  // namespace

TrainingDiverged::TrainingDiverged(std::size_t step, const LossBreakdown& last_finite)
    : NumericError("loss became non-finite at step " + std::to_string(step) +
                   "; last finite breakdown: " + describe(last_finite)),
      step_(step),
      last_(last_finite) {}

TrainResult train(const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& eval_set, const TrainConfig& cfg,
                  std::ostream* metrics_log, const TrainHooks& hooks) {
  validate(cfg);
  if (train_set.empty()) throw ContractError("train: empty training set");
  for (const data::Sample& s : train_set) {
    if (s.image.height != cfg.geometry.height || s.image.width != cfg.geometry.width) {
      throw ConfigError("train: dataset images are " + std::to_string(s.image.height) + "x" +
                        std::to_string(s.image.width) + ", config expects " +
                        std::to_string(cfg.geometry.height) + "x" +
                        std::to_string(cfg.geometry.width));
    }
  }
  TrainResult result{init_model(cfg), {}, {}, 0};
  ModelParams& ps = result.params;
  Adam opt(cfg);

  std::vector<std::optional<Mask>> pseudo;
  if (cfg.switches.enable_js) pseudo = cluster_pseudo_labels(train_set, cfg);

  if (metrics_log) {
    *metrics_log << "# adam lr=" << cfg.lr << " beta1=" << cfg.beta1 << " beta2=" << cfg.beta2
                 << " eps=" << cfg.adam_eps << " constant step size\n"
                 << metrics_header() << "\n";
  }

  const std::vector<data::Sample>& held = eval_set.empty() ? train_set : eval_set;
  Rng order_rng = Rng::for_index(cfg.seed, 1);
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  const std::size_t B = std::min(cfg.batch_size, train_set.size());
  LossBreakdown last_finite;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < B) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
          const std::size_t j = static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<int>(i - 1)));
          std::swap(order[i - 1], order[j]);
        }
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const Batch batch = make_batch(train_set, idx, cfg.switches.enable_js ? &pseudo : nullptr);

    ps.zero_grad();
    ForwardResult fr = total_loss(batch, ps, cfg, RunMode::train());
    if (!finite(fr.parts)) {
      active_tape().clear();
      throw TrainingDiverged(step, last_finite);
    }
    backward(fr.total);
    active_tape().clear();
    if (cfg.grad_clip > 0.0) clip_grad_norm(ps, cfg.grad_clip);
    opt.step(ps);
    last_finite = fr.parts;
    result.last = fr.parts;
    result.steps = step;
    if (hooks.on_step) hooks.on_step(step, fr.parts);

    if ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps) {
      const EvalReport rep = evaluate(ps, held, 64, cfg.eval_samples);
      MetricsRecord rec{step, fr.parts, rep.accuracy, rep.mean_theta};
      result.metrics.push_back(rec);
      if (metrics_log) *metrics_log << format_metrics(rec) << "\n" << std::flush;
      if (hooks.on_metrics) hooks.on_metrics(rec);
    }
  }
  return result;
}

}  // namespace siga
