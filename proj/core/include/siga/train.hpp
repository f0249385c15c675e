// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "siga/config.hpp"
#include "siga/errors.hpp"
#include "siga/model.hpp"
#include "siga/params.hpp"
#include "siga/synth.hpp"

namespace siga {

/// Adam with bias correction over the trainable entries of one ModelParams.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);
  explicit Adam(const TrainConfig& cfg) : Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) {}

  /// Parameters without a gradient buffer are treated as having zero gradient.
  void step(ModelParams& ps);
  std::uint64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Scales all trainable gradients so their global L2 norm is at most max_norm.
/// Returns the norm before scaling.
double clip_grad_norm(ModelParams& ps, double max_norm);

struct EvalReport {
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double mean_theta = 0.0;
  std::size_t theta_chars = 0;
  /// label length -> (samples, correct)
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> by_length;
  std::vector<std::string> predictions;
  /// Execution counter totals observed while evaluating.
  std::uint64_t kmeans_runs = 0;
  std::uint64_t alignment_runs = 0;
  std::uint64_t gpc_runs = 0;
};

/// Exact-match accuracy (case-insensitive alphanumeric), mean theta over
/// characters with boxes, and a per-length table. Inference mode only.
EvalReport evaluate(ModelParams& ps, const std::vector<data::Sample>& samples,
                    std::size_t batch_size = 64, std::size_t limit = 0);

std::string format_report(const EvalReport& r);

struct MetricsRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  double acc = 0.0;
  double theta = 0.0;
};

/// Column header line of the metrics log.
std::string metrics_header();
std::string format_metrics(const MetricsRecord& r);
/// Parses a metrics log, skipping `#` comments and the header.
std::vector<MetricsRecord> parse_metrics(const std::string& text);

struct TrainResult {
  ModelParams params;
  std::vector<MetricsRecord> metrics;
  LossBreakdown last;
  std::size_t steps = 0;
};

/// Raised when the objective stops being finite.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t step, const LossBreakdown& last_finite);
  std::size_t step() const noexcept { return step_; }
  const LossBreakdown& last_finite() const noexcept { return last_; }

 private:
  std::size_t step_;
  LossBreakdown last_;
};

struct TrainHooks {
  /// Receives every metrics record as it is produced.
  std::function<void(const MetricsRecord&)> on_metrics;
  /// Receives (step, breakdown) after each optimizer step.
  std::function<void(std::size_t, const LossBreakdown&)> on_step;
};

/// Mini-batch training with Adam. Batches are drawn from a seeded epoch
/// permutation of `train_set`. Metrics are computed every `eval_every` steps
/// and after the last step, on up to `eval_samples` items of `eval_set`
/// (or of `train_set` when eval_set is empty).
TrainResult train(const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& eval_set, const TrainConfig& cfg,
                  std::ostream* metrics_log = nullptr, const TrainHooks& hooks = {});

}  // namespace siga
