// SPDX-License-Identifier: Apache-2.0
#include "siga/oracles.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "siga/alignment.hpp"
#include "siga/attn_decoder.hpp"
#include "siga/glan.hpp"
#include "siga/gpc.hpp"
#include "siga/grad_check.hpp"
#include "siga/model.hpp"
#include "siga/ops.hpp"
#include "siga/text_seg.hpp"

namespace siga {

namespace {

constexpr double kStep = 1e-5;
constexpr std::size_t kCoordsPerTensor = 3;

// Values in [-2, 2], optionally kept at least `gap` away from each point in `avoid`.
Tensor random_leaf(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0,
                   std::vector<double> avoid = {}, double gap = 0.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    bool ok = false;
    while (!ok) {
      x = rng.uniform(lo, hi);
      ok = true;
      for (double a : avoid) ok = ok && std::abs(x - a) >= gap;
    }
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Away from zero with a random sign, for divisors.
Tensor random_nonzero(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(0.5, 2.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed) {}

  void add(const std::string& name, const std::function<double(Rng&)>& body) {
    Rng rng = Rng::for_index(seed_, results_.size());
    const auto t0 = std::chrono::steady_clock::now();
    OracleResult r;
    r.name = name;
    r.max_rel_err = body(rng);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results_.push_back(r);
  }

  // d/d(inputs) of a random projection of op(inputs).
  void op(const std::string& name, std::vector<Tensor> inputs,
          const std::function<Tensor(const std::vector<Tensor>&)>& fn) {
    add(name, [inputs, fn](Rng& rng) mutable {
      std::vector<double> w;
      const Tensor probe = [&] {
        NoGradGuard g;
        return fn(inputs);
      }();
      w.resize(probe.numel());
      for (double& x : w) x = rng.uniform(-1.0, 1.0);
      const Tensor weights = Tensor::from(probe.shape(), w);
      return grad_check_params([&] { return sum_all(mul(fn(inputs), weights)); }, inputs, kStep);
    });
  }

  std::vector<OracleResult> take() { return std::move(results_); }

 private:
  std::uint64_t seed_;
  std::vector<OracleResult> results_;
};

std::vector<Tensor> params_with_prefix(ModelParams& ps, const std::vector<std::string>& prefixes) {
  std::vector<Tensor> out;
  for (auto& e : ps.entries()) {
    if (!e.trainable) continue;
    for (const std::string& p : prefixes) {
      if (e.name.rfind(p, 0) == 0) {
        out.push_back(e.value);
        break;
      }
    }
  }
  return out;
}

std::vector<data::Sample> toy_batch(std::uint64_t seed, int min_len, int max_len) {
  data::SynthConfig sc;
  sc.min_len = min_len;
  sc.max_len = max_len;
  sc.noise_sigma = 0.05;
  return data::generate_corpus(seed, 2, sc);
}

}  // namespace

std::vector<OracleResult> run_gradient_oracles(std::uint64_t seed) {
  Suite s(seed);
  Rng in = Rng::for_index(seed, 1000);

  auto one = [](auto f) {
    return [f](const std::vector<Tensor>& x) { return f(x[0]); };
  };
  auto two = [](auto f) {
    return [f](const std::vector<Tensor>& x) { return f(x[0], x[1]); };
  };

  // Generic ops.
  s.op("add", {random_leaf(in, {2, 3, 4}), random_leaf(in, {2, 3, 4})}, two(add));
  s.op("sub", {random_leaf(in, {2, 3, 4}), random_leaf(in, {2, 3, 4})}, two(sub));
  s.op("mul", {random_leaf(in, {2, 3, 4}), random_leaf(in, {2, 3, 4})}, two(mul));
  s.op("div", {random_leaf(in, {2, 3, 4}), random_nonzero(in, {2, 3, 4})}, two(div));
  s.op("matmul", {random_leaf(in, {3, 4}), random_leaf(in, {4, 5})}, two(matmul));
  s.op("matmul_batched", {random_leaf(in, {2, 3, 4}), random_leaf(in, {2, 4, 5})}, two(matmul));
  s.op("matmul_shared", {random_leaf(in, {2, 3, 4}), random_leaf(in, {4, 5})}, two(matmul));
  s.op("conv2d", {random_leaf(in, {2, 3, 5, 6}), random_leaf(in, {4, 3, 3, 3}), random_leaf(in, {4})},
       [](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], x[2]); });
  s.op("conv2d_1x1", {random_leaf(in, {2, 3, 4, 5}), random_leaf(in, {4, 3}), random_leaf(in, {4})},
       [](const std::vector<Tensor>& x) { return conv2d_1x1(x[0], x[1], x[2]); });
  s.op("relu", {random_leaf(in, {2, 3, 4}, -2.0, 2.0, {0.0}, 0.1)}, one(relu));
  s.op("tanh", {random_leaf(in, {2, 3, 4})}, one([](const Tensor& x) { return tanh(x); }));
  s.op("sigmoid", {random_leaf(in, {2, 3, 4})}, one(sigmoid));
  s.op("exp", {random_leaf(in, {2, 3, 4})}, one([](const Tensor& x) { return exp(x); }));
  s.op("log", {random_leaf(in, {2, 3, 4}, 0.1, 2.0)}, one([](const Tensor& x) { return log(x); }));
  s.op("softmax", {random_leaf(in, {2, 3, 4})}, one([](const Tensor& x) { return softmax(x, 1); }));
  s.op("log_softmax", {random_leaf(in, {2, 3, 4})},
       one([](const Tensor& x) { return log_softmax(x, 2); }));
  s.op("sum", {random_leaf(in, {2, 3, 4})}, one([](const Tensor& x) { return sum(x, 2); }));
  s.op("mean", {random_leaf(in, {2, 3, 4})}, one([](const Tensor& x) { return mean(x, 1); }));
  s.op("concat", {random_leaf(in, {2, 3, 4}), random_leaf(in, {2, 2, 4})},
       [](const std::vector<Tensor>& x) { return concat(x, 1); });
  s.op("upsample_nearest_2x", {random_leaf(in, {2, 3, 2, 3})}, one(upsample_nearest_2x));
  s.op("avg_pool", {random_leaf(in, {2, 3, 4, 6})},
       one([](const Tensor& x) { return avg_pool(x, 2, 1); }));
  s.op("slice", {random_leaf(in, {2, 5, 3})}, one([](const Tensor& x) { return slice(x, 1, 1, 4); }));
  s.op("broadcast", {random_leaf(in, {3, 1})},
       one([](const Tensor& x) { return broadcast_to(x, {2, 3, 4}); }));
  s.op("reshape_permute", {random_leaf(in, {2, 3, 4})},
       one([](const Tensor& x) { return permute(reshape(x, {6, 4}), {1, 0}); }));
  s.op("linear_interp_1d", {random_leaf(in, {2, 3, 5})},
       one([](const Tensor& x) { return linear_interp_1d(x, 9); }));
  s.op("clamp", {random_leaf(in, {2, 3, 4}, -2.0, 2.0, {-1.0, 1.0}, 0.05)},
       one([](const Tensor& x) { return clamp(x, -1.0, 1.0); }));
  s.op("embedding_lookup", {random_leaf(in, {6, 4})}, one([](const Tensor& t) {
         const std::vector<int> idx{0, 3, 3, 5};
         return embedding_lookup(t, idx);
       }));
  s.op("gather_last", {random_leaf(in, {2, 3, 4})}, one([](const Tensor& x) {
         const std::vector<int> idx{0, 3, 1, 2, 2, 0};
         return gather_last(x, idx);
       }));
  s.op("channel_standardize",
       {random_leaf(in, {2, 3, 2, 3}), random_leaf(in, {3}), random_leaf(in, {3})},
       [](const std::vector<Tensor>& x) { return channel_standardize(x[0], x[1], x[2], kNormEps); });

  // Loss terms.
  const Geometry g;
  TrainConfig cfg;
  const std::size_t B = 2, H = g.height, W = g.width, N = g.seq_len, L = 3;

  s.add("L_ins", [&](Rng& rng) {
    ModelParams ps;
    seg::init_pyramid_params(ps, g, rng);
    std::vector<Tensor> leaves{random_leaf(rng, {B, g.c0, H, W}, 0.0, 1.0),
                               random_leaf(rng, {B, g.c1, H / 2, W / 2}, 0.0, 1.0),
                               random_leaf(rng, {B, g.c2, H / 4, W / 4}, 0.0, 1.0)};
    std::vector<double> pl(B * H * W);
    for (double& v : pl) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    const Tensor s_pl = Tensor::from({B, H, W}, pl);
    auto f = [&] {
      const auto out = seg::pyramid_forward(leaves[0], leaves[1], leaves[2], ps, RunMode::frozen_train());
      return seg::seg_loss(out.s_m, s_pl);
    };
    std::vector<Tensor> all = ps.trainable();
    const double e1 = grad_check_params(f, all, kStep, kCoordsPerTensor, &rng);
    const double e2 = grad_check_params(f, leaves, kStep, 20, &rng);
    return std::max(e1, e2);
  });

  auto alpha_of = [&](const Tensor& logits) { return softmax(logits, 1); };
  auto mask_of = [&](const Tensor& pre) { return sigmoid(pre); };

  s.add("L_cor", [&](Rng& rng) {
    std::vector<Tensor> z{random_leaf(rng, {L, N})};
    return grad_check_params([&] { return align::correlation(alpha_of(z[0])); }, z, kStep);
  });

  auto alignment_case = [&](Rng& rng, bool cor, bool dif) {
    std::vector<Tensor> z{random_leaf(rng, {L, N}, -3.0, 3.0), random_leaf(rng, {H, W}, -3.0, 3.0)};
    align::AlignmentOptions opt{cfg.mu, cfg.lambda, cor, dif};
    auto f = [&] {
      const Tensor alpha = alpha_of(z[0]);
      const auto l = align::alignment_loss(alpha, align::interpolate_alpha(alpha, W), mask_of(z[1]), opt);
      return cor && dif ? l.l_seq : (cor ? l.l_cor : l.l_dif);
    };
    return grad_check_params(f, z, kStep);
  };
  s.add("L_dif", [&](Rng& rng) { return alignment_case(rng, false, true); });
  s.add("L_seq", [&](Rng& rng) { return alignment_case(rng, true, true); });

  const std::size_t K = glan::glyph_channels(g);
  auto random_targets = [&](Rng& rng, Tensor& s_m, Tensor& s_gt) {
    NoGradGuard guard;
    s_m = sigmoid(random_leaf(rng, {B, H, W}, -3.0, 3.0).detach());
    std::vector<double> beta(B * g.decode_steps * W);
    for (double& v : beta) v = rng.uniform(0.0, 0.1);
    s_gt = gpc::build_glyph_pseudo_label(Tensor::from({B, g.decode_steps, W}, beta), s_m,
                                         cfg.delta, K);
  };
  const std::vector<std::size_t> lengths{3, 5};

  s.add("L_dice", [&](Rng& rng) {
    Tensor s_m, s_gt;
    random_targets(rng, s_m, s_gt);
    std::vector<Tensor> z{random_leaf(rng, {B, K, H, W})};
    return grad_check_params([&] { return glan::dice_loss(softmax(z[0], 1), s_gt, lengths); }, z,
                             kStep, 200, &rng);
  });
  s.add("L_cel", [&](Rng& rng) {
    Tensor s_m, s_gt;
    random_targets(rng, s_m, s_gt);
    std::vector<Tensor> z{random_leaf(rng, {B, K, H, W})};
    return grad_check_params([&] { return glan::union_ce_loss(softmax(z[0], 1), s_m); }, z, kStep,
                             200, &rng);
  });
  s.add("L_seg", [&](Rng& rng) {
    Tensor s_m, s_gt;
    random_targets(rng, s_m, s_gt);
    ModelParams ps;
    glan::init_glan_params(ps, g, rng);
    std::vector<Tensor> o0{random_leaf(rng, {B, g.c0, H, W}, 0.0, 1.0)};
    auto f = [&] {
      const Tensor s_gam = glan::glyph_head_forward(o0[0], ps, RunMode::frozen_train());
      return glan::glan_loss(s_gam, s_gt, s_m, lengths).total;
    };
    std::vector<Tensor> head = params_with_prefix(ps, {"glan.a", "glan.b", "glan.proj"});
    return std::max(grad_check_params(f, head, kStep, kCoordsPerTensor, &rng),
                    grad_check_params(f, o0, kStep, 20, &rng));
  });
  s.add("glyph_pool", [&](Rng& rng) {
    ModelParams ps;
    glan::init_glan_params(ps, g, rng);
    std::vector<Tensor> leaves{random_leaf(rng, {B, g.c0, H, W}, 0.0, 1.0),
                               random_leaf(rng, {B, K, H, W})};
    const Tensor w = Tensor::from({B, K - 1, g.c0}, std::vector<double>(B * (K - 1) * g.c0, 0.5));
    auto f = [&] {
      return sum_all(mul(glan::pool_glyph_features(leaves[0], softmax(leaves[1], 1), ps,
                                                   RunMode::frozen_train()),
                         w));
    };
    std::vector<Tensor> feat = params_with_prefix(ps, {"glan.feat"});
    return std::max(grad_check_params(f, feat, kStep, kCoordsPerTensor, &rng),
                    grad_check_params(f, leaves, kStep, 20, &rng));
  });

  s.add("L_rec", [&](Rng& rng) {
    TrainConfig c = cfg;
    c.seed = rng.next_u64();
    c.switches = {false, false, false, false, false};
    ModelParams ps = init_model(c);
    const auto samples = toy_batch(c.seed, 3, 3);
    const std::vector<std::size_t> idx{0, 1};
    const Batch batch = make_batch(samples, idx);
    auto f = [&] { return total_loss(batch, ps, c, RunMode::frozen_train()).l_rec; };
    std::vector<Tensor> p = params_with_prefix(ps, {"enc.", "att.", "emb.", "gru.", "cls."});
    return grad_check_params(f, p, kStep, kCoordsPerTensor, &rng);
  });

  s.add("total", [&](Rng& rng) {
    TrainConfig c = cfg;
    c.seed = rng.next_u64();
    ModelParams ps = init_model(c);
    const auto samples = toy_batch(c.seed, 1, 7);
    const auto pseudo = cluster_pseudo_labels(samples, c);
    const std::vector<std::size_t> idx{0, 1};
    const Batch batch = make_batch(samples, idx, &pseudo);
    FrozenTargets frozen;
    {
      const ForwardResult base = total_loss(batch, ps, c, RunMode::frozen_train());
      frozen.s_gt = base.s_gt.detach();
      frozen.rho = base.pyramid->s_m.detach();
      active_tape().clear();
    }
    auto f = [&] { return total_loss(batch, ps, c, RunMode::frozen_train(), &frozen).total; };
    std::vector<Tensor> p = ps.trainable();
    return grad_check_params(f, p, kStep, kCoordsPerTensor, &rng);
  });

  return s.take();
}

}  // namespace siga
