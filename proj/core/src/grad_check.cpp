// SPDX-License-Identifier: Apache-2.0
#include "siga/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "siga/errors.hpp"

namespace siga {

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

void check_step(double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw ContractError("grad_check: step must lie in [1e-7, 1e-3]");
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  check_step(h);
  Tensor work = x.detach();
  work.set_requires_grad(true);
  return grad_check_params([&] { return f(work); }, std::span<Tensor>(&work, 1), h);
}

double grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params, double h,
                         std::size_t max_coords_per_tensor, Rng* rng) {
  check_step(h);
  Tape& tape = active_tape();
  tape.clear();
  for (Tensor& p : params) p.zero_grad();
  const Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite function value");
  std::vector<std::vector<double>> analytic;
  if (y.requires_grad()) {
    backward(y);
    for (Tensor& p : params) {
      auto g = p.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(p.numel(), 0.0);
    }
  } else {
    for (Tensor& p : params) analytic.emplace_back(p.numel(), 0.0);
  }
  tape.clear();

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_tensor && coords.size() > max_coords_per_tensor) {
      if (!rng) throw ContractError("grad_check_params: sampling requires an rng");
      // Partial Fisher-Yates with our own generator keeps the subset reproducible.
      for (std::size_t i = 0; i < max_coords_per_tensor; ++i) {
        const int j = rng->uniform_int(static_cast<int>(i), static_cast<int>(coords.size() - 1));
        std::swap(coords[i], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(max_coords_per_tensor);
    }
    auto data = p.data_mut();
    for (std::size_t c : coords) {
      const double orig = data[c];
      data[c] = orig + h;
      const double fp = eval_scalar(f);
      data[c] = orig - h;
      const double fm = eval_scalar(f);
      data[c] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[t][c], numeric));
    }
  }
  return worst;
}

}  // namespace siga
