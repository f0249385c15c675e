// SPDX-License-Identifier: Apache-2.0
#include "siga/params.hpp"

#include <cmath>

#include "siga/errors.hpp"

namespace siga {

Tensor& ModelParams::add(const std::string& name, Shape shape, std::vector<double> values,
                         bool trainable) {
  if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, Tensor::from(std::move(shape), std::move(values), trainable), trainable});
  return entries_.back().value;
}

Tensor& ModelParams::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return entries_[it->second].value;
}

const Tensor& ModelParams::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return entries_[it->second].value;
}

bool ModelParams::contains(const std::string& name) const { return index_.count(name) != 0; }

bool ModelParams::has_prefix(const std::string& prefix) const {
  for (const auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) == 0) return true;
  }
  return false;
}

std::vector<Tensor> ModelParams::trainable() {
  std::vector<Tensor> out;
  for (auto& e : entries_) {
    if (e.trainable) out.push_back(e.value);
  }
  return out;
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.numel();
  }
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

namespace layers {

namespace {

std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace

void init_conv3x3(ModelParams& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                  Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
  ps.add(prefix + ".w", {cout, cin, 3, 3}, uniform_values(cout * cin * 9, bound, rng));
  ps.add(prefix + ".b", {cout}, std::vector<double>(cout, 0.0));
}

void init_conv1x1(ModelParams& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                  Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cin + cout));
  ps.add(prefix + ".w", {cout, cin}, uniform_values(cout * cin, bound, rng));
  ps.add(prefix + ".b", {cout}, std::vector<double>(cout, 0.0));
}

void init_norm(ModelParams& ps, const std::string& prefix, std::size_t channels) {
  ps.add(prefix + ".gamma", {channels}, std::vector<double>(channels, 1.0));
  ps.add(prefix + ".beta", {channels}, std::vector<double>(channels, 0.0));
  ps.add(prefix + ".running_mean", {channels}, std::vector<double>(channels, 0.0), false);
  ps.add(prefix + ".running_var", {channels}, std::vector<double>(channels, 1.0), false);
}

void init_conv_block(ModelParams& ps, const std::string& prefix, std::size_t cin,
                     std::size_t cout, Rng& rng) {
  init_conv3x3(ps, prefix + ".conv", cin, cout, rng);
  init_norm(ps, prefix + ".norm", cout);
}

void init_linear(ModelParams& ps, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  ps.add(prefix + ".w", {in, out}, uniform_values(in * out, bound, rng));
  ps.add(prefix + ".b", {out}, std::vector<double>(out, 0.0));
}

Tensor norm(ModelParams& ps, const std::string& prefix, const Tensor& x, const RunMode& mode) {
  Tensor& rmean = ps.get(prefix + ".running_mean");
  Tensor& rvar = ps.get(prefix + ".running_var");
  const Tensor& gamma = ps.get(prefix + ".gamma");
  const Tensor& beta = ps.get(prefix + ".beta");
  if (!mode.training) {
    ChannelStats fixed{{rmean.data().begin(), rmean.data().end()},
                       {rvar.data().begin(), rvar.data().end()}};
    return channel_standardize(x, gamma, beta, kNormEps, &fixed, nullptr);
  }
  ChannelStats observed;
  Tensor y = channel_standardize(x, gamma, beta, kNormEps, nullptr, &observed);
  if (mode.update_stats) {
    auto m = rmean.data_mut();
    auto v = rvar.data_mut();
    for (std::size_t c = 0; c < m.size(); ++c) {
      m[c] = (1.0 - mode.momentum) * m[c] + mode.momentum * observed.mean[c];
      v[c] = (1.0 - mode.momentum) * v[c] + mode.momentum * observed.var[c];
    }
  }
  return y;
}

Tensor conv_block(ModelParams& ps, const std::string& prefix, const Tensor& x,
                  const RunMode& mode) {
  const Tensor c = conv2d(x, ps.get(prefix + ".conv.w"), ps.get(prefix + ".conv.b"));
  return relu(norm(ps, prefix + ".norm", c, mode));
}

Tensor conv1x1(ModelParams& ps, const std::string& prefix, const Tensor& x) {
  return conv2d_1x1(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"));
}

Tensor linear(ModelParams& ps, const std::string& prefix, const Tensor& x) {
  const Tensor y = matmul(x, ps.get(prefix + ".w"));
  return add(y, broadcast_to(ps.get(prefix + ".b"), y.shape()));
}

}  // namespace layers

}  // namespace siga
