// SPDX-License-Identifier: Apache-2.0
#include "siga/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "siga/errors.hpp"

namespace siga {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

detail::NodePtr make_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(siga::numel(shape), value);
  return Tensor(make_node(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_node({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) {
    throw ShapeError("dim " + std::to_string(i) + " out of range for " + to_string(s));
  }
  return s[i];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::data_mut() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ContractError("use of undefined tensor");
  if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::is_leaf() const { return node_ && node_->is_leaf; }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(make_node(shape(), node_->data, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_node(shape(), node_->data, node_->requires_grad));
}

void Tape::record(detail::NodePtr out, std::vector<detail::NodePtr> inputs, BackwardFn fn) {
  out->is_leaf = false;
  out->requires_grad = true;
  entries_.push_back(Entry{std::move(out), std::move(inputs), std::move(fn)});
}

void Tape::clear() { entries_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  const auto& root = loss.node();
  if (!root->requires_grad) throw ContractError("backward() on a loss that is not on the tape");

  for (auto& e : entries_) e.out->grad.clear();
  if (root->is_leaf) {
    root->ensure_grad();
    root->grad[0] += 1.0;
    return;
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    for (auto& in : it->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    it->backward(*it->out);
  }
}

Tape& active_tape() { return g_tape; }
bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) { active_tape().backward(loss); }

}  // namespace siga
