// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace siga {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major array of doubles. Copies are shallow: two Tensor handles
/// may refer to the same storage. Op outputs are never mutated after creation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return data().size(); }

  std::span<const double> data() const;
  /// Writable view of the storage. Intended for leaves (parameters, inputs);
  /// mutating a recorded intermediate invalidates its tape.
  std::span<double> data_mut();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  /// Empty span if no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  /// Same values in fresh storage, never on the tape.
  Tensor detach() const;
  /// Deep copy keeping requires_grad; the copy is a leaf.
  Tensor clone() const;

  const detail::NodePtr& node() const noexcept { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

/// Define-by-run record of differentiable ops on the current thread.
class Tape {
 public:
  using BackwardFn = std::function<void(detail::Node& out)>;

  struct Entry {
    detail::NodePtr out;
    std::vector<detail::NodePtr> inputs;
    BackwardFn backward;
  };

  void record(detail::NodePtr out, std::vector<detail::NodePtr> inputs, BackwardFn fn);
  void clear();
  std::size_t size() const noexcept { return entries_.size(); }
  void backward(const Tensor& loss);

 private:
  std::vector<Entry> entries_;
};

Tape& active_tape();
bool grad_mode_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs reverse-mode accumulation from a scalar loss over the active tape.
/// Leaf gradients accumulate; intermediate gradients are reset first so that
/// repeated calls on the same tape are reproducible.
void backward(const Tensor& loss);

}  // namespace siga
