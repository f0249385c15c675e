// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "siga/ops.hpp"
#include "siga/rng.hpp"
#include "siga/tensor.hpp"

namespace siga {

/// Named parameter and buffer tensors, kept in insertion order so that
/// iteration (optimizer updates, serialization) is deterministic.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  static constexpr std::uint8_t kVersion = 1;

  /// Throws ContractError if `name` already exists.
  Tensor& add(const std::string& name, Shape shape, std::vector<double> values,
              bool trainable = true);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> trainable();
  std::size_t trainable_count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Train vs. eval behaviour of the standardization layers.
struct RunMode {
  bool training = true;
  /// Fold batch statistics into the running buffers (training only).
  bool update_stats = true;
  double momentum = 0.1;

  static RunMode train() { return {}; }
  static RunMode eval() { return {false, false, 0.1}; }
  /// Training-mode statistics without touching the running buffers.
  static RunMode frozen_train() { return {true, false, 0.1}; }
};

inline constexpr double kNormEps = 1e-5;

namespace layers {

/// 3x3 conv weights (He-uniform) and zero bias under `<prefix>.w` / `<prefix>.b`.
void init_conv3x3(ModelParams& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                  Rng& rng);
void init_conv1x1(ModelParams& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                  Rng& rng);
/// Scale/shift plus running mean/var buffers.
void init_norm(ModelParams& ps, const std::string& prefix, std::size_t channels);
/// Conv + standardization + ReLU block: `<prefix>.conv`, `<prefix>.norm`.
void init_conv_block(ModelParams& ps, const std::string& prefix, std::size_t cin,
                     std::size_t cout, Rng& rng);
/// Weight [in, out] (Xavier-uniform) and bias [out].
void init_linear(ModelParams& ps, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng);

Tensor norm(ModelParams& ps, const std::string& prefix, const Tensor& x, const RunMode& mode);
Tensor conv_block(ModelParams& ps, const std::string& prefix, const Tensor& x,
                  const RunMode& mode);
Tensor conv1x1(ModelParams& ps, const std::string& prefix, const Tensor& x);
/// x: [R, in] -> [R, out].
Tensor linear(ModelParams& ps, const std::string& prefix, const Tensor& x);

}  // namespace layers

}  // namespace siga
