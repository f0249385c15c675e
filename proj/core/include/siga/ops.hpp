// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "siga/tensor.hpp"

namespace siga {

// Elementwise binary ops require identical shapes; use broadcast_to first.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

/// a * x + b with constant a, b.
Tensor affine(const Tensor& x, double a, double b);
inline Tensor scale(const Tensor& x, double a) { return affine(x, a, 0.0); }
inline Tensor one_minus(const Tensor& x) { return affine(x, -1.0, 1.0); }

/// [m,k]x[k,n], [B,m,k]x[B,k,n] or [B,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// 3x3, stride 1, zero padding 1. x: [B,Ci,H,W], w: [Co,Ci,3,3], bias: [Co].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Pointwise convolution. x: [B,Ci,H,W], w: [Co,Ci], bias: [Co].
Tensor conv2d_1x1(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Non-overlapping average pooling by integer factors over the last two axes.
Tensor avg_pool(const Tensor& x, std::size_t fh, std::size_t fw);
/// Nearest-neighbour 2x upsampling over the last two axes.
Tensor upsample_nearest_2x(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws NumericError on non-positive input; callers that need a floor clamp first.
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// Reductions drop the reduced axis.
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis);
/// Half-open [start, end) along one axis.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end);
/// Right-aligned broadcasting; every source dim must equal the target or be 1.
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> perm);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> perm);

/// Endpoint-anchored linear interpolation along the last axis to `width` samples.
Tensor linear_interp_1d(const Tensor& x, std::size_t width);

/// Rows of table [V,E] selected by indices; result [indices.size(), E].
Tensor embedding_lookup(const Tensor& table, std::span<const int> indices);
/// Picks x[..., indices[r]] for each leading row r; result has the last axis dropped.
Tensor gather_last(const Tensor& x, std::span<const int> indices);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;
};

/// Per-channel standardization over batch and spatial axes of [B,C,H,W]
/// followed by a learned scale/shift. With `fixed` set, those statistics are
/// used as constants; otherwise batch statistics are used and written to
/// `observed` when given.
Tensor channel_standardize(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                           const ChannelStats* fixed = nullptr, ChannelStats* observed = nullptr);

/// Op kinds reachable through the generic entry point.
enum class OpKind {
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kConv2d,
  kConv2d1x1,
  kRelu,
  kTanh,
  kSigmoid,
  kExp,
  kLog,
  kSoftmax,
  kSum,
  kMean,
  kConcat,
  kUpsampleNearest2x,
  kSlice,
  kBroadcast,
  kLinearInterp1d,
  kClamp,
  kEmbeddingLookup,
};

std::string_view op_name(OpKind kind);
std::span<const OpKind> all_op_kinds();

struct OpAttrs {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t width = 0;
  double lo = 0.0;
  double hi = 1.0;
  Shape shape;
  std::vector<int> indices;
  bool require_finite = false;
};

/// Generic dispatch over the op table. Throws NumericError when
/// attrs.require_finite is set and an input holds a non-finite value.
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

/// Index of the largest entry of each row of a [R,K] tensor.
std::vector<int> argmax_rows(const Tensor& x);

bool all_finite(const Tensor& x);

}  // namespace siga
