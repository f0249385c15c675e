// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "siga/tensor.hpp"

namespace siga {

/// Probability floor applied inside the loss functions before any log.
inline constexpr double kProbEps = 1e-7;

/// Mean over all elements of -[t log p + (1 - t) log(1 - p)], with p clamped
/// to [kProbEps, 1 - kProbEps]. Gradients reach both `prediction` and
/// `target` unless the caller detaches the target.
Tensor binary_cross_entropy(const Tensor& prediction, const Tensor& target);

}  // namespace siga
