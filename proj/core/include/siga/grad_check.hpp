// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "siga/rng.hpp"
#include "siga/tensor.hpp"

namespace siga {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Largest coordinate-wise |analytic - central difference| / max(1, |a|, |n|)
/// for the gradient of scalar `f` at `x`. `x` itself is not modified; the
/// active tape is cleared before and after.
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// Same measure for a closure over several leaf tensors (model parameters).
/// Each parameter is perturbed in place and restored bit-exactly. When
/// `max_coords_per_tensor` is nonzero, that many coordinates are drawn per
/// tensor from `rng` instead of checking every coordinate.
double grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params,
                         double h = 1e-5, std::size_t max_coords_per_tensor = 0,
                         Rng* rng = nullptr);

}  // namespace siga
