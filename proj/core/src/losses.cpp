// SPDX-License-Identifier: Apache-2.0
#include "siga/losses.hpp"

#include "siga/ops.hpp"

namespace siga {

Tensor binary_cross_entropy(const Tensor& prediction, const Tensor& target) {
  const Tensor p = clamp(prediction, kProbEps, 1.0 - kProbEps);
  const Tensor pos = mul(target, log(p));
  const Tensor neg = mul(one_minus(target), log(one_minus(p)));
  return scale(mean_all(add(pos, neg)), -1.0);
}

}  // namespace siga
