// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace siga {

struct OracleResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  double seconds = 0.0;
  bool passed() const { return max_rel_err <= tolerance; }
};

/// Central-difference checks (h = 1e-5) of every differentiable op and of
/// each loss term on seeded random inputs and 2-sample batches.
std::vector<OracleResult> run_gradient_oracles(std::uint64_t seed);

}  // namespace siga
