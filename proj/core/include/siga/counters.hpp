// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <string>

namespace siga {

/// Process-wide execution counters for the train-only and optional branches.
/// Used to prove which code paths ran (e.g. nothing train-only during eval).
struct ExecutionCounters {
  std::atomic<std::uint64_t> kmeans{0};
  std::atomic<std::uint64_t> pyramid{0};
  std::atomic<std::uint64_t> alignment{0};
  std::atomic<std::uint64_t> gpc{0};
  std::atomic<std::uint64_t> glyph_head{0};
  std::atomic<std::uint64_t> glyph_pool{0};
  std::atomic<std::uint64_t> fusion{0};

  void reset();
  std::string summary() const;
};

ExecutionCounters& counters();

}  // namespace siga
