// SPDX-License-Identifier: Apache-2.0
#include "siga/counters.hpp"

namespace siga {

void ExecutionCounters::reset() {
  kmeans = 0;
  pyramid = 0;
  alignment = 0;
  gpc = 0;
  glyph_head = 0;
  glyph_pool = 0;
  fusion = 0;
}

std::string ExecutionCounters::summary() const {
  return "kmeans=" + std::to_string(kmeans.load()) + " pyramid=" + std::to_string(pyramid.load()) +
         " alignment=" + std::to_string(alignment.load()) + " gpc=" + std::to_string(gpc.load()) +
         " glyph_head=" + std::to_string(glyph_head.load()) +
         " glyph_pool=" + std::to_string(glyph_pool.load()) +
         " fusion=" + std::to_string(fusion.load());
}

ExecutionCounters& counters() {
  static ExecutionCounters c;
  return c;
}

}  // namespace siga
