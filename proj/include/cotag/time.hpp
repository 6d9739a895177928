#pragma once

#include <chrono>
#include <cstdint>

namespace cotag {

/// Simulation time: integer nanoseconds since the start of a run.
using SimTime = std::chrono::nanoseconds;

constexpr SimTime from_seconds(double s) {
  return SimTime{static_cast<std::int64_t>(s * 1e9 + (s >= 0 ? 0.5 : -0.5))};
}

constexpr double to_seconds(SimTime t) { return static_cast<double>(t.count()) * 1e-9; }

}  // namespace cotag
