#pragma once

#include <cstdint>

namespace lorasim {

// Virtual time base: unsigned microseconds since simulation start.
using Micros = std::uint64_t;

inline constexpr Micros kMillisecond = 1'000;
inline constexpr Micros kSecond = 1'000'000;

inline constexpr Micros abs_diff(Micros a, Micros b) {
  return a > b ? a - b : b - a;
}

}  // namespace lorasim
