#pragma once

#include <cstddef>
#include <vector>

#include "vip/rng.hpp"

namespace vip::rdk {

struct Dot {
  double x = 0.0;
  double y = 0.0;
};

/// Random-dot kinematogram in normalized display coordinates (unit disk).
struct DotField {
  std::vector<Dot> dots;
  double coherence = 0.5;
};

/// n dots uniform in the unit disk. Throws std::invalid_argument for n == 0
/// or coherence outside [0, 1].
DotField init_dots(std::size_t n, Rng& rng, double coherence = 0.5);

/// Number of dots moved rigidly per frame: round(coherence * n).
std::size_t coherent_count(const DotField& field);

/// One frame: a freshly drawn subset of coherent_count() dots rotates by
/// delta_deg about the center; every other dot jumps to a uniform position.
/// When `coherent` is non-null it receives the rotated indices, ascending.
DotField advance(const DotField& field, double delta_deg, Rng& rng,
                 std::vector<std::size_t>* coherent = nullptr);

}  // namespace vip::rdk
