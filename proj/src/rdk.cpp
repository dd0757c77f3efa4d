#include "vip/rdk.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace vip::rdk {
namespace {

Dot uniform_in_disk(Rng& rng) {
  const double r = std::sqrt(rng.uniform());
  const double a = 2.0 * std::numbers::pi * rng.uniform();
  return {r * std::cos(a), r * std::sin(a)};
}

}  // namespace

DotField init_dots(std::size_t n, Rng& rng, double coherence) {
  if (n == 0) throw std::invalid_argument("init_dots: need at least one dot");
  if (!(coherence >= 0.0 && coherence <= 1.0)) {
    throw std::invalid_argument("init_dots: coherence outside [0, 1]");
  }
  DotField field;
  field.coherence = coherence;
  field.dots.reserve(n);
  for (std::size_t i = 0; i < n; ++i) field.dots.push_back(uniform_in_disk(rng));
  return field;
}

std::size_t coherent_count(const DotField& field) {
  return static_cast<std::size_t>(
      std::llround(field.coherence * static_cast<double>(field.dots.size())));
}

DotField advance(const DotField& field, double delta_deg, Rng& rng,
                 std::vector<std::size_t>* coherent) {
  const std::size_t n = field.dots.size();
  const std::size_t k = std::min(coherent_count(field), n);

  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(order[i], order[j]);
  }
  std::vector<char> is_coherent(n, 0);
  for (std::size_t i = 0; i < k; ++i) is_coherent[order[i]] = 1;

  const double a = delta_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a);
  const double s = std::sin(a);

  DotField out;
  out.coherence = field.coherence;
  out.dots.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_coherent[i]) {
      const Dot& d = field.dots[i];
      Dot r{c * d.x - s * d.y, s * d.x + c * d.y};
      // Rotation preserves the radius up to rounding; keep the disk invariant.
      const double r2 = r.x * r.x + r.y * r.y;
      if (r2 > 1.0) {
        const double scale = (1.0 - 1e-15) / std::sqrt(r2);
        r.x *= scale;
        r.y *= scale;
      }
      out.dots[i] = r;
    } else {
      out.dots[i] = uniform_in_disk(rng);
    }
  }

  if (coherent) {
    coherent->clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (is_coherent[i]) coherent->push_back(i);
    }
  }
  return out;
}

}  // namespace vip::rdk
