#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "vip/rng.hpp"

using vip::Rng;

TEST_SUITE("rng") {
  TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next() == b.next());
  }

  TEST_CASE("uniform lies in [0, 1) and has mean near one half") {
    Rng r(1);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double u = r.uniform();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      sum += u;
    }
    // Standard error of the mean is sqrt(1/12/n) ~ 6.5e-4.
    CHECK(std::abs(sum / n - 0.5) < 4e-3);
  }

  TEST_CASE("normal has zero mean and unit variance") {
    Rng r(2);
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = r.normal();
      s1 += x;
      s2 += x * x;
    }
    const double mean = s1 / n;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(s2 / n - mean * mean - 1.0) < 0.02);
  }

  TEST_CASE("below covers its range without bias") {
    Rng r(3);
    std::vector<int> hist(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
      const auto k = r.below(7);
      REQUIRE(k < 7);
      ++hist[k];
    }
    for (int c : hist) CHECK(std::abs(c - 10000) < 500);
    CHECK(r.below(1) == 0);
    CHECK(r.below(0) == 0);
  }

  TEST_CASE("derived streams are distinct and reproducible") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 100; ++s) seen.insert(Rng::derive(7, s));
    CHECK(seen.size() == 100);
    CHECK(Rng::derive(7, 3) == Rng::derive(7, 3));
    CHECK(Rng::derive(7, 3) != Rng::derive(8, 3));
  }
}
