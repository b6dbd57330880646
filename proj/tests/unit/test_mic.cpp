#include <doctest.h>

#include "oracles.hpp"
#include "rhythmvec/error.hpp"
#include "rhythmvec/metrics.hpp"
#include "rhythmvec/rng.hpp"

using namespace rhythmvec;

namespace {

std::vector<double> uniforms(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform();
  return v;
}

}  // namespace

TEST_CASE("mic of a constant axis is zero") {
  Rng rng(1);
  const auto x = uniforms(rng, 50);
  const std::vector<double> y(50, 3.0);
  CHECK(mic(x, y) == 0.0);
  CHECK(mic(y, x) == 0.0);
}

TEST_CASE("mic of a noiseless line is at least 0.99") {
  Rng rng(2);
  const auto x = uniforms(rng, 200);
  std::vector<double> y;
  for (double v : x) y.push_back(2.0 * v + 1.0);
  CHECK(mic(x, y) >= 0.99);
}

TEST_CASE("mic of independent uniforms stays low and under the shuffle null") {
  Rng rng(3);
  const auto x = uniforms(rng, 200);
  const auto y = uniforms(rng, 200);
  const double observed = mic(x, y);
  CHECK(observed <= 0.30);

  std::vector<double> null;
  std::vector<double> shuffled = y;
  Rng perm(4);
  for (int k = 0; k < 100; ++k) {
    perm.shuffle(std::span<double>(shuffled));
    null.push_back(mic(x, shuffled));
  }
  std::sort(null.begin(), null.end());
  // the 95th percentile of the null bounds a draw from the null itself
  CHECK(observed <= null[95] + 1e-12);
  CHECK(null[95] <= 0.30);
}

TEST_CASE("mic matches the exhaustive search for small n") {
  Rng rng(5);
  for (std::size_t n : {10u, 12u, 17u, 24u, 31u, 40u, 50u}) {
    for (int kind = 0; kind < 3; ++kind) {
      std::vector<double> x = uniforms(rng, n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (kind == 0) y[i] = rng.uniform();
        if (kind == 1) y[i] = std::sin(6.0 * x[i]) + 0.3 * rng.normal();
        // ties on both axes
        if (kind == 2) {
          x[i] = std::round(x[i] * 6.0);
          y[i] = std::round(3.0 * rng.uniform() + x[i] / 2.0);
        }
      }
      const double fast = mic(x, y);
      const double slow = oracle::exhaustive_mic(x, y);
      INFO("n=" << n << " kind=" << kind);
      CHECK(std::abs(fast - slow) <= 1e-9);
    }
  }
}

TEST_CASE("mic is symmetric and invariant to monotone transforms") {
  Rng rng(6);
  for (std::size_t n : {30u, 100u, 200u}) {
    std::vector<double> x = uniforms(rng, n), y(n), tx(n), ty(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = x[i] * x[i] + 0.2 * rng.normal();
      tx[i] = std::exp(4.0 * x[i]);
      ty[i] = std::atan(y[i]) * 3.0 - 1.0;
    }
    const double base = mic(x, y);
    CHECK(std::abs(base - mic(y, x)) <= 1e-9);
    CHECK(std::abs(base - mic(tx, y)) <= 1e-9);
    CHECK(std::abs(base - mic(x, ty)) <= 1e-9);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
  }
}

TEST_CASE("mic is repeatable") {
  Rng rng(7);
  const auto x = uniforms(rng, 120);
  const auto y = uniforms(rng, 120);
  CHECK(mic(x, y) == mic(x, y));
}

TEST_CASE("mic input checks") {
  const std::vector<double> x(9, 1.0), y(9, 2.0), z(12, 0.0);
  CHECK_THROWS_AS(mic(x, y), ValidationError);
  CHECK_THROWS_AS(mic(z, x), ShapeError);
}
