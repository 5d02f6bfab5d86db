#include <doctest.h>

#include "test_util.hpp"

#include <cmath>

#include "oracles.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/hamiltonian.hpp"
#include "ycontrol/philox.hpp"

using namespace ycontrol;

TEST_CASE("integrand examples") {
  CHECK(integrand({1, 2, 0.25, 10}, 0.0) == 0.0);
  CHECK(integrand({1, 2, 0.25, 10}, 10.0) == rel(std::sqrt(10.0) - 20.0));
  CHECK(integrand({1, 2, 0.25, 10}, 10.0) == rel(-16.8377).epsilon(1e-5));
  CHECK(integrand({1, 0, 0.8, 10}, -1.0) == rel(1.0));
  CHECK_THROWS_AS(integrand({1, 0, 0.8, 10}, 10.5), UsageError);
}

TEST_CASE("classify_minima examples") {
  MinimaReport r = classify_minima({1, 2, 0.8, 10});
  REQUIRE(r.argmin_set.size() == 1);
  CHECK(r.argmin_set[0] == rel(std::pow(2.0 / 1.6, 1.0 / 0.6)));
  CHECK(r.argmin_set[0] == rel(1.4505).epsilon(1e-4));
  CHECK(r.regime == MinimaRegime::kInteriorUnique);

  r = classify_minima({1, 2, 0.25, 10});
  REQUIRE(r.argmin_set.size() == 1);
  CHECK(r.argmin_set[0] == 10.0);
  CHECK(r.min_value == rel(-16.8377).epsilon(1e-5));
  CHECK(r.regime == MinimaRegime::kBoundary);

  for (double a : {0.1, 0.25, 0.5, 0.8, 1.0}) {
    r = classify_minima({1, 0, a, 3});
    REQUIRE(r.argmin_set.size() == 1);
    CHECK(r.argmin_set[0] == 0.0);
  }
  r = classify_minima({-1, 1, 0.25, 10});
  REQUIRE(r.argmin_set.size() == 1);
  CHECK(r.argmin_set[0] == 10.0);

  r = classify_minima({-1, 0, 0.25, 10});
  CHECK(r.argmin_set == std::vector<double>{-10.0, 10.0});
  CHECK(r.regime == MinimaRegime::kDegenerateTie);

  r = classify_minima({0, 0, 0.3, 2});
  CHECK(r.argmin_set == std::vector<double>{-2.0, 0.0, 2.0});
  CHECK_THROWS_AS(classify_minima({1, 1, 0.3, 2}, 0.0), UsageError);
}

TEST_CASE("Poisson boundary alpha = 0.5") {
  // h = g |xi| - f xi: the minimum is at 0 for |f| < g, at the bound for
  // |f| > g, and the whole segment is flat at |f| = g.
  CHECK(classify_minima({2, 1, 0.5, 5}).argmin_set == std::vector<double>{0.0});
  CHECK(classify_minima({2, -3, 0.5, 5}).argmin_set == std::vector<double>{-5.0});
  const MinimaReport flat = classify_minima({2, 2, 0.5, 5});
  CHECK(flat.argmin_set == std::vector<double>{0.0, 5.0});
  CHECK(flat.regime == MinimaRegime::kDegenerateTie);
}

TEST_CASE("tie_coefficient") {
  CHECK(tie_coefficient({1, 0, 0.25, 10}) == rel(std::pow(10.0, -0.5)));
  CHECK(tie_coefficient({1, 0, 0.25, 10}) == rel(0.31623).epsilon(1e-5));
  CHECK(tie_coefficient({2, 0, 0.1, 1}) == 2.0);
  CHECK(tie_coefficient({1, 0, 0.4999999, 10}) == rel(1.0).epsilon(1e-5));
  CHECK_THROWS_AS(tie_coefficient({-1, 0, 0.25, 10}), UsageError);
  CHECK_THROWS_AS(tie_coefficient({1, 0, 0.5, 10}), UsageError);

  IntegrandCoeffs c{1.3, 0, 0.3, 7};
  c.f = tie_coefficient(c);
  const MinimaReport r = classify_minima(c);
  CHECK(r.argmin_set == std::vector<double>{0.0, 7.0});
  CHECK(r.regime == MinimaRegime::kDegenerateTie);
}

TEST_CASE("property: grid-search agreement, odd symmetry, complementarity") {
  CounterRng rng(2024, 0);
  for (int i = 0; i < 60; ++i) {
    IntegrandCoeffs c;
    c.g = 4.0 * rng.uniform() - 2.0;
    c.f = 6.0 * rng.uniform() - 3.0;
    c.alpha = rng.uniform();
    c.m_y = 0.5 + 20.0 * rng.uniform();
    const MinimaReport r = classify_minima(c);
    CHECK(oracle::same_argmin_sets(r.argmin_set, oracle::grid_minima(c, 100001, 1e-9)));
    for (double x : r.argmin_set)
      CHECK(std::abs(integrand(c, x) - r.min_value) <= tie_band(r.min_value, 1e-9));

    IntegrandCoeffs mirrored = c;
    mirrored.f = -c.f;
    const MinimaReport m = classify_minima(mirrored);
    REQUIRE(m.argmin_set.size() == r.argmin_set.size());
    for (std::size_t k = 0; k < r.argmin_set.size(); ++k)
      CHECK(std::abs(m.argmin_set[k] + r.argmin_set[r.argmin_set.size() - 1 - k]) <= 1e-12 * c.m_y);

    if (c.g > 0.0 && c.alpha < 0.5) {
      const bool both = std::count(r.argmin_set.begin(), r.argmin_set.end(), c.m_y) &&
                        std::count(r.argmin_set.begin(), r.argmin_set.end(), -c.m_y);
      CHECK_FALSE(both);
    }
  }
}
