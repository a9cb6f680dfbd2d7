#include <cmath>
#include <vector>

#include "doctest.h"
#include "nlobs/common.hpp"
#include "nlobs/reference.hpp"
#include "support/oracles.hpp"

using namespace nlobs;

TEST_CASE("product of independent lognormals collapses to one factor") {
    ReducedGBM g = reduce_geometric({0.03, 0.03, 0.03}, {0.1, 0.1, 0.1}, {2.0, 2.0, 2.0}, 0.03);
    CHECK(g.drift_bar == doctest::Approx(0.09).epsilon(1e-15));
    CHECK(g.vol_bar == doctest::Approx(0.1 * std::sqrt(3.0)).epsilon(1e-15));
    CHECK(g.spot == doctest::Approx(8.0).epsilon(1e-15));
    CHECK(g.rate == 0.03);

    ReducedGBM one = reduce_geometric({0.05}, {0.2}, {1.5}, 0.01);
    CHECK(one.drift_bar == 0.05);
    CHECK(one.vol_bar == 0.2);
    CHECK(one.spot == 1.5);

    CHECK_THROWS_AS(reduce_geometric({0.1, 0.1}, {0.1}, {1.0, 1.0}, 0.0), ConfigError);
    CHECK_THROWS_AS(reduce_geometric({0.1}, {0.0}, {1.0}, 0.0), ConfigError);
    CHECK_THROWS_AS(reduce_geometric({0.1}, {0.1}, {-1.0}, 0.0), ConfigError);
}

TEST_CASE("one step lattice agrees with hand arithmetic") {
    ReducedGBM g{0.09, 0.1 * std::sqrt(3.0), 8.0, 0.03};
    double u = std::exp(g.vol_bar);
    double d = 1.0 / u;
    double p = (std::exp(g.drift_bar) - d) / (u - d);
    double payoff_down = 8.0 - 8.0 * d;  // up node is out of the money
    double want = std::exp(-0.03) * (1.0 - p) * payoff_down;
    CHECK(binomial_american_put(g, 8.0, 1.0, 1) == doctest::Approx(want).epsilon(1e-14));
    // deep in the money at the root: immediate exercise wins on a 1-step tree
    CHECK(binomial_american_put(g, 20.0, 1.0, 1) >= 20.0 - 8.0);
}

TEST_CASE("lattice sanity: zero strike, monotonicity, early exercise premium") {
    ReducedGBM g{0.09, 0.1 * std::sqrt(3.0), 8.0, 0.03};
    CHECK(binomial_american_put(g, 0.0, 1.0, 50) == 0.0);

    double prev = -1.0;
    for (double strike : {6.0, 8.0, 10.0}) {
        double v = binomial_american_put(g, strike, 1.0, 200);
        CHECK(v > prev);
        prev = v;
    }
    prev = 1e9;
    for (double spot : {6.0, 8.0, 10.0}) {
        ReducedGBM gs = g;
        gs.spot = spot;
        double v = binomial_american_put(gs, 8.0, 1.0, 200);
        CHECK(v < prev);
        prev = v;
    }

    double amer = binomial_american_put(g, 8.0, 1.0, 2000);
    double euro = lognormal_european_put(g, 8.0, 1.0);
    CHECK(amer >= euro - 1e-3);
    CHECK(amer > euro);  // positive rate makes early exercise valuable here
}

TEST_CASE("with zero rate and drift the American put collapses to European") {
    ReducedGBM g{0.0, 0.25, 8.0, 0.0};
    double amer = binomial_american_put(g, 8.0, 1.0, 4000);
    double euro = oracle::lognormal_put(8.0, 8.0, 0.0, 0.0, 0.25, 1.0);
    CHECK(std::abs(amer - euro) <= 5e-4);
}

TEST_CASE("closed-form European put matches the independent oracle") {
    ReducedGBM g{0.09, 0.1 * std::sqrt(3.0), 8.0, 0.03};
    double mine = lognormal_european_put(g, 8.0, 1.0);
    double want = oracle::lognormal_put(8.0, 8.0, 0.09, 0.03, 0.1 * std::sqrt(3.0), 1.0);
    CHECK(mine == doctest::Approx(want).epsilon(1e-12));
    CHECK(mine == doctest::Approx(0.2691).epsilon(0.004));

    ReducedGBM g2{0.02, 0.4, 5.0, 0.07};
    CHECK(lognormal_european_put(g2, 6.0, 2.0) ==
          doctest::Approx(oracle::lognormal_put(5.0, 6.0, 0.02, 0.07, 0.4, 2.0)).epsilon(1e-12));

    // strike far below any reachable value
    CHECK(lognormal_european_put(g, 1e-8, 1.0) <= 1e-8);
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(normal_cdf(1.0) == doctest::Approx(oracle::normal_cdf(1.0)).epsilon(1e-14));
}

TEST_CASE("lattice refinement tightens the value") {
    ReducedGBM g{0.09, 0.1 * std::sqrt(3.0), 8.0, 0.03};
    const double limit = binomial_american_put(g, 8.0, 1.0, 20000);
    double e250 = std::abs(binomial_american_put(g, 8.0, 1.0, 250) - limit);
    double e1000 = std::abs(binomial_american_put(g, 8.0, 1.0, 1000) - limit);
    double e4000 = std::abs(binomial_american_put(g, 8.0, 1.0, 4000) - limit);
    CHECK(e1000 < e250);
    CHECK(e4000 < e1000);
    CHECK(e4000 <= 2e-5);
}

TEST_CASE("fine lattices are self-consistent near the quoted benchmark") {
    ReducedGBM g{0.09, 0.1 * std::sqrt(3.0), 8.0, 0.03};
    double v10 = binomial_american_put(g, 8.0, 1.0, 10000);
    double v20 = binomial_american_put(g, 8.0, 1.0, 20000);
    // halving the step moves the value by single-digit 1e-6, so the lattice
    // has converged; the commonly quoted 0.338778 sits ~1.2e-3 above that
    // limit, so it is held only loosely here (the strict pin lives in the
    // acceptance gate)
    CHECK(std::abs(v20 - v10) <= 2e-5);
    CHECK(std::abs(v20 - 0.338778) <= 2e-3);
}

TEST_CASE("degenerate lattices are rejected") {
    ReducedGBM g{0.09, 0.1 * std::sqrt(3.0), 8.0, 0.03};
    CHECK_THROWS_AS(binomial_american_put(g, 8.0, 1.0, 0), InvalidLatticeError);
    CHECK_THROWS_AS(binomial_american_put(g, 8.0, -1.0, 10), InvalidLatticeError);
    ReducedGBM fast{5.0, 0.1, 8.0, 0.03};  // drift outruns the up factor
    CHECK_THROWS_AS(binomial_american_put(fast, 8.0, 1.0, 1), InvalidLatticeError);
    ReducedGBM flat{0.09, 0.0, 8.0, 0.03};
    CHECK_THROWS_AS(binomial_american_put(flat, 8.0, 1.0, 10), InvalidLatticeError);
}
