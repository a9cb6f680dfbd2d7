#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "nlobs/common.hpp"
#include "nlobs/estimators.hpp"
#include "nlobs/rng.hpp"
#include "support/oracles.hpp"

using namespace nlobs;

namespace {

ProblemSpec toy_spec(int dim, std::vector<double> mu, std::vector<double> sigma_rowmajor) {
    ProblemSpec s;
    s.dim = dim;
    s.horizon = 1.0;
    s.drift = [mu](double, std::span<const double>, std::span<double> out) {
        std::copy(mu.begin(), mu.end(), out.begin());
    };
    s.diffusion = [sigma_rowmajor](double, std::span<const double>, std::span<double> out) {
        std::copy(sigma_rowmajor.begin(), sigma_rowmajor.end(), out.begin());
    };
    s.nonlinearity = [](double, std::span<const double>, double, std::span<const double>,
                        std::span<const double>) { return 0.0; };
    s.obstacle = [](double, std::span<const double>) { return 0.0; };
    s.eval_point.assign(dim, 0.0);
    s.box_lo.assign(dim, -10.0);
    s.box_hi.assign(dim, 10.0);
    s.g_bound = 1.0;
    s.name = "toy";
    return s;
}

}  // namespace

TEST_CASE("partition: median split of a 1-d ladder") {
    std::vector<double> pts{1, 2, 3, 4, 5, 6, 7, 8};
    Partition p = build_partition(pts, 8, 1, 2, 1);
    REQUIRE(p.cell_count == 2);
    REQUIRE(p.splits[0].size() == 1);
    CHECK(p.splits[0][0] == doctest::Approx(4.5).epsilon(1e-15));
    CHECK(p.counts[0] == 4);
    CHECK(p.counts[1] == 4);
    int lo = p.locate(std::vector<double>{1.0});
    int hi = p.locate(std::vector<double>{8.0});
    CHECK(lo != hi);
    CHECK(p.locate(std::vector<double>{4.4}) == lo);
    CHECK(p.locate(std::vector<double>{4.6}) == hi);
    // queries clamp to the cloud's bounding box
    CHECK(p.locate(std::vector<double>{-100.0}) == lo);
    CHECK(p.locate(std::vector<double>{100.0}) == hi);
}

TEST_CASE("partition: degenerate cloud collapses to one cell") {
    std::vector<double> pts(40, 3.25);
    Partition p = build_partition(pts, 40, 1, 8, 10);
    CHECK(p.cell_count == 1);
    CHECK(p.counts[0] == 40);
    CHECK(p.locate(std::vector<double>{3.25}) == 0);
    CHECK(p.locate(std::vector<double>{99.0}) == 0);
}

TEST_CASE("partition: empty cloud rejected") {
    std::vector<double> pts;
    CHECK_THROWS_AS(build_partition(pts, 0, 1, 4, 10), InsufficientDataError);
}

TEST_CASE("partition: quantile cells of a uniform square are balanced") {
    const long N = 10000;
    oracle::TestRng rng(8);
    std::vector<double> pts(N * 2);
    for (long j = 0; j < N * 2; ++j) pts[j] = rng.uniform();
    Partition p = build_partition(pts, N, 2, 4, 10);
    REQUIRE(p.cell_count == 16);
    long total = 0;
    for (int c = 0; c < p.cell_count; ++c) {
        CHECK(std::abs(static_cast<double>(p.counts[c]) - N / 16.0) <= 3.0 * std::sqrt(N));
        total += p.counts[c];
    }
    CHECK(total == N);
}

TEST_CASE("partition: short cells merge along the last dimension") {
    std::vector<double> pts(12);
    std::iota(pts.begin(), pts.end(), 0.0);
    Partition p = build_partition(pts, 12, 1, 4, 5);
    REQUIRE(p.cell_count == 2);
    CHECK(p.counts[0] == 6);
    CHECK(p.counts[1] == 6);
    long total = 0;
    for (int c = 0; c < p.cell_count; ++c) {
        CHECK(p.counts[c] >= 5);
        total += p.counts[c];
    }
    CHECK(total == 12);

    // an entire cloud below the minimum still yields one (deficient) cell
    std::vector<double> tiny{1, 2, 3, 4, 5, 6, 7};
    Partition q = build_partition(tiny, 7, 1, 4, 10);
    CHECK(q.cell_count == 1);
    CHECK(q.counts[0] == 7);
}

TEST_CASE("layer fit: exact affine targets are reproduced") {
    const long N = 4000;
    const int d = 2;
    oracle::TestRng rng(21);
    std::vector<double> pts(N * d);
    for (auto& v : pts) v = rng.uniform(-2.0, 3.0);
    std::vector<double> t0(N), t1(N);
    for (long j = 0; j < N; ++j) {
        double x = pts[j * d], y = pts[j * d + 1];
        t0[j] = 1.5 - 2.0 * x + 0.75 * y;
        t1[j] = -0.25 + 0.1 * x - 4.0 * y;
    }
    Partition p = build_partition(pts, N, d, 4, 10);
    LayerEstimator est = fit_layer(p, pts, N, d, {t0, t1});
    CHECK(est.fallback_cells == 0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x{rng.uniform(-2.0, 3.0), rng.uniform(-2.0, 3.0)};
        double e0 = est.eval_channel(x, 0);
        double e1 = est.eval_channel(x, 1);
        double a0 = 1.5 - 2.0 * x[0] + 0.75 * x[1];
        double a1 = -0.25 + 0.1 * x[0] - 4.0 * x[1];
        CHECK(std::abs(e0 - a0) <= 1e-10 * std::max(1.0, std::abs(a0)));
        CHECK(std::abs(e1 - a1) <= 1e-10 * std::max(1.0, std::abs(a1)));
    }
}

TEST_CASE("layer fit: constant channel is exact, degenerate cloud falls back") {
    const long N = 50;
    std::vector<double> pts(N, 3.0);
    std::vector<double> tgt(N);
    for (long j = 0; j < N; ++j) tgt[j] = static_cast<double>(j);  // nonconstant target
    Partition p = build_partition(pts, N, 1, 4, 10);
    LayerEstimator est = fit_layer(p, pts, N, 1, {tgt});
    CHECK(est.fallback_cells == 1);
    // slope unidentifiable -> constant fit at the mean, everywhere
    double mean = (N - 1) / 2.0;
    CHECK(est.eval_channel(std::vector<double>{3.0}, 0) == doctest::Approx(mean).epsilon(1e-13));
    CHECK(est.eval_channel(std::vector<double>{-5.0}, 0) == doctest::Approx(mean).epsilon(1e-13));
}

TEST_CASE("layer fit: residuals are orthogonal to the local basis") {
    const long N = 3000;
    oracle::TestRng rng(5);
    std::vector<double> pts(N);
    std::vector<double> tgt(N);
    for (long j = 0; j < N; ++j) {
        pts[j] = rng.uniform(-1.0, 1.0);
        tgt[j] = std::sin(3.0 * pts[j]) + 0.2 * rng.normal();
    }
    Partition p = build_partition(pts, N, 1, 4, 10);
    LayerEstimator est = fit_layer(p, pts, N, 1, {tgt});
    std::vector<double> r0(p.cell_count, 0.0), r1(p.cell_count, 0.0);
    std::vector<double> scale(p.cell_count, 0.0);
    for (long j = 0; j < N; ++j) {
        std::vector<double> x{pts[j]};
        int c = p.locate(x);
        double resid = tgt[j] - est.eval_channel(x, 0);
        r0[c] += resid;
        r1[c] += resid * (pts[j] - est.centers[c]);
        scale[c] += std::abs(tgt[j]);
    }
    for (int c = 0; c < p.cell_count; ++c) {
        CHECK(std::abs(r0[c]) <= 1e-8 * std::max(1.0, scale[c]));
        CHECK(std::abs(r1[c]) <= 1e-8 * std::max(1.0, scale[c]));
    }
}

TEST_CASE("layer fit: input permutation moves nothing beyond roundoff") {
    const long N = 2000;
    const int d = 2;
    oracle::TestRng rng(31);
    std::vector<double> pts(N * d), tgt(N);
    for (long j = 0; j < N; ++j) {
        pts[j * d] = rng.uniform(-1.0, 1.0);
        pts[j * d + 1] = rng.uniform(-1.0, 1.0);
        tgt[j] = std::cos(pts[j * d]) * (1.0 + pts[j * d + 1]) + rng.normal();
    }
    std::vector<long> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    for (long j = N - 1; j > 0; --j) std::swap(perm[j], perm[rng.next() % (j + 1)]);
    std::vector<double> pts2(N * d), tgt2(N);
    for (long j = 0; j < N; ++j) {
        pts2[j * d] = pts[perm[j] * d];
        pts2[j * d + 1] = pts[perm[j] * d + 1];
        tgt2[j] = tgt[perm[j]];
    }
    Partition p = build_partition(pts, N, d, 3, 10);
    LayerEstimator a = fit_layer(p, pts, N, d, {tgt});
    LayerEstimator b = fit_layer(p, pts2, N, d, {tgt2});
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<double> x{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        double va = a.eval_channel(x, 0), vb = b.eval_channel(x, 0);
        CHECK(std::abs(va - vb) <= 1e-12 * std::max(1.0, std::abs(va)));
    }
}

TEST_CASE("layer fit: evaluation outside the box equals boundary evaluation") {
    std::vector<double> pts{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> tgt{0.0, 0.4, 0.8, 1.2, 1.6, 2.0};
    Partition p = build_partition(pts, 6, 1, 2, 1);
    LayerEstimator est = fit_layer(p, pts, 6, 1, {tgt});
    CHECK(est.eval_channel(std::vector<double>{5.0}, 0) ==
          est.eval_channel(std::vector<double>{1.0}, 0));
    CHECK(est.eval_channel(std::vector<double>{-5.0}, 0) ==
          est.eval_channel(std::vector<double>{0.0}, 0));
}

TEST_CASE("estimated second derivative of y^2 from a one-step cloud") {
    const long N = 200000;
    const double h = 0.05;
    oracle::TestRng rng(77);
    std::vector<double> pts(N);
    std::vector<double> t_val(N), t_grad(N), t_hess(N);
    for (long j = 0; j < N; ++j) {
        double x = rng.uniform(-1.0, 1.0);
        double dw = std::sqrt(h) * normal_draw(2024, j, 0, 0);
        double y = x + dw;  // mu = 0, sigma = 1
        double psi = y * y;
        pts[j] = x;
        t_val[j] = psi;
        t_grad[j] = psi * dw / h;
        t_hess[j] = psi * (dw * dw - h) / (h * h);
    }
    Partition p = build_partition(pts, N, 1, 4, 40);
    LayerEstimator est = fit_layer(p, pts, N, 1, {t_val, t_grad, t_hess});
    REQUIRE(est.channels == canonical_channel_count(1));
    DhEstimate e = evaluate(est, std::vector<double>{0.3});
    CHECK(e.value == doctest::Approx(0.3 * 0.3 + h).epsilon(0.5));
    CHECK(std::abs(e.grad[0] - 0.6) <= 0.15);
    CHECK(std::abs(e.hess[0] - 2.0) <= 0.35);
}

TEST_CASE("gauss-hermite rule for the standard normal") {
    SUBCASE("one and two point rules in closed form") {
        QuadratureRule r1 = QuadratureRule::gauss_hermite(1, 1);
        REQUIRE(r1.node_count() == 1);
        CHECK(r1.nodes[0] == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(r1.weights[0] == doctest::Approx(1.0).epsilon(1e-14));
        QuadratureRule r2 = QuadratureRule::gauss_hermite(2, 1);
        REQUIRE(r2.node_count() == 2);
        std::vector<double> nodes{r2.nodes[0], r2.nodes[1]};
        std::sort(nodes.begin(), nodes.end());
        CHECK(nodes[0] == doctest::Approx(-1.0).epsilon(1e-13));
        CHECK(nodes[1] == doctest::Approx(1.0).epsilon(1e-13));
        CHECK(r2.weights[0] == doctest::Approx(0.5).epsilon(1e-13));
    }
    SUBCASE("moments up to degree 2q-1 are exact") {
        QuadratureRule r = QuadratureRule::gauss_hermite(5, 1);
        double wsum = 0.0;
        for (double w : r.weights) wsum += w;
        CHECK(std::abs(wsum - 1.0) <= 1e-14);
        for (int deg = 0; deg <= 9; ++deg) {
            double acc = 0.0;
            for (long i = 0; i < r.node_count(); ++i)
                acc += r.weights[i] * std::pow(r.nodes[i], deg);
            double want = oracle::std_normal_moment(deg);
            CHECK(std::abs(acc - want) <= 1e-12 * std::max(1.0, std::abs(want)));
        }
    }
    SUBCASE("large rule stays sane") {
        QuadratureRule r = QuadratureRule::gauss_hermite(40, 1);
        double wsum = 0.0;
        for (double w : r.weights) {
            CHECK(w > 0.0);
            wsum += w;
        }
        CHECK(std::abs(wsum - 1.0) <= 1e-13);
        // every zero of the degree-n Hermite polynomial lies inside
        // +-sqrt(4n+2); for n = 40 the outermost pair sits near +-11.45
        for (long i = 0; i < r.node_count(); ++i)
            CHECK(std::abs(r.nodes[i]) < std::sqrt(4.0 * 40 + 2.0));
    }
    SUBCASE("tensor rule in two dimensions") {
        QuadratureRule r = QuadratureRule::gauss_hermite(3, 2);
        REQUIRE(r.node_count() == 9);
        double wsum = 0.0, mixed = 0.0;
        for (long i = 0; i < r.node_count(); ++i) {
            wsum += r.weights[i];
            mixed += r.weights[i] * r.nodes[i * 2] * r.nodes[i * 2 + 1];
        }
        CHECK(std::abs(wsum - 1.0) <= 1e-14);
        CHECK(std::abs(mixed) <= 1e-14);  // E[Z1 Z2] = 0
        CHECK_THROWS_AS(QuadratureRule::gauss_hermite(0, 1), ConfigError);
    }
}

TEST_CASE("quadrature conditional channels on polynomial inputs") {
    ProblemSpec s = toy_spec(1, {0.0}, {1.0});
    QuadratureRule rule = QuadratureRule::gauss_hermite(6, 1);
    const double x0 = 0.4, h = 0.09;
    std::vector<double> x{x0};

    SUBCASE("constant") {
        auto psi = [](double, std::span<const double>) { return 2.5; };
        DhEstimate e = quad_conditional(s, 0.0, x, h, psi, rule);
        CHECK(e.value == doctest::Approx(2.5).epsilon(1e-13));
        CHECK(std::abs(e.grad[0]) <= 1e-11);
        CHECK(std::abs(e.hess[0]) <= 1e-10);
    }
    SUBCASE("linear: martingale value, unit gradient") {
        auto psi = [](double, std::span<const double> y) { return y[0]; };
        DhEstimate e = quad_conditional(s, 0.0, x, h, psi, rule);
        CHECK(e.value == doctest::Approx(x0).epsilon(1e-13));
        CHECK(e.grad[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::abs(e.hess[0]) <= 1e-10);
    }
    SUBCASE("quadratic: curvature 2 recovered exactly") {
        auto psi = [](double, std::span<const double> y) { return y[0] * y[0]; };
        DhEstimate e = quad_conditional(s, 0.0, x, h, psi, rule);
        CHECK(e.value == doctest::Approx(x0 * x0 + h).epsilon(1e-12));
        CHECK(e.grad[0] == doctest::Approx(2.0 * x0).epsilon(1e-12));
        CHECK(e.hess[0] == doctest::Approx(2.0).epsilon(1e-11));
    }
    SUBCASE("a rule with broken mass is rejected") {
        QuadratureRule broken = rule;
        for (auto& w : broken.weights) w *= 0.9;
        auto psi = [](double, std::span<const double>) { return 1.0; };
        CHECK_THROWS_AS(quad_conditional(s, 0.0, x, h, psi, broken), std::invalid_argument);
    }
}

TEST_CASE("quadrature agrees with single-cell Monte Carlo means") {
    ProblemSpec s = toy_spec(2, {0.1, -0.2}, {0.5, 0.2, 0.0, 0.7});
    const double h = 0.1;
    std::vector<double> x{0.3, -0.4};
    auto psi = [](double, std::span<const double> y) {
        return std::exp(-y[0]) + y[1] * y[1];
    };
    QuadratureRule rule = QuadratureRule::gauss_hermite(24, 2);
    DhEstimate q = quad_conditional(s, 0.0, x, h, psi, rule);

    const long M = 1000000;
    const double sq = std::sqrt(h);
    // channels: value, grad0, grad1, hess00, hess01, hess11
    double acc[6] = {0, 0, 0, 0, 0, 0}, sqacc[6] = {0, 0, 0, 0, 0, 0};
    std::vector<double> dw(2), y(2);
    for (long j = 0; j < M; ++j) {
        dw[0] = sq * normal_draw(31415, j, 0, 0);
        dw[1] = sq * normal_draw(31415, j, 0, 1);
        euler_step(s, 0.0, x, h, dw, y);
        HermiteWeights w = weights(s, 0.0, x, dw, h);
        double pv = psi(0.0, y);
        double t[6] = {pv, pv * w.h1[0], pv * w.h1[1],
                       pv * w.h2[0], pv * 0.5 * (w.h2[1] + w.h2[2]), pv * w.h2[3]};
        for (int k = 0; k < 6; ++k) {
            acc[k] += t[k];
            sqacc[k] += t[k] * t[k];
        }
    }
    double want[6] = {q.value, q.grad[0], q.grad[1], q.hess[0], q.hess[1], q.hess[3]};
    for (int k = 0; k < 6; ++k) {
        double m = acc[k] / M;
        double se = std::sqrt((sqacc[k] / M - m * m) / M);
        CHECK(std::abs(m - want[k]) <= 5.0 * se);
    }
}
