#pragma once

// Self-contained oracles for the test suite. Everything here is computed
// independently of the library under test (closed forms, classical special
// functions, brute-force summation), so test expectations do not depend on
// the code being verified.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace oracle {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
}

/// Invert normal_cdf by bisection + Newton polish. Slow and independent of
/// the library's rational approximation.
inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("p outside (0,1)");
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (normal_cdf(mid) < p) lo = mid; else hi = mid;
    }
    double z = 0.5 * (lo + hi);
    for (int i = 0; i < 5; ++i) {
        double f = normal_cdf(z) - p;
        double d = normal_pdf(z);
        if (d > 0.0) z -= f / d;
    }
    return z;
}

/// E[Z^k] for Z ~ N(0,1): 0 for odd k, (k-1)!! for even k.
inline double std_normal_moment(int k) {
    if (k % 2 == 1) return 0.0;
    double m = 1.0;
    for (int j = k - 1; j > 1; j -= 2) m *= j;
    return m;
}

/// Moments of Y = m + s Z up to requested order.
inline double gaussian_moment(double m, double s, int k) {
    double total = 0.0;
    double binom = 1.0;
    for (int j = 0; j <= k; ++j) {
        if (j > 0) binom = binom * (k - j + 1) / j;
        total += binom * std::pow(m, k - j) * std::pow(s, j) * std_normal_moment(j);
    }
    return total;
}

/// Dense 1-d polynomial, coefficient c[i] on y^i.
struct Poly {
    std::vector<double> c;
    double operator()(double y) const {
        double v = 0.0;
        for (std::size_t i = c.size(); i-- > 0;) v = v * y + c[i];
        return v;
    }
    Poly derivative() const {
        if (c.size() <= 1) return Poly{{0.0}};
        std::vector<double> d(c.size() - 1);
        for (std::size_t i = 1; i < c.size(); ++i) d[i - 1] = c[i] * static_cast<double>(i);
        return Poly{d};
    }
    /// E[P(m + s Z)] in closed form.
    double gaussian_mean(double m, double s) const {
        double v = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i)
            v += c[i] * gaussian_moment(m, s, static_cast<int>(i));
        return v;
    }
};

inline double mean(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_sd(std::span<const double> xs) {
    double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

/// Least-squares slope of y against x.
inline double fit_slope(std::span<const double> x, std::span<const double> y) {
    double mx = mean(x), my = mean(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    return sxy / sxx;
}

/// Black-Scholes-type put on a lognormal terminal price with growth b and
/// discount r, written directly from the closed form.
inline double lognormal_put(double spot, double strike, double b, double r, double vol, double T) {
    if (vol * std::sqrt(T) < 1e-14) {
        return std::exp(-r * T) * std::max(strike - spot * std::exp(b * T), 0.0);
    }
    double sq = vol * std::sqrt(T);
    double d1 = (std::log(spot / strike) + (b + 0.5 * vol * vol) * T) / sq;
    double d2 = d1 - sq;
    return std::exp(-r * T) * (strike * normal_cdf(-d2) - spot * std::exp(b * T) * normal_cdf(-d1));
}

/// Tiny deterministic generator for test fixtures (xorshift128+).
struct TestRng {
    std::uint64_t s0, s1;
    explicit TestRng(std::uint64_t seed)
        : s0(seed * 0x9e3779b97f4a7c15ULL + 1), s1(seed ^ 0xda442d24d52b9c5ULL) {
        next(); next();
    }
    std::uint64_t next() {
        std::uint64_t x = s0, y = s1;
        s0 = y;
        x ^= x << 23;
        s1 = x ^ y ^ (x >> 17) ^ (y >> 26);
        return s1 + y;
    }
    double uniform() { return (next() >> 11) * 0x1.0p-53 + 0x1.0p-54; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        double u1 = uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }
};

}  // namespace oracle
