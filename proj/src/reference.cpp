#include "nlobs/reference.hpp"

#include <cmath>

#include "nlobs/common.hpp"

namespace nlobs {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

ReducedGBM reduce_geometric(const std::vector<double>& mus, const std::vector<double>& sigmas,
                            const std::vector<double>& spots, double rate) {
    if (mus.empty() || mus.size() != sigmas.size() || mus.size() != spots.size())
        throw ConfigError("reduce_geometric: mus, sigmas, spots must be nonempty and equal-sized");
    ReducedGBM g;
    g.rate = rate;
    g.drift_bar = 0.0;
    double var = 0.0;
    g.spot = 1.0;
    for (std::size_t i = 0; i < mus.size(); ++i) {
        if (!(sigmas[i] > 0.0)) throw ConfigError("reduce_geometric: volatilities must be positive");
        if (!(spots[i] > 0.0)) throw ConfigError("reduce_geometric: spots must be positive");
        g.drift_bar += mus[i];
        var += sigmas[i] * sigmas[i];
        g.spot *= spots[i];
    }
    g.vol_bar = std::sqrt(var);
    return g;
}

double binomial_american_put(const ReducedGBM& gbm, double strike, double horizon, int steps) {
    if (steps < 1) throw InvalidLatticeError("lattice needs at least one step");
    if (!(horizon > 0.0)) throw InvalidLatticeError("lattice horizon must be positive");
    if (!(gbm.vol_bar > 0.0)) throw InvalidLatticeError("lattice volatility must be positive");
    if (!(gbm.spot > 0.0)) throw InvalidLatticeError("lattice spot must be positive");
    if (strike < 0.0) throw InvalidLatticeError("strike must be nonnegative");

    const double h = horizon / steps;
    const double u = std::exp(gbm.vol_bar * std::sqrt(h));
    const double d = 1.0 / u;
    const double growth = std::exp(gbm.drift_bar * h);
    const double p = (growth - d) / (u - d);
    if (!(p > 0.0) || !(p < 1.0))
        throw InvalidLatticeError("risk-neutral up probability outside (0,1)");
    const double disc = std::exp(-gbm.rate * h);
    const double u2 = u * u;

    std::vector<double> v(static_cast<std::size_t>(steps) + 1);
    {
        double s = gbm.spot * std::exp(-gbm.vol_bar * std::sqrt(h) * steps);
        for (int j = 0; j <= steps; ++j) {
            v[j] = std::max(strike - s, 0.0);
            s *= u2;
        }
    }
    for (int i = steps - 1; i >= 0; --i) {
        double s = gbm.spot * std::exp(-gbm.vol_bar * std::sqrt(h) * i);
        for (int j = 0; j <= i; ++j) {
            double cont = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
            v[j] = std::max(cont, strike - s);
            s *= u2;
        }
    }
    return v[0];
}

double lognormal_european_put(const ReducedGBM& gbm, double strike, double horizon) {
    if (!(strike > 0.0)) return 0.0;
    if (!(horizon > 0.0) || !(gbm.vol_bar > 0.0) || !(gbm.spot > 0.0))
        throw InvalidLatticeError("European put needs positive horizon, volatility and spot");
    const double sq = gbm.vol_bar * std::sqrt(horizon);
    const double d1 =
        (std::log(gbm.spot / strike) + (gbm.drift_bar + 0.5 * gbm.vol_bar * gbm.vol_bar) * horizon) /
        sq;
    const double d2 = d1 - sq;
    return std::exp(-gbm.rate * horizon) *
           (strike * normal_cdf(-d2) - gbm.spot * std::exp(gbm.drift_bar * horizon) * normal_cdf(-d1));
}

}  // namespace nlobs
