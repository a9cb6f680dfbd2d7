#pragma once

#include <vector>

namespace nlobs {

/// One lognormal factor equivalent to a product of independent lognormals:
/// growth rate = sum of drifts, variance = sum of variances.
struct ReducedGBM {
    double drift_bar = 0.0;
    double vol_bar = 0.0;
    double spot = 0.0;
    double rate = 0.0;  ///< discount rate, kept separate from the growth rate
};

ReducedGBM reduce_geometric(const std::vector<double>& mus, const std::vector<double>& sigmas,
                            const std::vector<double>& spots, double rate);

/// CRR lattice American put: u = exp(vol sqrt(h)), d = 1/u,
/// p = (exp(drift_bar h) - d) / (u - d), discounted at exp(-rate h).
/// Throws InvalidLatticeError when p falls outside [0, 1].
double binomial_american_put(const ReducedGBM& gbm, double strike, double horizon, int steps);

/// Closed-form European put on the lognormal terminal value, discounted at
/// gbm.rate while the asset grows at gbm.drift_bar.
double lognormal_european_put(const ReducedGBM& gbm, double strike, double horizon);

double normal_cdf(double x);

}  // namespace nlobs
