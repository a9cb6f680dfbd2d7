#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nlobs/model.hpp"

namespace nlobs {

/// Uniform grid t_i = i * h, i = 0..steps, with h = horizon / steps.
struct TimeGrid {
    int steps = 0;
    double horizon = 0.0;
    double h = 0.0;
    TimeGrid() = default;
    TimeGrid(int steps_, double horizon_);
    double knot(int i) const { return i * h; }
};

/// Forward Euler ensemble: states[N][steps+1][d] and the Gaussian
/// increments[N][steps][d] that produced them.
struct PathEnsemble {
    TimeGrid grid;
    int dim = 0;
    long count = 0;
    std::uint64_t seed = 0;
    std::vector<double> states;
    std::vector<double> increments;

    std::span<const double> state(long path, int step) const {
        return {states.data() + (path * (grid.steps + 1) + step) * dim,
                static_cast<std::size_t>(dim)};
    }
    std::span<const double> increment(long path, int step) const {
        return {increments.data() + (path * grid.steps + step) * dim,
                static_cast<std::size_t>(dim)};
    }
};

/// One Euler step x + mu(t,x) h + sigma(t,x) dW. Coefficients frozen at the
/// left endpoint. Throws PathBlowupError if the output is not finite.
void euler_step(const ProblemSpec& spec, double t, std::span<const double> x,
                double h, std::span<const double> dw, std::span<double> out);

/// Simulate `count` paths from spec.eval_point. Increments come from the
/// counter RNG keyed (seed, path, step, coord), so the result is a pure
/// function of the arguments for any thread count.
PathEnsemble simulate(const ProblemSpec& spec, const TimeGrid& grid, long count,
                      std::uint64_t seed, int threads = 0);

/// First/second order weights for one step of size h:
///   h0 = 1,  h1 = sigma^{-T} dW / h,  h2 = sigma^{-T} (dW dW' - h I) sigma^{-1} / h^2.
struct HermiteWeights {
    double h0 = 1.0;
    std::vector<double> h1;  ///< d
    std::vector<double> h2;  ///< d*d row-major
};

struct WeightOptions {
    /// Clamp |dW_k| at trunc_scale * sqrt(2 h log(1/h)) before forming the
    /// weights (variance control near h -> 0). Off by default.
    bool truncate_increment = false;
    double trunc_scale = 1.0;
};

/// Weights at (t, x) for increment dw. Throws SingularDiffusionError when
/// sigma(t, x) is not invertible at the configured floor.
HermiteWeights weights(const ProblemSpec& spec, double t, std::span<const double> x,
                       std::span<const double> dw, double h, const WeightOptions& opt = {});

/// Raw little-endian dump: magic "PFE1", u64 d, steps, count, seed, then
/// states and increments in path-major order.
void write_ensemble(const std::filesystem::path& file, const PathEnsemble& ens);
PathEnsemble read_ensemble(const std::filesystem::path& file, double horizon);

}  // namespace nlobs
