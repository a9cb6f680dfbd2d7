#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nlobs/model.hpp"
#include "nlobs/sampling.hpp"

namespace nlobs {

/// Hypercube partition of a point cloud built from per-dimension empirical
/// quantiles. Cells with too few points are merged with a neighbour along
/// the last dimension (and across columns if a whole column is short).
struct Partition {
    int dim = 0;
    std::vector<std::vector<double>> splits;  ///< per-dim interior cut points, strictly increasing
    std::vector<double> box_lo, box_hi;       ///< bounding box of the build cloud
    std::vector<int> bins;                    ///< per-dim bin count = splits[k].size() + 1
    std::vector<int> cell_of_flat;            ///< flat tensor index -> merged cell id
    int cell_count = 0;
    std::vector<long> counts;                 ///< per merged cell, from the build cloud

    /// Cell id for x (clamped to the bounding box first).
    int locate(std::span<const double> x) const;
};

/// Build from points[N*dim] row-major. Throws InsufficientDataError on an
/// empty cloud. Duplicate quantile cuts collapse, so a degenerate cloud
/// yields a single cell.
Partition build_partition(std::span<const double> points, long n, int dim,
                          int cells_per_dim, long min_cell_count);

/// Piecewise-affine least-squares fit of several target channels over a
/// shared partition: per cell, basis (1, x - center) with the cell mean as
/// center. Rank-deficient cells fall back to the constant fit.
struct LayerEstimator {
    Partition partition;
    int dim = 0;
    int channels = 0;
    std::vector<double> centers;  ///< cell_count * dim
    std::vector<double> coef;     ///< cell_count * channels * (dim + 1), intercept first
    int fallback_cells = 0;       ///< cells where any channel used the constant fallback

    /// Channel value at x (clamped to the partition box).
    double eval_channel(std::span<const double> x, int channel) const;

    /// All channels at x with a single cell lookup; out.size() >= channels.
    void eval_all(std::span<const double> x, std::span<double> out) const;
};

/// Fit all channels. targets[c] has one value per point. Accumulation is
/// compensated, so permuting the input moves results by at most ~1e-15.
LayerEstimator fit_layer(const Partition& part, std::span<const double> points, long n,
                         int dim, const std::vector<std::span<const double>>& targets,
                         int threads = 0);

/// Estimated value, gradient and symmetrized Hessian of the one-step
/// conditional expectation operator applied to a next-layer function.
struct DhEstimate {
    double value = 0.0;
    std::vector<double> grad;  ///< d
    std::vector<double> hess;  ///< d*d row-major, symmetric
};

/// Channel layout used by the scheme: 0 value, 1..d gradient, then the
/// d(d+1)/2 upper-triangle Hessian entries row-major.
int canonical_channel_count(int dim);
DhEstimate evaluate(const LayerEstimator& est, std::span<const double> x);

/// Tensorized Gauss-Hermite rule for N(0, I_dim); weights sum to 1.
struct QuadratureRule {
    int dim = 0;
    int points_per_dim = 0;
    std::vector<double> nodes;    ///< node_count * dim
    std::vector<double> weights;  ///< node_count
    long node_count() const { return static_cast<long>(weights.size()); }

    static QuadratureRule gauss_hermite(int points_per_dim, int dim);
};

/// Deterministic counterpart of the regression estimator: evaluate the three
/// channels of psi under one Euler step from (t, x) by quadrature over the
/// Gaussian increment. psi(t + h, y) is supplied as a callable.
DhEstimate quad_conditional(const ProblemSpec& spec, double t, std::span<const double> x,
                            double h, const std::function<double(double, std::span<const double>)>& psi,
                            const QuadratureRule& rule, const WeightOptions& opt = {});

}  // namespace nlobs
