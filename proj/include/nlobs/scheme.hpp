#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlobs/estimators.hpp"
#include "nlobs/model.hpp"
#include "nlobs/sampling.hpp"

namespace nlobs {

struct EstimatorConfig {
    int cells_per_dim = 8;
    long min_cell_count = 0;        ///< 0 -> 10 * (dim + 1)
    bool truncate_increments = false;
    double trunc_scale = 1.0;
    bool clamp_values = true;       ///< clamp layer values to +-value_bound
    double value_bound = 0.0;       ///< 0 -> (g_bound + 1) * exp(f_r_bound * T)
    bool hess_guard = true;         ///< clamp gamma_xx to <= -hess_guard_delta in F
    double hess_guard_delta = 1e-4; ///< scaled by max(1, g_bound)
    int threads = 0;
};

struct SolveOptions {
    bool use_obstacle = true;
    bool check = true;              ///< run check_assumptions as a precondition
    bool override_assumptions = false;
    AssumptionCheckConfig check_config;
};

struct LayerStats {
    double t = 0.0;
    double min = 0.0, max = 0.0, mean = 0.0;
    double exercise_fraction = 0.0;
};

/// Values of one backward layer over the path cloud (or mesh), with the
/// obstacle-active mask.
struct LayerValues {
    int index = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> exercised;
};

struct SolveReport {
    double value_at_origin = 0.0;
    std::vector<LayerStats> layers;       ///< index 0 = t=0, last = maturity
    std::optional<AssumptionReport> assumptions;
    long long f_evaluations = 0;
    long long guard_activations = 0;
    double guard_fraction = 0.0;
    int fallback_cells = 0;
    long boundary_clamps = 0;             ///< quadrature backend only
    double sim_ms = 0.0, solve_ms = 0.0, total_ms = 0.0;
    std::string backend;
    int steps = 0;
    long paths = 0;
    std::uint64_t seed = 0;
};

struct StepDiagnostics {
    long long f_evaluations = 0;
    long long guard_activations = 0;
    int fallback_cells = 0;
};

/// One backward step on the path cloud: regress the next layer against the
/// layer-i states, apply F on the estimated (value, gradient, Hessian), add
/// h F, then take the obstacle maximum.
LayerValues backward_step(const ProblemSpec& spec, const PathEnsemble& ens, int i,
                          const LayerValues& next, const EstimatorConfig& cfg,
                          bool use_obstacle = true, StepDiagnostics* diag = nullptr);

/// Full backward induction over a fresh ensemble; the report value is the
/// layer-0 estimate at the (degenerate) start cloud.
SolveReport solve_mc(const ProblemSpec& spec, const TimeGrid& grid, long paths,
                     std::uint64_t seed, const EstimatorConfig& cfg = {},
                     const SolveOptions& opt = {});

/// Regular tensor mesh for the quadrature backend.
struct MeshSpec {
    std::vector<int> nodes_per_dim;
    std::vector<double> lo, hi;
    long node_count() const;
};

struct QuadSolveOptions {
    bool use_obstacle = true;
    bool hess_guard = true;
    double hess_guard_delta = 1e-4;
    WeightOptions weight_options;
    int threads = 0;
};

/// One backward layer on the mesh: channels by Gauss-Hermite quadrature of
/// the multilinear interpolant of the next layer, then h F and the obstacle.
/// `next` holds one value per mesh node.
LayerValues quad_layer_step(const ProblemSpec& spec, const TimeGrid& grid, int i,
                            const LayerValues& next, const MeshSpec& mesh,
                            const QuadratureRule& rule, const QuadSolveOptions& opt,
                            StepDiagnostics* diag = nullptr, long* boundary_clamps = nullptr);

/// Noise-free backward induction on a mesh (dim <= 2). The report value is
/// the interpolated layer-0 value at spec.eval_point.
SolveReport solve_quadrature(const ProblemSpec& spec, const TimeGrid& grid,
                             const MeshSpec& mesh, const QuadratureRule& rule,
                             const QuadSolveOptions& opt = {});

/// Default mesh for a problem: the diagnostic box with `nodes` points per dim.
MeshSpec default_mesh(const ProblemSpec& spec, int nodes);

}  // namespace nlobs
