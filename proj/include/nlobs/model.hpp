#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nlobs {

/// mu(t, x) -> out[d]
using DriftFn = std::function<void(double, std::span<const double>, std::span<double>)>;
/// sigma(t, x) -> out[d*d] row-major
using DiffusionFn = std::function<void(double, std::span<const double>, std::span<double>)>;
/// F(t, x, r, p, gamma) with gamma row-major d*d
using NonlinearityFn = std::function<double(double, std::span<const double>, double,
                                            std::span<const double>, std::span<const double>)>;
/// g(t, x); doubles as the terminal condition at t = T
using ObstacleFn = std::function<double(double, std::span<const double>)>;

/// A parabolic obstacle problem split into a linear generator part
/// (drift/diffusion) and a remaining nonlinearity F acting on (r, p, gamma).
struct ProblemSpec {
    int dim = 0;
    double horizon = 0.0;
    DriftFn drift;
    DiffusionFn diffusion;
    NonlinearityFn nonlinearity;
    ObstacleFn obstacle;

    std::vector<double> eval_point;   ///< reporting point x0
    std::vector<double> box_lo;       ///< diagnostic domain box
    std::vector<double> box_hi;

    double lip_x = 0.0;       ///< declared spatial Lipschitz bound of g on the box
    double holder_t = 0.0;    ///< declared 1/2-Holder-in-time bound of g on the box
    double g_bound = 0.0;     ///< declared max |g| on box x [0, horizon]
    double f_r_bound = 0.0;   ///< declared max |dF/dr|, used for value clamping
    double sigma_floor = 1e-10;  ///< smallest acceptable singular value of sigma

    std::string name;

    /// Throws ConfigError on structurally invalid fields.
    void validate() const;
};

struct AssumptionCheckConfig {
    int probe_count = 256;
    double fd_step = 1e-5;
    std::uint64_t seed = 20240901;
    double probe_scale = 10.0;       ///< |r|, |p|, |gamma| probe amplitude
    double domination_tol = 1e-6;
    double monotonicity_tol = 0.05;  ///< slack for discount-type F_r < 0
};

/// Probe statistics for the structural conditions the scheme relies on.
struct AssumptionReport {
    double domination_max = 0.0;      ///< max lambda_max(a^{-1/2} (2 F_gamma) a^{-1/2})
    double monotonicity_min = 0.0;    ///< min F_r - (1/4) F_p' F_gamma^- F_p
    double f_zero_bound = 0.0;        ///< max |F(t, x, 0, 0, 0)|
    double sigma_condition_min = 0.0; ///< min singular value of sigma over probes
    double lipschitz_r = 0.0;         ///< max |F_r| over probes
    int nonfinite_probes = 0;         ///< probes where F or its differences were not finite

    bool pass_f_zero = false;
    bool pass_sigma = false;
    bool pass_domination = false;
    bool pass_monotonicity = false;
    bool pass() const {
        return pass_f_zero && pass_sigma && pass_domination && pass_monotonicity;
    }
    std::string summary() const;
};

/// Finite-difference probe of the structural conditions over random points
/// of box x [0, T] and random (r, p, gamma) arguments. Deterministic in the
/// seed. A singular sigma at a probe fails the sigma check, no throw.
AssumptionReport check_assumptions(const ProblemSpec& spec, const AssumptionCheckConfig& cfg = {});

/// American put on the product of m lognormal assets, payoff
/// (strike - prod_i x_i)_+, with the discount term folded into F as
/// -rate * r_arg.
///
/// `sigma0_sq` in (0, 1] sets how much of the diffusion the linear part
/// carries; the remainder appears in F through the gamma diagonal.
/// `drift_in_linear_part` keeps the rate drift in the simulated chain
/// (default); false moves rate * x_i * p_i into F and simulates driftless.
ProblemSpec make_geometric_put(double rate, const std::vector<double>& sigmas,
                               double strike, double horizon, double sigma0_sq,
                               bool drift_in_linear_part = true,
                               const std::vector<double>& spots = {});

/// One-dimensional put on a single lognormal factor with decoupled growth
/// and discount rates (the product-of-assets problem collapses to this).
ProblemSpec make_reduced_put(double drift_bar, double vol_bar, double spot,
                             double rate, double strike, double horizon,
                             double sigma0_sq, bool drift_in_linear_part = true);

/// Exponential-utility indifference valuation of a put on the product of m
/// non-traded assets, hedging with one traded asset. State is (x, s_1..s_m);
/// the linear part carries the full s-diffusion plus eps^2/2 in x; F holds
/// the hedging term -(mu0 p_x + sum sigma0 rho_i sigma_i s_i g_xi)^2 /
/// (2 sigma0^2 g_xx) - eps^2/2 g_xx.
ProblemSpec make_indifference(double mu0, double sigma0, const std::vector<double>& mus,
                              const std::vector<double>& sigmas, const std::vector<double>& rhos,
                              double gamma_ra, double strike, double horizon, double eps);

}  // namespace nlobs
