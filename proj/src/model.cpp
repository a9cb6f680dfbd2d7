#include "nlobs/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "nlobs/common.hpp"
#include "nlobs/rng.hpp"

namespace nlobs {

void ProblemSpec::validate() const {
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (!drift || !diffusion || !nonlinearity || !obstacle)
        throw ConfigError("all four coefficient callbacks must be set");
    auto want = static_cast<std::size_t>(dim);
    if (eval_point.size() != want) throw ConfigError("eval_point size != dim");
    if (box_lo.size() != want || box_hi.size() != want)
        throw ConfigError("diagnostic box size != dim");
    for (int k = 0; k < dim; ++k)
        if (!(box_lo[k] < box_hi[k])) throw ConfigError("diagnostic box is empty");
    if (lip_x < 0.0 || holder_t < 0.0 || g_bound < 0.0 || f_r_bound < 0.0)
        throw ConfigError("declared bounds must be nonnegative");
    if (!(sigma_floor > 0.0)) throw ConfigError("sigma_floor must be positive");
}

std::string AssumptionReport::summary() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "f_zero=%.3g [%s]  sigma_min=%.3g [%s]  domination=%.6g [%s]  "
                  "monotonicity=%.6g [%s]  |F_r|<=%.3g  nonfinite_probes=%d",
                  f_zero_bound, pass_f_zero ? "ok" : "FAIL", sigma_condition_min,
                  pass_sigma ? "ok" : "FAIL", domination_max, pass_domination ? "ok" : "FAIL",
                  monotonicity_min, pass_monotonicity ? "ok" : "FAIL", lipschitz_r,
                  nonfinite_probes);
    return buf;
}

namespace {

double sym_range(std::uint64_t seed, std::uint64_t probe, std::uint32_t slot,
                 std::uint32_t coord, double amp) {
    return (2.0 * uniform_draw(seed, probe, slot, coord) - 1.0) * amp;
}

}  // namespace

AssumptionReport check_assumptions(const ProblemSpec& spec, const AssumptionCheckConfig& cfg) {
    spec.validate();
    if (cfg.probe_count < 1) throw ConfigError("probe_count must be >= 1");
    if (!(cfg.fd_step > 0.0)) throw ConfigError("fd_step must be positive");

    const int d = spec.dim;
    const double e = cfg.fd_step;
    AssumptionReport rep;
    double dom = -std::numeric_limits<double>::infinity();
    double mono = std::numeric_limits<double>::infinity();
    double fz = 0.0, lr = 0.0;
    double sig_min = std::numeric_limits<double>::infinity();
    bool fz_bad = false;

    std::vector<double> x(d), p(d), gamma(d * d), zero_p(d, 0.0), zero_g(d * d, 0.0);
    std::vector<double> sig(d * d), work(d), pert(d * d);
    Eigen::MatrixXd S(d, d), G(d, d);
    Eigen::VectorXd Fp(d);

    auto F = [&](double t, double r, std::span<const double> pp, std::span<const double> gg) {
        return spec.nonlinearity(t, x, r, pp, gg);
    };

    for (int k = 0; k < cfg.probe_count; ++k) {
        const auto key = static_cast<std::uint64_t>(k);
        double t = uniform_draw(cfg.seed, key, 0, 0) * spec.horizon;
        for (int i = 0; i < d; ++i)
            x[i] = spec.box_lo[i] +
                   uniform_draw(cfg.seed, key, 1, static_cast<std::uint32_t>(i)) *
                       (spec.box_hi[i] - spec.box_lo[i]);
        double r = sym_range(cfg.seed, key, 2, 0, spec.g_bound);
        for (int i = 0; i < d; ++i)
            p[i] = sym_range(cfg.seed, key, 3, static_cast<std::uint32_t>(i), cfg.probe_scale);
        int slot = 0;
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                double v = sym_range(cfg.seed, key, 4, static_cast<std::uint32_t>(slot++),
                                     cfg.probe_scale);
                gamma[i * d + j] = gamma[j * d + i] = v;
            }

        // sigma conditioning
        spec.diffusion(t, x, sig);
        for (int i = 0; i < d * d; ++i) S(i / d, i % d) = sig[i];
        double smin = S.jacobiSvd().singularValues().minCoeff();
        sig_min = std::min(sig_min, smin);

        // F at the origin of (r, p, gamma)
        double f0 = F(t, 0.0, zero_p, zero_g);
        if (std::isfinite(f0)) {
            fz = std::max(fz, std::abs(f0));
        } else {
            fz_bad = true;
            ++rep.nonfinite_probes;
        }

        bool probe_ok = true;
        double fr = (F(t, r + e, p, gamma) - F(t, r - e, p, gamma)) / (2.0 * e);
        if (std::isfinite(fr)) {
            lr = std::max(lr, std::abs(fr));
        } else {
            probe_ok = false;
        }

        for (int i = 0; i < d && probe_ok; ++i) {
            double keep = p[i];
            p[i] = keep + e;
            double hi = F(t, r, p, gamma);
            p[i] = keep - e;
            double lo = F(t, r, p, gamma);
            p[i] = keep;
            Fp(i) = (hi - lo) / (2.0 * e);
            if (!std::isfinite(Fp(i))) probe_ok = false;
        }

        for (int i = 0; i < d && probe_ok; ++i) {
            for (int j = i; j < d && probe_ok; ++j) {
                std::copy(gamma.begin(), gamma.end(), pert.begin());
                pert[i * d + j] += e;
                if (j != i) pert[j * d + i] += e;
                double hi = F(t, r, p, pert);
                pert[i * d + j] -= 2.0 * e;
                if (j != i) pert[j * d + i] -= 2.0 * e;
                double lo = F(t, r, p, pert);
                double g = (hi - lo) / (2.0 * e);
                if (!std::isfinite(g)) {
                    probe_ok = false;
                    break;
                }
                if (j == i) {
                    G(i, i) = g;
                } else {
                    G(i, j) = G(j, i) = 0.5 * g;
                }
            }
        }

        if (!probe_ok) {
            ++rep.nonfinite_probes;
            continue;
        }

        // monotonicity: F_r - (1/4) F_p' pinv(F_gamma) F_p
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eg(G);
        Eigen::VectorXd lam = eg.eigenvalues();
        Eigen::VectorXd pl = Fp.transpose() * eg.eigenvectors();
        double quad = 0.0;
        for (int i = 0; i < d; ++i)
            if (std::abs(lam(i)) > 1e-10) quad += pl(i) * pl(i) / lam(i);
        double m = fr - 0.25 * quad;
        if (std::isfinite(m)) mono = std::min(mono, m);

        // domination: lambda_max of a^{-1/2} (2 F_gamma) a^{-1/2}
        if (smin > spec.sigma_floor) {
            Eigen::MatrixXd a = S * S.transpose();
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
            Eigen::VectorXd al = ea.eigenvalues();
            for (int i = 0; i < d; ++i) al(i) = 1.0 / std::sqrt(std::max(al(i), 1e-300));
            Eigen::MatrixXd ainvsqrt =
                ea.eigenvectors() * al.asDiagonal() * ea.eigenvectors().transpose();
            Eigen::MatrixXd M = ainvsqrt * (2.0 * G) * ainvsqrt;
            Eigen::MatrixXd Msym = 0.5 * (M + M.transpose());
            double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Msym)
                              .eigenvalues()
                              .maxCoeff();
            if (std::isfinite(lmax)) dom = std::max(dom, lmax);
        }
    }

    rep.domination_max = std::isfinite(dom) ? dom : 0.0;
    rep.monotonicity_min = std::isfinite(mono) ? mono : 0.0;
    rep.f_zero_bound = fz;
    rep.sigma_condition_min = std::isfinite(sig_min) ? sig_min : 0.0;
    rep.lipschitz_r = lr;
    rep.pass_f_zero = !fz_bad && std::isfinite(fz);
    rep.pass_sigma = rep.sigma_condition_min > spec.sigma_floor;
    rep.pass_domination = rep.domination_max <= 1.0 + cfg.domination_tol;
    rep.pass_monotonicity = rep.monotonicity_min >= -cfg.monotonicity_tol;
    return rep;
}

namespace {

/// Reach of a lognormal coordinate started at s with growth mu and
/// volatility v over [0, T], five standard deviations wide.
void lognormal_reach(double s, double mu, double v, double T, double& lo, double& hi) {
    double spread = 5.0 * v * std::sqrt(T);
    lo = s * std::exp(std::min(0.0, (mu - 0.5 * v * v) * T) - spread);
    hi = s * std::exp(std::max(0.0, mu * T) + spread);
}

}  // namespace

ProblemSpec make_geometric_put(double rate, const std::vector<double>& sigmas, double strike,
                               double horizon, double sigma0_sq, bool drift_in_linear_part,
                               const std::vector<double>& spots) {
    const int m = static_cast<int>(sigmas.size());
    if (m < 1) throw ConfigError("need at least one asset volatility");
    if (!(strike > 0.0)) throw ConfigError("strike must be positive");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (!(rate >= 0.0)) throw ConfigError("rate must be nonnegative");
    if (!(sigma0_sq > 0.0) || sigma0_sq > 1.0) throw ConfigError("sigma0_sq must lie in (0,1]");
    for (double s : sigmas)
        if (!(s > 0.0)) throw ConfigError("asset volatilities must be positive");
    if (!spots.empty() && spots.size() != sigmas.size())
        throw ConfigError("spots size != sigmas size");
    for (double s : spots)
        if (!(s > 0.0)) throw ConfigError("spots must be positive");

    ProblemSpec spec;
    spec.dim = m;
    spec.horizon = horizon;
    spec.name = "geometric_put";

    std::vector<double> s0 = spots;
    if (s0.empty()) s0.assign(m, std::pow(strike, 1.0 / m));
    spec.eval_point = s0;

    const double sigma0 = std::sqrt(sigma0_sq);
    const double fshare = 0.5 * (1.0 - sigma0_sq);
    std::vector<double> sig = sigmas;

    spec.drift = [m, rate, drift_in_linear_part](double, std::span<const double> x,
                                                 std::span<double> out) {
        for (int i = 0; i < m; ++i) out[i] = drift_in_linear_part ? rate * x[i] : 0.0;
    };
    spec.diffusion = [m, sigma0, sig](double, std::span<const double> x, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (int i = 0; i < m; ++i) out[i * m + i] = sigma0 * sig[i] * x[i];
    };
    spec.nonlinearity = [m, rate, fshare, sig, drift_in_linear_part](
                            double, std::span<const double> x, double r,
                            std::span<const double> p, std::span<const double> gamma) {
        double acc = -rate * r;
        if (fshare != 0.0) {
            for (int i = 0; i < m; ++i)
                acc += fshare * x[i] * x[i] * sig[i] * sig[i] * gamma[i * m + i];
        }
        if (!drift_in_linear_part) {
            for (int i = 0; i < m; ++i) acc += rate * x[i] * p[i];
        }
        return acc;
    };
    spec.obstacle = [m, strike](double, std::span<const double> x) {
        double prod = 1.0;
        for (int i = 0; i < m; ++i) prod *= x[i];
        return std::max(strike - prod, 0.0);
    };

    spec.box_lo.resize(m);
    spec.box_hi.resize(m);
    for (int i = 0; i < m; ++i) {
        double drift = drift_in_linear_part ? rate : 0.0;
        lognormal_reach(s0[i], drift, sig[i], horizon, spec.box_lo[i], spec.box_hi[i]);
    }
    double lip_sq = 0.0;
    for (int k = 0; k < m; ++k) {
        double prod = 1.0;
        for (int j = 0; j < m; ++j)
            if (j != k) prod *= spec.box_hi[j];
        lip_sq += prod * prod;
    }
    spec.lip_x = std::sqrt(lip_sq);
    spec.holder_t = 0.0;
    spec.g_bound = strike;
    spec.f_r_bound = rate;
    spec.validate();
    return spec;
}

ProblemSpec make_reduced_put(double drift_bar, double vol_bar, double spot, double rate,
                             double strike, double horizon, double sigma0_sq,
                             bool drift_in_linear_part) {
    if (!(vol_bar > 0.0)) throw ConfigError("vol_bar must be positive");
    if (!(spot > 0.0)) throw ConfigError("spot must be positive");
    if (!(strike > 0.0)) throw ConfigError("strike must be positive");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (!(rate >= 0.0)) throw ConfigError("rate must be nonnegative");
    if (!(sigma0_sq > 0.0) || sigma0_sq > 1.0) throw ConfigError("sigma0_sq must lie in (0,1]");

    ProblemSpec spec;
    spec.dim = 1;
    spec.horizon = horizon;
    spec.name = "reduced_put";
    spec.eval_point = {spot};

    const double sigma0 = std::sqrt(sigma0_sq);
    const double fshare = 0.5 * (1.0 - sigma0_sq);

    spec.drift = [drift_bar, drift_in_linear_part](double, std::span<const double> x,
                                                   std::span<double> out) {
        out[0] = drift_in_linear_part ? drift_bar * x[0] : 0.0;
    };
    spec.diffusion = [sigma0, vol_bar](double, std::span<const double> x, std::span<double> out) {
        out[0] = sigma0 * vol_bar * x[0];
    };
    spec.nonlinearity = [rate, fshare, vol_bar, drift_bar, drift_in_linear_part](
                            double, std::span<const double> x, double r,
                            std::span<const double> p, std::span<const double> gamma) {
        double acc = -rate * r + fshare * x[0] * x[0] * vol_bar * vol_bar * gamma[0];
        if (!drift_in_linear_part) acc += drift_bar * x[0] * p[0];
        return acc;
    };
    spec.obstacle = [strike](double, std::span<const double> x) {
        return std::max(strike - x[0], 0.0);
    };

    spec.box_lo.resize(1);
    spec.box_hi.resize(1);
    double drift = drift_in_linear_part ? drift_bar : 0.0;
    lognormal_reach(spot, drift, vol_bar, horizon, spec.box_lo[0], spec.box_hi[0]);
    spec.lip_x = 1.0;
    spec.holder_t = 0.0;
    spec.g_bound = strike;
    spec.f_r_bound = rate;
    spec.validate();
    return spec;
}

ProblemSpec make_indifference(double mu0, double sigma0, const std::vector<double>& mus,
                              const std::vector<double>& sigmas, const std::vector<double>& rhos,
                              double gamma_ra, double strike, double horizon, double eps) {
    const int m = static_cast<int>(mus.size());
    if (m < 1) throw ConfigError("need at least one non-traded asset");
    if (sigmas.size() != mus.size() || rhos.size() != mus.size())
        throw ConfigError("mus, sigmas, rhos must have equal length");
    if (!(sigma0 > 0.0)) throw ConfigError("sigma0 must be positive");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(gamma_ra > 0.0)) throw ConfigError("risk aversion must be positive");
    if (!(strike > 0.0)) throw ConfigError("strike must be positive");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    for (double s : sigmas)
        if (!(s > 0.0)) throw ConfigError("asset volatilities must be positive");
    for (double r : rhos)
        if (!(std::abs(r) < 1.0)) throw ConfigError("correlations must lie in (-1,1)");

    const int d = m + 1;  // state (x, s_1..s_m)
    ProblemSpec spec;
    spec.dim = d;
    spec.horizon = horizon;
    spec.name = "indifference";
    spec.eval_point.assign(d, 1.0);

    const double kappa = mu0 * mu0 / (2.0 * sigma0 * sigma0);

    spec.drift = [m, mus](double, std::span<const double> x, std::span<double> out) {
        out[0] = 0.0;
        for (int i = 0; i < m; ++i) out[i + 1] = mus[i] * x[i + 1];
    };
    spec.diffusion = [m, eps, sigmas](double, std::span<const double> x, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        const int d = m + 1;
        out[0] = eps;
        for (int i = 0; i < m; ++i) out[(i + 1) * d + (i + 1)] = sigmas[i] * x[i + 1];
    };
    spec.nonlinearity = [m, mu0, sigma0, eps, sigmas, rhos](
                            double, std::span<const double> x, double,
                            std::span<const double> p, std::span<const double> gamma) {
        const int d = m + 1;
        double num = mu0 * p[0];
        for (int i = 0; i < m; ++i) {
            double g_xs = 0.5 * (gamma[0 * d + (i + 1)] + gamma[(i + 1) * d + 0]);
            num += sigma0 * rhos[i] * sigmas[i] * x[i + 1] * g_xs;
        }
        double g_xx = gamma[0];
        double hedge = num == 0.0 ? 0.0 : -num * num / (2.0 * sigma0 * sigma0 * g_xx);
        return hedge - 0.5 * eps * eps * g_xx;
    };
    spec.obstacle = [m, kappa, gamma_ra, strike, horizon](double t, std::span<const double> x) {
        double prod = 1.0;
        for (int i = 0; i < m; ++i) prod *= x[i + 1];
        double payoff = std::max(strike - prod, 0.0);
        return -std::exp(-kappa * (horizon - t) - gamma_ra * (x[0] + payoff));
    };

    spec.box_lo.resize(d);
    spec.box_hi.resize(d);
    double spread = 5.0 * eps * std::sqrt(horizon);
    spec.box_lo[0] = 1.0 - spread;
    spec.box_hi[0] = 1.0 + spread;
    for (int i = 0; i < m; ++i)
        lognormal_reach(1.0, mus[i], sigmas[i], horizon, spec.box_lo[i + 1], spec.box_hi[i + 1]);

    spec.g_bound = std::exp(-gamma_ra * spec.box_lo[0]);
    double lip_sq = 1.0;  // d/dx factor, times gamma_ra * g_bound below
    for (int k = 0; k < m; ++k) {
        double prod = 1.0;
        for (int j = 0; j < m; ++j)
            if (j != k) prod *= spec.box_hi[j + 1];
        lip_sq += prod * prod;
    }
    spec.lip_x = gamma_ra * spec.g_bound * std::sqrt(lip_sq);
    spec.holder_t = kappa * spec.g_bound * std::sqrt(horizon);
    spec.f_r_bound = 0.0;
    spec.validate();
    return spec;
}

}  // namespace nlobs
