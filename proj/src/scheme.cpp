#include "nlobs/scheme.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nlobs/common.hpp"

namespace nlobs {

namespace {

using clock_type = std::chrono::steady_clock;

double elapsed_ms(clock_type::time_point a, clock_type::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

double value_bound_of(const ProblemSpec& spec, double configured) {
    if (configured > 0.0) return configured;
    return (spec.g_bound + 1.0) * std::exp(spec.f_r_bound * spec.horizon);
}

double obstacle_scale(const ProblemSpec& spec) { return std::max(1.0, spec.g_bound); }

/// Evaluate F, recovering from a non-finite result by re-clamping the leading
/// Hessian entry to -delta (concavity repair for nonlinearities that divide
/// by gamma_xx). Returns false when even the repaired evaluation is bad and
/// the caller asked for no guard.
bool eval_nonlinearity(const ProblemSpec& spec, double t, std::span<const double> x,
                       double value, std::span<const double> grad, std::span<double> hess,
                       bool guard, double delta, double& out, bool& guarded) {
    guarded = false;
    out = spec.nonlinearity(t, x, value, grad, hess);
    if (std::isfinite(out)) return true;
    if (!guard) return false;
    guarded = true;
    hess[0] = std::min(hess[0], -delta);
    out = spec.nonlinearity(t, x, value, grad, hess);
    if (!std::isfinite(out)) out = 0.0;
    return true;
}

LayerStats stats_of(double t, const LayerValues& layer) {
    LayerStats s;
    s.t = t;
    if (layer.values.empty()) return s;
    Kahan mean;
    double mn = layer.values[0], mx = layer.values[0];
    long hits = 0;
    for (std::size_t j = 0; j < layer.values.size(); ++j) {
        const double v = layer.values[j];
        mean.add(v);
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        if (!layer.exercised.empty() && layer.exercised[j]) ++hits;
    }
    s.min = mn;
    s.max = mx;
    s.mean = mean.value() / static_cast<double>(layer.values.size());
    s.exercise_fraction = static_cast<double>(hits) / static_cast<double>(layer.values.size());
    return s;
}

}  // namespace

LayerValues backward_step(const ProblemSpec& spec, const PathEnsemble& ens, int i,
                          const LayerValues& next, const EstimatorConfig& cfg,
                          bool use_obstacle, StepDiagnostics* diag) {
    const int d = spec.dim;
    const long n = ens.count;
    if (i < 0 || i >= ens.grid.steps)
        throw std::invalid_argument("backward step index outside the grid");
    if (next.index != i + 1)
        throw std::invalid_argument("backward step needs the adjacent next layer");
    if (next.values.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("next layer size does not match the ensemble");

    const double h = ens.grid.h;
    const double t = ens.grid.knot(i);
    const int channels = canonical_channel_count(d);

    WeightOptions wopt;
    wopt.truncate_increment = cfg.truncate_increments;
    wopt.trunc_scale = cfg.trunc_scale;

    // channel targets: psi * (H0, H1_k, sym H2_kl upper triangle)
    std::vector<double> pts(static_cast<std::size_t>(n) * d);
    std::vector<std::vector<double>> targets(channels);
    for (auto& tg : targets) tg.resize(n);
    parallel_for_chunks(static_cast<std::size_t>(n), 2048, cfg.threads,
                        [&](std::size_t jb, std::size_t je) {
        for (std::size_t j = jb; j < je; ++j) {
            auto x = ens.state(static_cast<long>(j), i);
            auto dw = ens.increment(static_cast<long>(j), i);
            std::copy(x.begin(), x.end(), pts.begin() + j * d);
            HermiteWeights w = weights(spec, t, x, dw, h, wopt);
            const double psi = next.values[j];
            targets[0][j] = psi;
            for (int k = 0; k < d; ++k) targets[1 + k][j] = psi * w.h1[k];
            int ch = 1 + d;
            for (int k = 0; k < d; ++k)
                for (int l = k; l < d; ++l)
                    targets[ch++][j] = psi * 0.5 * (w.h2[k * d + l] + w.h2[l * d + k]);
        }
    });

    const long min_cell = cfg.min_cell_count > 0 ? cfg.min_cell_count : 10L * (d + 1);
    Partition part = build_partition(pts, n, d, cfg.cells_per_dim, min_cell);
    std::vector<std::span<const double>> spans;
    spans.reserve(channels);
    for (const auto& tg : targets) spans.push_back(tg);
    LayerEstimator est = fit_layer(part, pts, n, d, spans, cfg.threads);

    const double bound = value_bound_of(spec, cfg.value_bound);
    const double delta = cfg.hess_guard_delta * obstacle_scale(spec);
    const double tie = 1e-12 * obstacle_scale(spec);

    LayerValues out;
    out.index = i;
    out.values.resize(n);
    out.exercised.assign(n, 0);
    std::vector<std::uint8_t> guarded_flag(n, 0);

    parallel_for_chunks(static_cast<std::size_t>(n), 2048, cfg.threads,
                        [&](std::size_t jb, std::size_t je) {
        thread_local std::vector<double> chan, grad, hess;
        chan.resize(channels);
        grad.resize(d);
        hess.resize(static_cast<std::size_t>(d) * d);
        for (std::size_t j = jb; j < je; ++j) {
            auto x = std::span<const double>(pts).subspan(j * d, d);
            est.eval_all(x, chan);
            const double value = chan[0];
            for (int k = 0; k < d; ++k) grad[k] = chan[1 + k];
            int ch = 1 + d;
            for (int k = 0; k < d; ++k)
                for (int l = k; l < d; ++l) {
                    hess[k * d + l] = hess[l * d + k] = chan[ch++];
                }
            double fv = 0.0;
            bool guarded = false;
            if (!eval_nonlinearity(spec, t, x, value, grad, hess, cfg.hess_guard, delta, fv,
                                   guarded))
                throw PathBlowupError("nonlinearity returned a non-finite value",
                                      static_cast<long>(j), i, t);
            guarded_flag[j] = guarded ? 1 : 0;
            double th = value + h * fv;
            if (cfg.clamp_values) th = std::clamp(th, -bound, bound);
            if (use_obstacle) {
                const double gv = spec.obstacle(t, x);
                if (gv >= th - tie) {
                    out.values[j] = gv;
                    out.exercised[j] = 1;
                } else {
                    out.values[j] = th;
                }
            } else {
                out.values[j] = th;
            }
        }
    });

    if (diag) {
        diag->f_evaluations += n;
        diag->fallback_cells += est.fallback_cells;
        long long hits = 0;
        for (long j = 0; j < n; ++j) hits += guarded_flag[j];
        diag->guard_activations += hits;
    }
    return out;
}

SolveReport solve_mc(const ProblemSpec& spec, const TimeGrid& grid, long paths,
                     std::uint64_t seed, const EstimatorConfig& cfg, const SolveOptions& opt) {
    spec.validate();
    const auto t_start = clock_type::now();

    SolveReport rep;
    rep.backend = "mc";
    rep.steps = grid.steps;
    rep.paths = paths;
    rep.seed = seed;

    if (opt.check) {
        AssumptionReport ar = check_assumptions(spec, opt.check_config);
        if (!ar.pass() && !opt.override_assumptions) throw AssumptionError(ar.summary());
        rep.assumptions = std::move(ar);
    }

    const auto t_sim0 = clock_type::now();
    PathEnsemble ens = simulate(spec, grid, paths, seed, cfg.threads);
    const auto t_sim1 = clock_type::now();
    rep.sim_ms = elapsed_ms(t_sim0, t_sim1);

    rep.layers.resize(grid.steps + 1);

    LayerValues layer;
    layer.index = grid.steps;
    layer.values.resize(paths);
    layer.exercised.assign(paths, 1);
    for (long j = 0; j < paths; ++j)
        layer.values[j] = spec.obstacle(spec.horizon, ens.state(j, grid.steps));
    rep.layers[grid.steps] = stats_of(spec.horizon, layer);

    StepDiagnostics diag;
    for (int i = grid.steps - 1; i >= 0; --i) {
        layer = backward_step(spec, ens, i, layer, cfg, opt.use_obstacle, &diag);
        rep.layers[i] = stats_of(grid.knot(i), layer);
    }
    const auto t_solve1 = clock_type::now();

    rep.value_at_origin = rep.layers[0].mean;
    rep.f_evaluations = diag.f_evaluations;
    rep.guard_activations = diag.guard_activations;
    rep.guard_fraction = diag.f_evaluations > 0
                             ? static_cast<double>(diag.guard_activations) /
                                   static_cast<double>(diag.f_evaluations)
                             : 0.0;
    rep.fallback_cells = diag.fallback_cells;
    rep.solve_ms = elapsed_ms(t_sim1, t_solve1);
    rep.total_ms = elapsed_ms(t_start, t_solve1);
    return rep;
}

long MeshSpec::node_count() const {
    long n = 1;
    for (int k : nodes_per_dim) n *= k;
    return n;
}

MeshSpec default_mesh(const ProblemSpec& spec, int nodes) {
    MeshSpec m;
    m.nodes_per_dim.assign(spec.dim, nodes);
    m.lo = spec.box_lo;
    m.hi = spec.box_hi;
    return m;
}

namespace {

void check_mesh(const ProblemSpec& spec, const MeshSpec& mesh) {
    if (mesh.nodes_per_dim.size() != static_cast<std::size_t>(spec.dim) ||
        mesh.lo.size() != static_cast<std::size_t>(spec.dim) ||
        mesh.hi.size() != static_cast<std::size_t>(spec.dim))
        throw ConfigError("mesh does not match the problem dimension");
    for (int k = 0; k < spec.dim; ++k) {
        if (mesh.nodes_per_dim[k] < 2) throw ConfigError("mesh needs at least 2 nodes per dim");
        if (!(mesh.lo[k] < mesh.hi[k])) throw ConfigError("mesh box is empty");
    }
}

void node_coords(const MeshSpec& mesh, long flat, std::span<double> x) {
    const int d = static_cast<int>(mesh.nodes_per_dim.size());
    for (int k = d - 1; k >= 0; --k) {
        const long nk = mesh.nodes_per_dim[k];
        const long idx = flat % nk;
        flat /= nk;
        x[k] = mesh.lo[k] + (mesh.hi[k] - mesh.lo[k]) * static_cast<double>(idx) /
                                static_cast<double>(nk - 1);
    }
}

/// Multilinear interpolation of per-node values; out-of-box points clamp to
/// the boundary (monotone in the nodal values by construction).
double interp_mesh(const MeshSpec& mesh, std::span<const double> values,
                   std::span<const double> y, bool* clamped) {
    const int d = static_cast<int>(mesh.nodes_per_dim.size());
    long base[2];
    double frac[2];
    long stride[2];
    long s = 1;
    for (int k = d - 1; k >= 0; --k) {
        stride[k] = s;
        s *= mesh.nodes_per_dim[k];
    }
    for (int k = 0; k < d; ++k) {
        double yk = y[k];
        if (yk < mesh.lo[k]) {
            yk = mesh.lo[k];
            if (clamped) *clamped = true;
        } else if (yk > mesh.hi[k]) {
            yk = mesh.hi[k];
            if (clamped) *clamped = true;
        }
        const long nk = mesh.nodes_per_dim[k];
        const double u = (yk - mesh.lo[k]) / (mesh.hi[k] - mesh.lo[k]) *
                         static_cast<double>(nk - 1);
        long i0 = static_cast<long>(u);
        i0 = std::clamp(i0, 0L, nk - 2);
        base[k] = i0;
        frac[k] = std::clamp(u - static_cast<double>(i0), 0.0, 1.0);
    }
    double acc = 0.0;
    const int corners = 1 << d;
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        long flat = 0;
        for (int k = 0; k < d; ++k) {
            const int up = (c >> k) & 1;
            w *= up ? frac[k] : 1.0 - frac[k];
            flat += (base[k] + up) * stride[k];
        }
        acc += w * values[flat];
    }
    return acc;
}

}  // namespace

LayerValues quad_layer_step(const ProblemSpec& spec, const TimeGrid& grid, int i,
                            const LayerValues& next, const MeshSpec& mesh,
                            const QuadratureRule& rule, const QuadSolveOptions& opt,
                            StepDiagnostics* diag, long* boundary_clamps) {
    if (spec.dim > 2)
        throw ConfigError("quadrature backend supports problems of dimension 1 or 2");
    check_mesh(spec, mesh);
    const long n = mesh.node_count();
    if (i < 0 || i >= grid.steps)
        throw std::invalid_argument("backward step index outside the grid");
    if (next.index != i + 1)
        throw std::invalid_argument("backward step needs the adjacent next layer");
    if (next.values.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("next layer size does not match the mesh");
    if (rule.dim != spec.dim) throw ConfigError("quadrature rule dimension mismatch");

    const double h = grid.h;
    const double t = grid.knot(i);
    const int d = spec.dim;
    const double delta = opt.hess_guard_delta * obstacle_scale(spec);
    const double tie = 1e-12 * obstacle_scale(spec);

    LayerValues out;
    out.index = i;
    out.values.resize(n);
    out.exercised.assign(n, 0);
    std::vector<std::uint8_t> guarded_flag(n, 0);
    std::vector<long> clamp_count(n, 0);

    parallel_for_chunks(static_cast<std::size_t>(n), 64, opt.threads,
                        [&](std::size_t nb, std::size_t ne) {
        thread_local std::vector<double> x;
        x.resize(d);
        for (std::size_t node = nb; node < ne; ++node) {
            node_coords(mesh, static_cast<long>(node), x);
            long clamps = 0;
            auto psi = [&](double, std::span<const double> y) {
                bool c = false;
                const double v = interp_mesh(mesh, next.values, y, &c);
                if (c) ++clamps;
                return v;
            };
            DhEstimate e = quad_conditional(spec, t, x, h, psi, rule, opt.weight_options);
            clamp_count[node] = clamps;
            double fv = 0.0;
            bool guarded = false;
            if (!eval_nonlinearity(spec, t, x, e.value, e.grad, e.hess, opt.hess_guard,
                                   delta, fv, guarded))
                throw PathBlowupError("nonlinearity returned a non-finite value",
                                      static_cast<long>(node), i, t);
            guarded_flag[node] = guarded ? 1 : 0;
            const double th = e.value + h * fv;
            if (opt.use_obstacle) {
                const double gv = spec.obstacle(t, x);
                if (gv >= th - tie) {
                    out.values[node] = gv;
                    out.exercised[node] = 1;
                } else {
                    out.values[node] = th;
                }
            } else {
                out.values[node] = th;
            }
        }
    });

    if (diag) {
        diag->f_evaluations += n;
        long long hits = 0;
        for (long j = 0; j < n; ++j) hits += guarded_flag[j];
        diag->guard_activations += hits;
    }
    if (boundary_clamps)
        *boundary_clamps += std::accumulate(clamp_count.begin(), clamp_count.end(), 0L);
    return out;
}

SolveReport solve_quadrature(const ProblemSpec& spec, const TimeGrid& grid,
                             const MeshSpec& mesh, const QuadratureRule& rule,
                             const QuadSolveOptions& opt) {
    spec.validate();
    if (spec.dim > 2)
        throw ConfigError("quadrature backend supports problems of dimension 1 or 2");
    check_mesh(spec, mesh);
    if (rule.dim != spec.dim) throw ConfigError("quadrature rule dimension mismatch");

    const auto t_start = clock_type::now();
    const long n = mesh.node_count();

    SolveReport rep;
    rep.backend = "quadrature";
    rep.steps = grid.steps;
    rep.paths = 0;
    rep.seed = 0;
    rep.layers.resize(grid.steps + 1);

    LayerValues layer;
    layer.index = grid.steps;
    layer.values.resize(n);
    layer.exercised.assign(n, 1);
    {
        std::vector<double> x(spec.dim);
        for (long node = 0; node < n; ++node) {
            node_coords(mesh, node, x);
            layer.values[node] = spec.obstacle(spec.horizon, x);
        }
    }
    rep.layers[grid.steps] = stats_of(spec.horizon, layer);

    StepDiagnostics diag;
    long clamps = 0;
    for (int i = grid.steps - 1; i >= 0; --i) {
        layer = quad_layer_step(spec, grid, i, layer, mesh, rule, opt, &diag, &clamps);
        rep.layers[i] = stats_of(grid.knot(i), layer);
    }

    rep.value_at_origin = interp_mesh(mesh, layer.values, spec.eval_point, nullptr);
    rep.f_evaluations = diag.f_evaluations;
    rep.guard_activations = diag.guard_activations;
    rep.guard_fraction = diag.f_evaluations > 0
                             ? static_cast<double>(diag.guard_activations) /
                                   static_cast<double>(diag.f_evaluations)
                             : 0.0;
    rep.fallback_cells = 0;
    rep.boundary_clamps = clamps;
    const auto t_end = clock_type::now();
    rep.solve_ms = elapsed_ms(t_start, t_end);
    rep.total_ms = rep.solve_ms;
    return rep;
}

}  // namespace nlobs
