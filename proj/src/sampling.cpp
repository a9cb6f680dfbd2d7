#include "nlobs/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nlobs/common.hpp"
#include "nlobs/rng.hpp"

namespace nlobs {

TimeGrid::TimeGrid(int steps_, double horizon_) : steps(steps_), horizon(horizon_) {
    if (steps < 1) throw ConfigError("time grid needs at least one step");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    h = horizon / steps;
}

void euler_step(const ProblemSpec& spec, double t, std::span<const double> x, double h,
                std::span<const double> dw, std::span<double> out) {
    const int d = spec.dim;
    thread_local std::vector<double> mu, sg;
    mu.resize(d);
    sg.resize(static_cast<std::size_t>(d) * d);
    spec.drift(t, x, mu);
    spec.diffusion(t, x, sg);
    for (int i = 0; i < d; ++i) {
        double acc = x[i] + mu[i] * h;
        const double* row = sg.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) acc += row[j] * dw[j];
        out[i] = acc;
    }
    for (int i = 0; i < d; ++i)
        if (!std::isfinite(out[i]))
            throw PathBlowupError("non-finite state after Euler step", -1, -1, t);
}

PathEnsemble simulate(const ProblemSpec& spec, const TimeGrid& grid, long count,
                      std::uint64_t seed, int threads) {
    spec.validate();
    if (count < 1) throw ConfigError("path count must be positive");
    const int d = spec.dim;
    const int n = grid.steps;
    PathEnsemble ens;
    ens.grid = grid;
    ens.dim = d;
    ens.count = count;
    ens.seed = seed;
    ens.states.resize(static_cast<std::size_t>(count) * (n + 1) * d);
    ens.increments.resize(static_cast<std::size_t>(count) * n * d);

    const double sqrt_h = std::sqrt(grid.h);
    parallel_for_chunks(static_cast<std::size_t>(count), 2048, threads,
                        [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            double* st = ens.states.data() + j * (n + 1) * d;
            double* inc = ens.increments.data() + j * static_cast<std::size_t>(n) * d;
            std::copy(spec.eval_point.begin(), spec.eval_point.end(), st);
            for (int i = 0; i < n; ++i) {
                double* dw = inc + static_cast<std::size_t>(i) * d;
                for (int k = 0; k < d; ++k)
                    dw[k] = sqrt_h * normal_draw(seed, j, static_cast<std::uint32_t>(i),
                                                 static_cast<std::uint32_t>(k));
                std::span<const double> xi{st + static_cast<std::size_t>(i) * d,
                                           static_cast<std::size_t>(d)};
                std::span<double> xn{st + static_cast<std::size_t>(i + 1) * d,
                                     static_cast<std::size_t>(d)};
                try {
                    euler_step(spec, grid.knot(i), xi, grid.h, {dw, static_cast<std::size_t>(d)},
                               xn);
                } catch (const PathBlowupError& e) {
                    throw PathBlowupError(e.what(), static_cast<long>(j), i, grid.knot(i));
                }
            }
        }
    });
    return ens;
}

HermiteWeights weights(const ProblemSpec& spec, double t, std::span<const double> x,
                       std::span<const double> dw, double h, const WeightOptions& opt) {
    const int d = spec.dim;
    if (!(h > 0.0)) throw ConfigError("step size must be positive");
    thread_local std::vector<double> sg, inv, dwt;
    sg.resize(static_cast<std::size_t>(d) * d);
    inv.resize(static_cast<std::size_t>(d) * d);
    dwt.assign(dw.begin(), dw.end());

    if (opt.truncate_increment) {
        double bound = opt.trunc_scale * std::sqrt(2.0 * h * std::log(1.0 / h));
        if (std::isfinite(bound) && bound > 0.0)
            for (int k = 0; k < d; ++k) dwt[k] = std::clamp(dwt[k], -bound, bound);
    }

    spec.diffusion(t, x, sg);
    if (!invert_small(sg.data(), inv.data(), d))
        throw SingularDiffusionError("diffusion matrix is numerically singular");

    HermiteWeights w;
    w.h0 = 1.0;
    w.h1.resize(d);
    w.h2.resize(static_cast<std::size_t>(d) * d);

    // y = sigma^{-T} dw;  ainv = sigma^{-T} sigma^{-1}
    thread_local std::vector<double> y;
    y.resize(d);
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += inv[k * d + i] * dwt[k];
        y[i] = acc;
        w.h1[i] = acc / h;
    }
    const double inv_h2 = 1.0 / (h * h);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            double ainv = 0.0;
            for (int k = 0; k < d; ++k) ainv += inv[k * d + i] * inv[k * d + j];
            w.h2[i * d + j] = (y[i] * y[j] - h * ainv) * inv_h2;
        }
    }
    return w;
}

void write_ensemble(const std::filesystem::path& file, const PathEnsemble& ens) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open ensemble file for writing: " + file.string());
    out.write("PFE1", 4);
    std::uint64_t hdr[4] = {static_cast<std::uint64_t>(ens.dim),
                            static_cast<std::uint64_t>(ens.grid.steps),
                            static_cast<std::uint64_t>(ens.count), ens.seed};
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    out.write(reinterpret_cast<const char*>(ens.states.data()),
              static_cast<std::streamsize>(ens.states.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(ens.increments.data()),
              static_cast<std::streamsize>(ens.increments.size() * sizeof(double)));
    if (!out) throw ConfigError("short write on ensemble file: " + file.string());
}

PathEnsemble read_ensemble(const std::filesystem::path& file, double horizon) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot open ensemble file: " + file.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PFE1", 4) != 0)
        throw ConfigError("not an ensemble file: " + file.string());
    std::uint64_t hdr[4];
    in.read(reinterpret_cast<char*>(hdr), sizeof hdr);
    if (!in) throw ConfigError("truncated ensemble header: " + file.string());

    PathEnsemble ens;
    ens.dim = static_cast<int>(hdr[0]);
    ens.grid = TimeGrid(static_cast<int>(hdr[1]), horizon);
    ens.count = static_cast<long>(hdr[2]);
    ens.seed = hdr[3];
    if (ens.dim < 1 || ens.count < 1) throw ConfigError("bad ensemble dimensions");
    ens.states.resize(static_cast<std::size_t>(ens.count) * (ens.grid.steps + 1) * ens.dim);
    ens.increments.resize(static_cast<std::size_t>(ens.count) * ens.grid.steps * ens.dim);
    in.read(reinterpret_cast<char*>(ens.states.data()),
            static_cast<std::streamsize>(ens.states.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(ens.increments.data()),
            static_cast<std::streamsize>(ens.increments.size() * sizeof(double)));
    if (!in) throw ConfigError("truncated ensemble payload: " + file.string());
    return ens;
}

}  // namespace nlobs
