#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nlobs {

/// Configuration or CLI input rejected before any numerics ran.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A path produced a non-finite state during simulation.
struct PathBlowupError : std::runtime_error {
    PathBlowupError(std::string msg, long path, int step, double t)
        : std::runtime_error(std::move(msg)), path(path), step(step), t(t) {}
    long path;
    int step;
    double t;
};

/// Diffusion matrix not invertible where a weight or step needed it.
struct SingularDiffusionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Not enough data to perform the requested fit or analysis.
struct InsufficientDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Problem fails the solver's structural preconditions and no override was given.
struct AssumptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Lattice parameters produce a probability outside [0,1].
struct InvalidLatticeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Render a double with 9 significant digits, locale independent.
inline std::string format_sig9(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    return std::string(buf, res.ptr);
}

/// Compensated accumulator; sum is order insensitive to ~1 ulp.
struct Kahan {
    double sum = 0.0;
    double carry = 0.0;
    void add(double x) {
        double y = x - carry;
        double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    double value() const { return sum; }
};

/// Run fn(begin, end) over [0, count) in fixed-size chunks.
///
/// Chunk boundaries depend only on `count` and `grain`, never on the worker
/// count, so any reduction that combines per-chunk results in chunk order is
/// bit-identical across thread counts. `threads <= 0` uses the hardware count.
inline void parallel_for_chunks(std::size_t count, std::size_t grain, int threads,
                                const std::function<void(std::size_t, std::size_t)>& fn) {
    if (count == 0) return;
    if (grain == 0) grain = 1;
    std::size_t nchunks = (count + grain - 1) / grain;
    unsigned hw = std::thread::hardware_concurrency();
    unsigned nthreads = threads > 0 ? static_cast<unsigned>(threads) : (hw ? hw : 1);
    if (nthreads > nchunks) nthreads = static_cast<unsigned>(nchunks);
    if (nthreads <= 1) {
        for (std::size_t c = 0; c < nchunks; ++c) {
            std::size_t b = c * grain;
            std::size_t e = std::min(count, b + grain);
            fn(b, e);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    std::vector<std::exception_ptr> errs(nthreads);
    for (unsigned w = 0; w < nthreads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t c = w; c < nchunks; c += nthreads) {
                    std::size_t b = c * grain;
                    std::size_t e = std::min(count, b + grain);
                    fn(b, e);
                }
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

/// Solve A y = b in place for a small dense row-major A (destroyed).
/// Partial pivoting; returns false when the pivot falls below `floor`
/// relative to the largest row entry.
inline bool solve_small(double* a, double* b, int d, double floor = 1e-13) {
    for (int k = 0; k < d; ++k) {
        int piv = k;
        double best = std::abs(a[k * d + k]);
        for (int r = k + 1; r < d; ++r) {
            double v = std::abs(a[r * d + k]);
            if (v > best) { best = v; piv = r; }
        }
        if (!(best > floor)) return false;
        if (piv != k) {
            for (int c = k; c < d; ++c) std::swap(a[k * d + c], a[piv * d + c]);
            std::swap(b[k], b[piv]);
        }
        double inv = 1.0 / a[k * d + k];
        for (int r = k + 1; r < d; ++r) {
            double f = a[r * d + k] * inv;
            if (f == 0.0) continue;
            for (int c = k; c < d; ++c) a[r * d + c] -= f * a[k * d + c];
            b[r] -= f * b[k];
        }
    }
    for (int k = d - 1; k >= 0; --k) {
        double s = b[k];
        for (int c = k + 1; c < d; ++c) s -= a[k * d + c] * b[c];
        b[k] = s / a[k * d + k];
    }
    return true;
}

/// Invert a small dense row-major matrix. Returns false if singular.
/// Uses thread-local scratch; safe to call concurrently, not reentrantly.
inline bool invert_small(const double* a, double* out, int d, double floor = 1e-13) {
    thread_local std::vector<double> work, col, scratch;
    work.assign(a, a + static_cast<std::size_t>(d) * d);
    col.resize(d);
    scratch.resize(static_cast<std::size_t>(d) * d);
    for (int j = 0; j < d; ++j) {
        std::copy(work.begin(), work.end(), scratch.begin());
        std::fill(col.begin(), col.end(), 0.0);
        col[j] = 1.0;
        if (!solve_small(scratch.data(), col.data(), d, floor)) return false;
        for (int i = 0; i < d; ++i) out[i * d + j] = col[i];
    }
    return true;
}

}  // namespace nlobs
