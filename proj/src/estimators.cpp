#include "nlobs/estimators.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nlobs/common.hpp"

namespace nlobs {

namespace {

int bin_of(const std::vector<double>& splits, double v) {
    return static_cast<int>(std::upper_bound(splits.begin(), splits.end(), v) - splits.begin());
}

}  // namespace

int Partition::locate(std::span<const double> x) const {
    long flat = 0;
    for (int k = 0; k < dim; ++k) {
        double v = std::clamp(x[k], box_lo[k], box_hi[k]);
        flat = flat * bins[k] + bin_of(splits[k], v);
    }
    return cell_of_flat[static_cast<std::size_t>(flat)];
}

Partition build_partition(std::span<const double> points, long n, int dim, int cells_per_dim,
                          long min_cell_count) {
    if (n < 1) throw InsufficientDataError("cannot partition an empty cloud");
    if (dim < 1) throw ConfigError("partition dim must be >= 1");
    if (cells_per_dim < 1) throw ConfigError("cells_per_dim must be >= 1");
    if (points.size() < static_cast<std::size_t>(n) * dim)
        throw ConfigError("point buffer shorter than n * dim");
    if (min_cell_count < 1) min_cell_count = 1;

    Partition p;
    p.dim = dim;
    p.splits.resize(dim);
    p.box_lo.assign(dim, 0.0);
    p.box_hi.assign(dim, 0.0);
    p.bins.resize(dim);

    std::vector<double> col(n);
    for (int k = 0; k < dim; ++k) {
        for (long j = 0; j < n; ++j) col[j] = points[j * dim + k];
        std::sort(col.begin(), col.end());
        p.box_lo[k] = col.front();
        p.box_hi[k] = col.back();
        auto& cuts = p.splits[k];
        for (int c = 1; c < cells_per_dim; ++c) {
            long pos = (static_cast<long>(c) * n) / cells_per_dim;
            if (pos <= 0 || pos >= n) continue;
            if (col[pos - 1] == col[pos]) continue;  // no separation at this quantile
            double cut = 0.5 * (col[pos - 1] + col[pos]);
            if (!cuts.empty() && !(cut > cuts.back())) continue;
            cuts.push_back(cut);
        }
        p.bins[k] = static_cast<int>(cuts.size()) + 1;
    }

    long flat_count = 1;
    for (int k = 0; k < dim; ++k) flat_count *= p.bins[k];

    // raw per-tensor-cell occupation
    std::vector<long> flat_counts(flat_count, 0);
    for (long j = 0; j < n; ++j) {
        long flat = 0;
        for (int k = 0; k < dim; ++k) flat = flat * p.bins[k] + bin_of(p.splits[k], points[j * dim + k]);
        ++flat_counts[flat];
    }

    // greedy merge in flat order (last dimension fastest) until every merged
    // cell reaches the minimum; a short tail joins its predecessor
    p.cell_of_flat.assign(flat_count, 0);
    long run = 0;
    int cell = 0;
    std::vector<long> merged;
    for (long f = 0; f < flat_count; ++f) {
        p.cell_of_flat[f] = cell;
        run += flat_counts[f];
        if (run >= min_cell_count && f + 1 < flat_count) {
            merged.push_back(run);
            run = 0;
            ++cell;
        }
    }
    if (run >= min_cell_count || merged.empty()) {
        merged.push_back(run);
    } else {
        // fold the deficient tail into the previous cell
        for (long f = flat_count - 1; f >= 0 && p.cell_of_flat[f] == cell; --f)
            p.cell_of_flat[f] = cell - 1;
        merged.back() += run;
    }
    p.cell_count = static_cast<int>(merged.size());
    p.counts = std::move(merged);
    return p;
}

double LayerEstimator::eval_channel(std::span<const double> x, int channel) const {
    thread_local std::vector<double> xc;
    xc.resize(dim);
    for (int k = 0; k < dim; ++k)
        xc[k] = std::clamp(x[k], partition.box_lo[k], partition.box_hi[k]);
    int c = partition.locate(xc);
    const double* b = coef.data() +
                      (static_cast<std::size_t>(c) * channels + channel) * (dim + 1);
    const double* ctr = centers.data() + static_cast<std::size_t>(c) * dim;
    double acc = b[0];
    for (int k = 0; k < dim; ++k) acc += b[k + 1] * (xc[k] - ctr[k]);
    return acc;
}

void LayerEstimator::eval_all(std::span<const double> x, std::span<double> out) const {
    thread_local std::vector<double> xc;
    xc.resize(dim);
    for (int k = 0; k < dim; ++k)
        xc[k] = std::clamp(x[k], partition.box_lo[k], partition.box_hi[k]);
    int c = partition.locate(xc);
    const double* ctr = centers.data() + static_cast<std::size_t>(c) * dim;
    const double* block = coef.data() + static_cast<std::size_t>(c) * channels * (dim + 1);
    for (int t = 0; t < channels; ++t) {
        const double* b = block + static_cast<std::size_t>(t) * (dim + 1);
        double acc = b[0];
        for (int k = 0; k < dim; ++k) acc += b[k + 1] * (xc[k] - ctr[k]);
        out[t] = acc;
    }
}

LayerEstimator fit_layer(const Partition& part, std::span<const double> points, long n, int dim,
                         const std::vector<std::span<const double>>& targets, int threads) {
    if (dim != part.dim) throw ConfigError("fit dim != partition dim");
    if (n < 1) throw InsufficientDataError("cannot fit an empty cloud");
    if (targets.empty()) throw ConfigError("need at least one target channel");
    for (const auto& t : targets)
        if (t.size() < static_cast<std::size_t>(n))
            throw ConfigError("target channel shorter than the cloud");

    const int nc = part.cell_count;
    const int q = dim + 1;
    const int ch = static_cast<int>(targets.size());

    LayerEstimator est;
    est.partition = part;
    est.dim = dim;
    est.channels = ch;
    est.centers.assign(static_cast<std::size_t>(nc) * dim, 0.0);
    est.coef.assign(static_cast<std::size_t>(nc) * ch * q, 0.0);

    // stable counting sort of point indices by cell
    std::vector<int> cell_of(n);
    std::vector<long> offset(nc + 1, 0);
    for (long j = 0; j < n; ++j) {
        int c = part.locate(points.subspan(static_cast<std::size_t>(j) * dim,
                                           static_cast<std::size_t>(dim)));
        cell_of[j] = c;
        ++offset[c + 1];
    }
    for (int c = 0; c < nc; ++c) offset[c + 1] += offset[c];
    std::vector<long> order(n);
    {
        std::vector<long> cursor(offset.begin(), offset.end() - 1);
        for (long j = 0; j < n; ++j) order[cursor[cell_of[j]]++] = j;
    }

    std::vector<int> fallback(nc, 0);
    parallel_for_chunks(static_cast<std::size_t>(nc), 1, threads,
                        [&](std::size_t cb, std::size_t ce) {
        std::vector<Kahan> gram(static_cast<std::size_t>(q) * q);
        std::vector<Kahan> rhs(static_cast<std::size_t>(q) * ch);
        std::vector<Kahan> mean(dim);
        std::vector<double> basis(q);
        for (std::size_t c = cb; c < ce; ++c) {
            const long b0 = offset[c], b1 = offset[c + 1];
            const long cnt = b1 - b0;
            double* ctr = est.centers.data() + c * dim;
            if (cnt == 0) {
                // empty merged cell (possible only when the whole cloud was
                // deficient); pin the center to the box middle, zero fit
                for (int k = 0; k < dim; ++k)
                    ctr[k] = 0.5 * (part.box_lo[k] + part.box_hi[k]);
                fallback[c] = 1;
                continue;
            }
            for (int k = 0; k < dim; ++k) mean[k] = Kahan{};
            for (long r = b0; r < b1; ++r) {
                const double* x = points.data() + static_cast<std::size_t>(order[r]) * dim;
                for (int k = 0; k < dim; ++k) mean[k].add(x[k]);
            }
            for (int k = 0; k < dim; ++k) ctr[k] = mean[k].sum / static_cast<double>(cnt);

            for (auto& v : gram) v = Kahan{};
            for (auto& v : rhs) v = Kahan{};
            for (long r = b0; r < b1; ++r) {
                const long j = order[r];
                const double* x = points.data() + static_cast<std::size_t>(j) * dim;
                basis[0] = 1.0;
                for (int k = 0; k < dim; ++k) basis[k + 1] = x[k] - ctr[k];
                for (int a = 0; a < q; ++a)
                    for (int b = a; b < q; ++b) gram[a * q + b].add(basis[a] * basis[b]);
                for (int t = 0; t < ch; ++t) {
                    const double y = targets[t][j];
                    for (int a = 0; a < q; ++a) rhs[a * ch + t].add(basis[a] * y);
                }
            }

            Eigen::MatrixXd G(q, q);
            for (int a = 0; a < q; ++a)
                for (int b = 0; b < q; ++b)
                    G(a, b) = (a <= b ? gram[a * q + b].sum : gram[b * q + a].sum);
            Eigen::MatrixXd R(q, ch);
            for (int a = 0; a < q; ++a)
                for (int t = 0; t < ch; ++t) R(a, t) = rhs[a * ch + t].sum;

            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
            cod.setThreshold(1e-10);
            cod.compute(G);
            if (cod.rank() < q) fallback[c] = 1;
            Eigen::MatrixXd beta = cod.solve(R);
            double* out = est.coef.data() + c * static_cast<std::size_t>(ch) * q;
            for (int t = 0; t < ch; ++t)
                for (int a = 0; a < q; ++a) out[static_cast<std::size_t>(t) * q + a] = beta(a, t);
        }
    });
    est.fallback_cells = std::accumulate(fallback.begin(), fallback.end(), 0);
    return est;
}

int canonical_channel_count(int dim) { return 1 + dim + dim * (dim + 1) / 2; }

DhEstimate evaluate(const LayerEstimator& est, std::span<const double> x) {
    const int d = est.dim;
    if (est.channels != canonical_channel_count(d))
        throw std::invalid_argument("estimator does not carry the canonical channel set");
    DhEstimate e;
    e.grad.resize(d);
    e.hess.assign(static_cast<std::size_t>(d) * d, 0.0);
    e.value = est.eval_channel(x, 0);
    for (int k = 0; k < d; ++k) e.grad[k] = est.eval_channel(x, 1 + k);
    int t = 1 + d;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            double v = est.eval_channel(x, t++);
            e.hess[i * d + j] = e.hess[j * d + i] = v;
        }
    return e;
}

QuadratureRule QuadratureRule::gauss_hermite(int points_per_dim, int dim) {
    if (points_per_dim < 1) throw ConfigError("quadrature needs at least one point per dim");
    if (dim < 1) throw ConfigError("quadrature dim must be >= 1");
    double total = std::pow(static_cast<double>(points_per_dim), dim);
    if (total > 2e7) throw ConfigError("tensor quadrature rule too large");

    const int q = points_per_dim;
    std::vector<double> n1(q), w1(q);
    if (q == 1) {
        n1[0] = 0.0;
        w1[0] = 1.0;
    } else {
        // Golub-Welsch on the probabilists' Hermite recurrence: beta_k = sqrt(k)
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(q, q);
        for (int k = 0; k + 1 < q; ++k) {
            double b = std::sqrt(static_cast<double>(k + 1));
            J(k, k + 1) = J(k + 1, k) = b;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eg(J);

        // orthonormal recurrence he_{k+1} = (x he_k - sqrt(k) he_{k-1}) / sqrt(k+1),
        // so he_q' = sqrt(q) he_{q-1}; returns (he_q, he_{q-1})
        auto he_pair = [q](double x) {
            double prev = 0.0, cur = 1.0;
            for (int k = 0; k < q; ++k) {
                double next = (x * cur - std::sqrt(double(k)) * prev) / std::sqrt(double(k + 1));
                prev = cur;
                cur = next;
            }
            return std::pair<double, double>{cur, prev};
        };
        for (int i = 0; i < q; ++i) {
            double x = eg.eigenvalues()(i);
            for (int it = 0; it < 3; ++it) {  // polish the eigenvalue to a root
                auto [hq, hq1] = he_pair(x);
                double step = hq / (std::sqrt(double(q)) * hq1);
                if (!std::isfinite(step)) break;
                x -= step;
            }
            n1[i] = x;
            double hq1 = he_pair(x).second;
            w1[i] = 1.0 / (q * hq1 * hq1);
        }
        // the rule is symmetric; enforce it exactly so odd moments cancel
        for (int i = 0; i < q / 2; ++i) {
            double m = 0.5 * (n1[q - 1 - i] - n1[i]);
            n1[i] = -m;
            n1[q - 1 - i] = m;
            double w = 0.5 * (w1[i] + w1[q - 1 - i]);
            w1[i] = w1[q - 1 - i] = w;
        }
        if (q % 2 == 1) n1[q / 2] = 0.0;
        Kahan wsum;
        for (double w : w1) wsum.add(w);
        for (double& w : w1) w /= wsum.sum;
    }

    QuadratureRule r;
    r.dim = dim;
    r.points_per_dim = q;
    long count = 1;
    for (int k = 0; k < dim; ++k) count *= q;
    r.nodes.resize(static_cast<std::size_t>(count) * dim);
    r.weights.resize(count);
    std::vector<int> digit(dim, 0);
    for (long i = 0; i < count; ++i) {
        double w = 1.0;
        for (int k = 0; k < dim; ++k) {
            r.nodes[i * dim + k] = n1[digit[k]];
            w *= w1[digit[k]];
        }
        r.weights[i] = w;
        for (int k = dim - 1; k >= 0; --k) {
            if (++digit[k] < q) break;
            digit[k] = 0;
        }
    }
    return r;
}

DhEstimate quad_conditional(const ProblemSpec& spec, double t, std::span<const double> x,
                            double h,
                            const std::function<double(double, std::span<const double>)>& psi,
                            const QuadratureRule& rule, const WeightOptions& opt) {
    const int d = spec.dim;
    if (rule.dim != d) throw std::invalid_argument("quadrature rule dim != problem dim");
    double mass = 0.0;
    for (double w : rule.weights) mass += w;
    if (std::abs(mass - 1.0) > 1e-6)
        throw std::invalid_argument("quadrature weights do not integrate the constant 1");
    if (!(h > 0.0)) throw ConfigError("step size must be positive");

    thread_local std::vector<double> mu, sg, dw, y;
    mu.resize(d);
    sg.resize(static_cast<std::size_t>(d) * d);
    dw.resize(d);
    y.resize(d);
    spec.drift(t, x, mu);
    spec.diffusion(t, x, sg);
    const double sq = std::sqrt(h);

    DhEstimate e;
    e.grad.assign(d, 0.0);
    e.hess.assign(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> raw_hess(static_cast<std::size_t>(d) * d, 0.0);

    for (long i = 0; i < rule.node_count(); ++i) {
        const double* z = rule.nodes.data() + static_cast<std::size_t>(i) * d;
        for (int k = 0; k < d; ++k) dw[k] = sq * z[k];
        for (int r = 0; r < d; ++r) {
            double acc = x[r] + mu[r] * h;
            for (int k = 0; k < d; ++k) acc += sg[r * d + k] * dw[k];
            y[r] = acc;
        }
        HermiteWeights w = weights(spec, t, x, dw, h, opt);
        const double pv = psi(t + h, y);
        const double wq = rule.weights[i];
        e.value += wq * pv;
        for (int k = 0; k < d; ++k) e.grad[k] += wq * pv * w.h1[k];
        for (int k = 0; k < d * d; ++k) raw_hess[k] += wq * pv * w.h2[k];
    }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            e.hess[i * d + j] = 0.5 * (raw_hess[i * d + j] + raw_hess[j * d + i]);
    return e;
}

}  // namespace nlobs
