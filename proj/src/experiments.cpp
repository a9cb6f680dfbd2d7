#include "nlobs/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "nlobs/common.hpp"

namespace nlobs {

namespace {

using json = nlohmann::json;

int parse_int(const std::string& s, const std::string& key) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("override '" + key + "': '" + s + "' is not an integer");
    return v;
}

long parse_long(const std::string& s, const std::string& key) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("override '" + key + "': '" + s + "' is not an integer");
    return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("override '" + key + "': '" + s + "' is not an unsigned integer");
    return v;
}

double parse_double(const std::string& s, const std::string& key) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("override '" + key + "': '" + s + "' is not a number");
    return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("override '" + key + "': '" + s + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) out.push_back(cur);
    return out;
}

void require_keys(const json& j, const std::set<std::string>& allowed, const char* where) {
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
}

template <typename T>
T get_as(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void parse_estimator(const json& j, EstimatorConfig& e) {
    require_keys(j, {"cells_per_dim", "min_cell_count", "truncate_increments", "trunc_scale",
                     "clamp_values", "value_bound", "hess_guard", "hess_guard_delta", "threads"},
                 "estimator");
    if (j.contains("cells_per_dim")) e.cells_per_dim = get_as<int>(j, "cells_per_dim");
    if (j.contains("min_cell_count")) e.min_cell_count = get_as<long>(j, "min_cell_count");
    if (j.contains("truncate_increments"))
        e.truncate_increments = get_as<bool>(j, "truncate_increments");
    if (j.contains("trunc_scale")) e.trunc_scale = get_as<double>(j, "trunc_scale");
    if (j.contains("clamp_values")) e.clamp_values = get_as<bool>(j, "clamp_values");
    if (j.contains("value_bound")) e.value_bound = get_as<double>(j, "value_bound");
    if (j.contains("hess_guard")) e.hess_guard = get_as<bool>(j, "hess_guard");
    if (j.contains("hess_guard_delta")) e.hess_guard_delta = get_as<double>(j, "hess_guard_delta");
    if (j.contains("threads")) e.threads = get_as<int>(j, "threads");
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    require_keys(j, {"problem", "overrides", "backend", "steps", "paths", "seeds", "estimator",
                     "mesh_nodes", "mesh_lo", "mesh_hi", "quad_points", "use_obstacle",
                     "override_assumptions", "timings", "threads", "out_dir", "out_file"},
                 "config");
    if (!j.contains("problem")) throw ConfigError("config: missing required key 'problem'");

    RunConfig c;
    c.problem = get_as<std::string>(j, "problem");
    if (j.contains("backend")) c.backend = get_as<std::string>(j, "backend");
    if (j.contains("steps")) c.steps = get_as<std::vector<int>>(j, "steps");
    if (j.contains("paths")) c.paths = get_as<std::vector<long>>(j, "paths");
    if (j.contains("seeds")) c.seeds = get_as<std::vector<std::uint64_t>>(j, "seeds");
    if (j.contains("estimator")) {
        if (!j.at("estimator").is_object())
            throw ConfigError("config key 'estimator': must be an object");
        parse_estimator(j.at("estimator"), c.estimator);
    }
    if (j.contains("overrides")) {
        const json& o = j.at("overrides");
        if (!o.is_object()) throw ConfigError("config key 'overrides': must be an object");
        for (const auto& item : o.items()) {
            if (!item.value().is_number())
                throw ConfigError("override '" + item.key() + "' must be numeric");
            c.overrides[item.key()] = item.value().get<double>();
        }
    }
    if (j.contains("mesh_nodes")) c.mesh_nodes = get_as<int>(j, "mesh_nodes");
    if (j.contains("mesh_lo")) c.mesh_lo = get_as<std::vector<double>>(j, "mesh_lo");
    if (j.contains("mesh_hi")) c.mesh_hi = get_as<std::vector<double>>(j, "mesh_hi");
    if (j.contains("quad_points")) c.quad_points = get_as<int>(j, "quad_points");
    if (j.contains("use_obstacle")) c.use_obstacle = get_as<bool>(j, "use_obstacle");
    if (j.contains("override_assumptions"))
        c.override_assumptions = get_as<bool>(j, "override_assumptions");
    if (j.contains("timings")) c.timings = get_as<bool>(j, "timings");
    if (j.contains("threads")) c.threads = get_as<int>(j, "threads");
    if (j.contains("out_dir")) c.out_dir = get_as<std::string>(j, "out_dir");
    if (j.contains("out_file")) c.out_file = get_as<std::string>(j, "out_file");
    return c;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    if (key == "problem") {
        problem = value;
    } else if (key == "backend") {
        backend = value;
    } else if (key == "out_dir") {
        out_dir = value;
    } else if (key == "out_file") {
        out_file = value;
    } else if (key == "steps") {
        steps.clear();
        for (const auto& tok : split_list(value)) steps.push_back(parse_int(tok, key));
    } else if (key == "paths") {
        paths.clear();
        for (const auto& tok : split_list(value)) paths.push_back(parse_long(tok, key));
    } else if (key == "seeds") {
        seeds.clear();
        for (const auto& tok : split_list(value)) seeds.push_back(parse_u64(tok, key));
    } else if (key == "mesh_lo" || key == "mesh_hi") {
        auto& dst = key == "mesh_lo" ? mesh_lo : mesh_hi;
        dst.clear();
        for (const auto& tok : split_list(value)) dst.push_back(parse_double(tok, key));
    } else if (key == "mesh_nodes") {
        mesh_nodes = parse_int(value, key);
    } else if (key == "quad_points") {
        quad_points = parse_int(value, key);
    } else if (key == "threads") {
        threads = parse_int(value, key);
    } else if (key == "timings") {
        timings = parse_bool(value, key);
    } else if (key == "use_obstacle") {
        use_obstacle = parse_bool(value, key);
    } else if (key == "override_assumptions") {
        override_assumptions = parse_bool(value, key);
    } else if (key == "estimator.cells_per_dim") {
        estimator.cells_per_dim = parse_int(value, key);
    } else if (key == "estimator.min_cell_count") {
        estimator.min_cell_count = parse_long(value, key);
    } else if (key == "estimator.threads") {
        estimator.threads = parse_int(value, key);
    } else if (key == "estimator.truncate_increments") {
        estimator.truncate_increments = parse_bool(value, key);
    } else if (key == "estimator.trunc_scale") {
        estimator.trunc_scale = parse_double(value, key);
    } else if (key == "estimator.clamp_values") {
        estimator.clamp_values = parse_bool(value, key);
    } else if (key == "estimator.value_bound") {
        estimator.value_bound = parse_double(value, key);
    } else if (key == "estimator.hess_guard") {
        estimator.hess_guard = parse_bool(value, key);
    } else if (key == "estimator.hess_guard_delta") {
        estimator.hess_guard_delta = parse_double(value, key);
    } else {
        overrides[key] = parse_double(value, key);  // problem parameter
    }
}

void RunConfig::validate() const {
    if (problem.empty()) throw ConfigError("config: 'problem' must be nonempty");
    if (backend != "mc" && backend != "quadrature")
        throw ConfigError("config: backend must be 'mc' or 'quadrature', got '" + backend + "'");
    if (steps.empty()) throw ConfigError("config: 'steps' must be nonempty");
    for (int n : steps)
        if (n < 1) throw ConfigError("config: every entry of 'steps' must be >= 1");
    if (paths.empty()) throw ConfigError("config: 'paths' must be nonempty");
    for (long p : paths)
        if (p < 1) throw ConfigError("config: every entry of 'paths' must be >= 1");
    if (seeds.empty()) throw ConfigError("config: 'seeds' must be nonempty");
    if (estimator.cells_per_dim < 1) throw ConfigError("config: estimator.cells_per_dim >= 1");
    if (estimator.min_cell_count < 0) throw ConfigError("config: estimator.min_cell_count >= 0");
    if (mesh_nodes < 2) throw ConfigError("config: mesh_nodes must be >= 2");
    if (quad_points < 1) throw ConfigError("config: quad_points must be >= 1");
    if (mesh_lo.size() != mesh_hi.size())
        throw ConfigError("config: mesh_lo and mesh_hi must have equal length");
    if (threads < 0) throw ConfigError("config: threads must be >= 0");
}

namespace {

double take(std::map<std::string, double>& m, const std::string& key, double fallback) {
    auto it = m.find(key);
    if (it == m.end()) return fallback;
    double v = it->second;
    m.erase(it);
    return v;
}

void reject_leftovers(const std::map<std::string, double>& m, const std::string& id) {
    if (!m.empty())
        throw ConfigError("problem '" + id + "' has no parameter '" + m.begin()->first + "'");
}

}  // namespace

std::vector<std::string> registered_problems() {
    return {"geometric_put_3d", "geometric_put_reduced_1d", "indifference_2+1d",
            "indifference_reduced_1+1d"};
}

ProblemSpec build_problem(const std::string& id, const std::map<std::string, double>& overrides) {
    std::map<std::string, double> m = overrides;
    if (id == "geometric_put_3d") {
        const double rate = take(m, "rate", 0.03);
        const double sigma = take(m, "sigma", 0.1);
        const double strike = take(m, "strike", 8.0);
        const double horizon = take(m, "horizon", 1.0);
        const double s0sq = take(m, "sigma0_sq", 1.0);
        const bool drift_in = take(m, "drift_in_linear_part", 1.0) != 0.0;
        const double spot = take(m, "spot", 2.0);
        reject_leftovers(m, id);
        return make_geometric_put(rate, {sigma, sigma, sigma}, strike, horizon, s0sq, drift_in,
                                  {spot, spot, spot});
    }
    if (id == "geometric_put_reduced_1d") {
        const double drift_bar = take(m, "drift_bar", 0.09);
        const double vol_bar = take(m, "vol_bar", 0.1 * std::sqrt(3.0));
        const double spot = take(m, "spot", 8.0);
        const double rate = take(m, "rate", 0.03);
        const double strike = take(m, "strike", 8.0);
        const double horizon = take(m, "horizon", 1.0);
        const double s0sq = take(m, "sigma0_sq", 1.0);
        const bool drift_in = take(m, "drift_in_linear_part", 1.0) != 0.0;
        reject_leftovers(m, id);
        return make_reduced_put(drift_bar, vol_bar, spot, rate, strike, horizon, s0sq, drift_in);
    }
    if (id == "indifference_2+1d" || id == "indifference_reduced_1+1d") {
        const double mu0 = take(m, "mu0", 0.1);
        const double sigma0 = take(m, "sigma0", 0.1);
        const double mu = take(m, "mu", 0.1);
        const double sigma = take(m, "sigma", 0.1);
        const double rho = take(m, "rho", 0.1);
        const double gamma_ra = take(m, "gamma_ra", 1.0);
        const double strike = take(m, "strike", 1.0);
        const double horizon = take(m, "horizon", 1.0);
        const double eps = take(m, "eps", 0.05);
        reject_leftovers(m, id);
        if (id == "indifference_2+1d")
            return make_indifference(mu0, sigma0, {mu, mu}, {sigma, sigma}, {rho, rho}, gamma_ra,
                                     strike, horizon, eps);
        // the two-asset geometric product is itself lognormal; fold both
        // assets into one with matched drift, variance and hedge correlation
        const double sigma_bar = std::sqrt(2.0) * sigma;
        const double rho_bar = 2.0 * sigma * rho / sigma_bar;
        return make_indifference(mu0, sigma0, {2.0 * mu}, {sigma_bar}, {rho_bar}, gamma_ra,
                                 strike, horizon, eps);
    }
    throw ConfigError("unknown problem id '" + id + "'");
}

namespace {

std::string status_tag(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
    if (dynamic_cast<const AssumptionError*>(&e)) return "assumption_failure";
    if (dynamic_cast<const PathBlowupError*>(&e)) return "path_blowup";
    if (dynamic_cast<const SingularDiffusionError*>(&e)) return "singular_diffusion";
    if (dynamic_cast<const InsufficientDataError*>(&e)) return "insufficient_data";
    if (dynamic_cast<const InvalidLatticeError*>(&e)) return "invalid_lattice";
    if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
    return "solver_error";
}

}  // namespace

std::vector<ResultRow> run(const RunConfig& cfg) {
    cfg.validate();
    ProblemSpec spec = build_problem(cfg.problem, cfg.overrides);

    EstimatorConfig est = cfg.estimator;
    if (est.threads == 0) est.threads = cfg.threads;

    MeshSpec mesh;
    QuadratureRule rule;
    QuadSolveOptions qopt;
    if (cfg.backend == "quadrature") {
        if (cfg.mesh_lo.empty()) {
            mesh = default_mesh(spec, cfg.mesh_nodes);
        } else {
            mesh.nodes_per_dim.assign(spec.dim, cfg.mesh_nodes);
            mesh.lo = cfg.mesh_lo;
            mesh.hi = cfg.mesh_hi;
        }
        rule = QuadratureRule::gauss_hermite(cfg.quad_points, spec.dim);
        qopt.use_obstacle = cfg.use_obstacle;
        qopt.hess_guard = est.hess_guard;
        qopt.hess_guard_delta = est.hess_guard_delta;
        qopt.weight_options.truncate_increment = est.truncate_increments;
        qopt.weight_options.trunc_scale = est.trunc_scale;
        qopt.threads = est.threads;
    }

    SolveOptions sopt;
    sopt.use_obstacle = cfg.use_obstacle;
    sopt.override_assumptions = cfg.override_assumptions;

    std::vector<ResultRow> rows;
    for (int n : cfg.steps) {
        for (long p : cfg.paths) {
            for (std::uint64_t seed : cfg.seeds) {
                ResultRow row;
                row.problem = cfg.problem;
                row.backend = cfg.backend;
                row.steps = n;
                row.paths = p;
                row.seed = seed;
                row.cells_per_dim = est.cells_per_dim;
                bool failed = false;
                try {
                    TimeGrid grid(n, spec.horizon);
                    row.h = grid.h;
                    SolveReport rep = cfg.backend == "mc"
                                          ? solve_mc(spec, grid, p, seed, est, sopt)
                                          : solve_quadrature(spec, grid, mesh, rule, qopt);
                    row.value = rep.value_at_origin;
                    row.exercise_frac_t0 = rep.layers.front().exercise_fraction;
                    row.wall_ms = cfg.timings ? rep.total_ms : 0.0;
                    row.status = "ok";
                } catch (const std::exception& e) {
                    row.status = status_tag(e);
                    failed = true;
                } catch (...) {
                    row.status = "solver_error";
                    failed = true;
                }
                rows.push_back(std::move(row));
                // one failure row per (steps, paths) cell: the remaining
                // seeds would just repeat it
                if (failed) break;
            }
        }
    }

    std::filesystem::path dir(cfg.out_dir);
    if (!dir.empty()) std::filesystem::create_directories(dir);
    emit_csv(rows, dir / cfg.out_file);
    return rows;
}

void emit_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write csv: " + file.string());
    out << "problem,backend,n,h,paths,seed,cells_per_dim,value,exercise_frac_t0,wall_ms,status\n";
    for (const auto& r : rows) {
        out << r.problem << ',' << r.backend << ',' << r.steps << ',' << format_sig9(r.h) << ','
            << r.paths << ',' << r.seed << ',' << r.cells_per_dim << ',' << format_sig9(r.value)
            << ',' << format_sig9(r.exercise_frac_t0) << ',' << format_sig9(r.wall_ms) << ','
            << r.status << '\n';
    }
    if (!out) throw ConfigError("failed writing csv: " + file.string());
}

std::vector<ResultRow> read_result_csv(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot open csv: " + file.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("problem,", 0) != 0)
        throw ConfigError("unrecognized result csv header in " + file.string());
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_list(line);
        if (f.size() != 11) throw ConfigError("malformed result csv row: " + line);
        ResultRow r;
        r.problem = f[0];
        r.backend = f[1];
        r.steps = parse_int(f[2], "n");
        r.h = parse_double(f[3], "h");
        r.paths = parse_long(f[4], "paths");
        r.seed = parse_u64(f[5], "seed");
        r.cells_per_dim = parse_int(f[6], "cells_per_dim");
        r.value = parse_double(f[7], "value");
        r.exercise_frac_t0 = parse_double(f[8], "exercise_frac_t0");
        r.wall_ms = parse_double(f[9], "wall_ms");
        r.status = f[10];
        rows.push_back(std::move(r));
    }
    return rows;
}

RateTable rate_analysis(std::vector<std::pair<double, double>> values, double reference,
                        double ref_floor) {
    if (values.size() < 2)
        throw InsufficientDataError("rate analysis needs at least two step sizes");
    for (const auto& [h, v] : values) {
        (void)v;
        if (!(h > 0.0)) throw ConfigError("rate analysis: step sizes must be positive");
    }
    std::sort(values.begin(), values.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 1; k < values.size(); ++k)
        if (values[k].first == values[k - 1].first)
            throw InsufficientDataError("rate analysis needs distinct step sizes");

    RateTable t;
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
        RateRow r;
        r.h1 = values[k].first;
        r.h2 = values[k + 1].first;
        r.value_h1 = values[k].second;
        r.value_h2 = values[k + 1].second;
        r.reference = reference;
        r.theory_quarter = std::pow(r.h1 / r.h2, 0.25);
        r.theory_half = std::sqrt(r.h1 / r.h2);
        const double e2 = r.value_h2 - reference;
        if (std::abs(e2) < ref_floor) {
            r.error_ratio = std::numeric_limits<double>::quiet_NaN();
            r.ratio_defined = false;
        } else {
            r.error_ratio = (r.value_h1 - reference) / e2;
            r.ratio_defined = true;
        }
        t.rows.push_back(r);
    }
    return t;
}

void emit_csv(const RateTable& table, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write csv: " + file.string());
    out << "h1,h2,value_h1,value_h2,reference,error_ratio,theory_quarter,theory_half\n";
    for (const auto& r : table.rows) {
        out << format_sig9(r.h1) << ',' << format_sig9(r.h2) << ',' << format_sig9(r.value_h1)
            << ',' << format_sig9(r.value_h2) << ',' << format_sig9(r.reference) << ','
            << format_sig9(r.error_ratio) << ',' << format_sig9(r.theory_quarter) << ','
            << format_sig9(r.theory_half) << '\n';
    }
    if (!out) throw ConfigError("failed writing csv: " + file.string());
}

}  // namespace nlobs
