#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nlobs/scheme.hpp"

namespace nlobs {

/// One experiment: a problem id, a backend, and the (steps, paths, seed)
/// grid to sweep. Parsed from JSON; see README for the schema.
struct RunConfig {
    std::string problem;
    std::map<std::string, double> overrides;
    std::string backend = "mc";  ///< "mc" | "quadrature"
    std::vector<int> steps;
    std::vector<long> paths;
    std::vector<std::uint64_t> seeds;
    EstimatorConfig estimator;
    int mesh_nodes = 200;             ///< quadrature backend, per dimension
    std::vector<double> mesh_lo, mesh_hi;  ///< empty -> problem's diagnostic box
    int quad_points = 12;
    bool use_obstacle = true;
    bool override_assumptions = false;
    bool timings = true;              ///< false -> wall_ms written as 0 (deterministic output)
    int threads = 0;
    std::string out_dir = ".";
    std::string out_file = "results.csv";

    static RunConfig from_json_file(const std::filesystem::path& file);
    static RunConfig from_json_text(const std::string& text);
    void apply_override(const std::string& key, const std::string& value);
    void validate() const;  ///< throws ConfigError
};

/// Registered problem ids: geometric_put_3d, geometric_put_reduced_1d,
/// indifference_2+1d, indifference_reduced_1+1d.
ProblemSpec build_problem(const std::string& id, const std::map<std::string, double>& overrides);
std::vector<std::string> registered_problems();

/// One CSV row of a sweep.
struct ResultRow {
    std::string problem;
    std::string backend;
    int steps = 0;
    double h = 0.0;
    long paths = 0;
    std::uint64_t seed = 0;
    int cells_per_dim = 0;
    double value = 0.0;
    double exercise_frac_t0 = 0.0;
    double wall_ms = 0.0;
    std::string status = "ok";  ///< "ok" or an error tag; errors do not stop the sweep
};

/// Execute the sweep and write out_dir/out_file. Returns the rows.
std::vector<ResultRow> run(const RunConfig& cfg);

void emit_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& file);
std::vector<ResultRow> read_result_csv(const std::filesystem::path& file);

/// Error-ratio table for a refinement study. Rows pair consecutive step
/// sizes with h1 > h2.
struct RateRow {
    double h1 = 0.0, h2 = 0.0;
    double value_h1 = 0.0, value_h2 = 0.0;
    double reference = 0.0;
    double error_ratio = 0.0;   ///< (value_h1 - ref) / (value_h2 - ref); NaN when undefined
    bool ratio_defined = false;
    double theory_quarter = 0.0;  ///< (h1/h2)^{1/4}
    double theory_half = 0.0;     ///< (h1/h2)^{1/2}
};

struct RateTable {
    std::vector<RateRow> rows;
};

/// values: (h, value) pairs, at least two distinct h (else
/// InsufficientDataError). Pairs whose denominator is within ref_floor of
/// zero are emitted with the ratio marked undefined.
RateTable rate_analysis(std::vector<std::pair<double, double>> values, double reference,
                        double ref_floor = 1e-12);

void emit_csv(const RateTable& table, const std::filesystem::path& file);

}  // namespace nlobs
