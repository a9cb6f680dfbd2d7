#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "nlobs/common.hpp"
#include "nlobs/experiments.hpp"
#include "nlobs/reference.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

std::pair<std::string, std::string> split_assignment(const std::string& s) {
    auto pos = s.find('=');
    if (pos == std::string::npos || pos == 0)
        throw nlobs::ConfigError("override '" + s + "' is not of the form key=value");
    return {s.substr(0, pos), s.substr(pos + 1)};
}

int cmd_solve(const std::string& config_file, const std::string& out_dir,
              const std::vector<std::string>& overrides) {
    nlobs::RunConfig cfg = nlobs::RunConfig::from_json_file(config_file);
    for (const auto& ov : overrides) {
        auto [key, value] = split_assignment(ov);
        cfg.apply_override(key, value);
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    auto rows = nlobs::run(cfg);
    bool all_ok = true;
    for (const auto& r : rows) {
        std::printf("%s %s n=%d paths=%ld seed=%llu value=%s exercise_frac=%s status=%s\n",
                    r.problem.c_str(), r.backend.c_str(), r.steps, r.paths,
                    static_cast<unsigned long long>(r.seed), nlobs::format_sig9(r.value).c_str(),
                    nlobs::format_sig9(r.exercise_frac_t0).c_str(), r.status.c_str());
        all_ok = all_ok && r.status == "ok";
    }
    auto csv = std::filesystem::path(cfg.out_dir) / cfg.out_file;
    std::printf("wrote %s (%zu rows)\n", csv.string().c_str(), rows.size());
    return all_ok ? kExitOk : kExitSolver;
}

double resolve_reference(const std::string& ref, const std::vector<nlobs::ResultRow>& rows) {
    if (ref != "auto") {
        try {
            std::size_t used = 0;
            double v = std::stod(ref, &used);
            if (used != ref.size()) throw std::invalid_argument(ref);
            return v;
        } catch (const std::exception&) {
            throw nlobs::ConfigError("--reference must be 'auto' or a number, got '" + ref + "'");
        }
    }
    // auto covers the put problems at their default parameters: a 20000-step
    // lattice on the collapsed one-factor dynamics
    const std::string& problem = rows.front().problem;
    if (problem.rfind("geometric_put", 0) != 0)
        throw nlobs::ConfigError("--reference auto is only defined for the geometric_put "
                                 "problems at default parameters; pass a number");
    nlobs::ReducedGBM gbm{0.09, 0.1 * std::sqrt(3.0), 8.0, 0.03};
    return nlobs::binomial_american_put(gbm, 8.0, 1.0, 20000);
}

int cmd_rate(const std::string& in_file, const std::string& reference,
             const std::string& out_file) {
    auto rows = nlobs::read_result_csv(in_file);
    std::erase_if(rows, [](const nlobs::ResultRow& r) { return r.status != "ok"; });
    if (rows.empty()) throw nlobs::ConfigError("no successful rows in " + in_file);

    const double ref = resolve_reference(reference, rows);

    // average over seeds/path counts at each step size
    std::map<double, std::pair<double, long>> by_h;
    for (const auto& r : rows) {
        auto& acc = by_h[r.h];
        acc.first += r.value;
        acc.second += 1;
    }
    std::vector<std::pair<double, double>> values;
    for (const auto& [h, acc] : by_h) values.emplace_back(h, acc.first / acc.second);

    nlobs::RateTable table = nlobs::rate_analysis(values, ref);
    if (!out_file.empty()) {
        nlobs::emit_csv(table, out_file);
        std::printf("wrote %s (%zu rows)\n", out_file.c_str(), table.rows.size());
    }
    std::printf("h1,h2,value_h1,value_h2,reference,error_ratio,theory_quarter,theory_half\n");
    for (const auto& r : table.rows)
        std::printf("%s,%s,%s,%s,%s,%s,%s,%s\n", nlobs::format_sig9(r.h1).c_str(),
                    nlobs::format_sig9(r.h2).c_str(), nlobs::format_sig9(r.value_h1).c_str(),
                    nlobs::format_sig9(r.value_h2).c_str(), nlobs::format_sig9(r.reference).c_str(),
                    nlobs::format_sig9(r.error_ratio).c_str(),
                    nlobs::format_sig9(r.theory_quarter).c_str(),
                    nlobs::format_sig9(r.theory_half).c_str());
    return kExitOk;
}

int cmd_check(const std::string& problem, const std::vector<std::string>& overrides) {
    std::map<std::string, double> params;
    for (const auto& ov : overrides) {
        auto [key, value] = split_assignment(ov);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != value.size())
            throw nlobs::ConfigError("override '" + key + "': '" + value + "' is not a number");
        params[key] = v;
    }
    nlobs::ProblemSpec spec = nlobs::build_problem(problem, params);
    nlobs::AssumptionReport report = nlobs::check_assumptions(spec);
    std::printf("%s\n", report.summary().c_str());
    std::printf("assumptions %s\n", report.pass() ? "pass" : "FAIL");
    return report.pass() ? kExitOk : kExitSolver;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"regression Monte Carlo solver for obstacle problems with nonlinear drivers"};
    app.require_subcommand(1);

    std::string config_file, out_dir;
    std::vector<std::string> solve_overrides;
    auto* solve = app.add_subcommand("solve", "run a sweep from a JSON config, write a CSV");
    solve->add_option("--config", config_file, "JSON run configuration")->required();
    solve->add_option("--out", out_dir, "output directory (defaults to the config's out_dir)");
    solve->add_option("--override", solve_overrides, "key=value config override, repeatable");

    std::string in_file, reference, rate_out;
    auto* rate = app.add_subcommand("rate", "error-ratio table from a results CSV");
    rate->add_option("--in", in_file, "results CSV produced by solve")->required();
    rate->add_option("--reference", reference, "'auto' or a reference value")->required();
    rate->add_option("--out", rate_out, "also write the table to this file");

    std::string problem;
    std::vector<std::string> check_overrides;
    auto* check = app.add_subcommand("check", "probe the structural assumptions of a problem");
    check->add_option("--problem", problem, "registered problem id")->required();
    check->add_option("--override", check_overrides, "key=value parameter override, repeatable");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (solve->parsed()) return cmd_solve(config_file, out_dir, solve_overrides);
        if (rate->parsed()) return cmd_rate(in_file, reference, rate_out);
        return cmd_check(problem, check_overrides);
    } catch (const nlobs::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const nlobs::InsufficientDataError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return kExitSolver;
    }
}
