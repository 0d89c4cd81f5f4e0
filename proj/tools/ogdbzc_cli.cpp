// Command-line front end: run, reproduce, fuzz and benchmark.
//
// Exit codes: 0 success, 2 safety or feasibility failure, 3 configuration error.

#include "ogdbzc/harness.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace ogdbzc;

constexpr int kOk = 0;
constexpr int kUnsafe = 2;
constexpr int kConfig = 3;

void print_params(const AlgorithmParams& p) {
    std::cout << "params: " << p.describe() << '\n';
    for (const auto& w : p.warnings) std::cout << "warning: " << w << '\n';
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<int> T, std::string out) {
    RunConfig c = load_config(config_path);
    if (seed) c.seed = *seed;
    if (T) c.T = *T;
    if (out.empty()) out = c.out_dir;
    std::filesystem::create_directories(out);
    const ResolvedSetup s = resolve(c);
    DisturbanceStream dist = make_stream(c, c.seed);
    try {
        const Execution e = execute(c, s, dist, c.T, c.seed);
        std::ostringstream os;
        write_trace_csv(os, e.trace, c.source);
        write_file(std::filesystem::path(out) / "trace.csv", os.str());
        print_params(e.trace.params);
        double max_x = 0.0;
        double max_u = 0.0;
        for (const auto& st : e.trace.steps) {
            max_x = std::max(max_x, st.x.norm());
            max_u = std::max(max_u, st.u.norm());
        }
        std::cout << "steps: " << e.trace.steps.size() << "  total cost: " << e.trace.total_cost() << "  max |x|: " << max_x
                  << "  max |u|: " << max_u << "\ntrace: " << (std::filesystem::path(out) / "trace.csv").string() << '\n';
    } catch (const RunAbort& a) {
        std::ostringstream os;
        write_trace_csv(os, a.trace, c.source);
        write_file(std::filesystem::path(out) / "trace_aborted.csv", os.str());
        throw;
    }
    return kOk;
}

int cmd_reproduce(const std::string& figure, const std::string& out) {
    for (const auto& p : reproduce(figure, out)) std::cout << p.string() << '\n';
    return kOk;
}

int cmd_fuzz(const std::string& config_path, int seeds, std::optional<int> T) {
    const RunConfig c = load_config(config_path);
    const ResolvedSetup s = resolve(c);
    const FuzzSummary f = safety_fuzz(c, s, seeds, T ? *T : c.T);
    print_params(f.params);
    std::cout << "runs: " << f.runs << "  steps: " << f.steps << "\nstate violations: " << f.state_violations
              << "  input violations: " << f.input_violations << "  membership failures: " << f.member_failures
              << "  diagnostic failures: " << f.diagnostic_failures << "\nmin boundary distance: state " << f.min_margin_x << ", input "
              << f.min_margin_u << "\nmax |x|: " << f.max_x << "  max |u|: " << f.max_u << "  max |grad|: " << f.max_grad << '\n';
    if (f.bounds) std::cout << "bounds: b_x " << f.bounds->b_x << "  b_u " << f.bounds->b_u << "  G_f " << f.bounds->G_f << '\n';
    for (const auto& x : f.failures) std::cout << "FAIL " << x.variant << " seed " << x.seed << " step " << x.step << ": " << x.message << '\n';
    return f.clean() ? kOk : kUnsafe;
}

int cmd_benchmark(const std::string& config_path, double step) {
    RunConfig c = load_config(config_path);
    c.grid.step = step;
    const ResolvedSetup s = resolve(c);
    DisturbanceStream dist = make_stream(c, c.seed);
    const Execution e = execute(c, s, dist, c.T, c.seed);
    std::vector<Vec> ws;
    for (const auto& st : e.trace.steps) ws.push_back(st.w);
    const Benchmark b = best_safe_linear(c.sys, c.spec, e.costs, ws, c.grid);
    const double reg = e.trace.total_cost() - b.total_cost;
    std::cout << std::setprecision(10) << "T: " << c.T << "  grid step: " << b.grid_step << "  grid points: " << b.grid_points
              << "  certified safe: " << b.safe_points << "  removed: " << b.removed_points << "\nalgorithm cost: " << e.trace.total_cost()
              << "\nbenchmark K*: " << b.K_star.reshaped<Eigen::RowMajor>().transpose() << "  cost: " << b.total_cost
              << "  trajectory safe: " << (b.trajectory_safe ? "yes" : "no") << "\nregret: " << reg << "  regret / T: " << reg / c.T << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe online control with buffer zones"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    std::string figure;
    std::optional<std::uint64_t> seed;
    std::optional<int> T;
    int seeds = 100;
    double step = 0.02;

    auto* run = app.add_subcommand("run", "run one configuration and write its trace");
    run->add_option("--config", config, "config file")->required();
    run->add_option("--seed", seed, "override the seed");
    run->add_option("--T", T, "override the horizon");
    run->add_option("--out", out, "output directory");

    auto* rep = app.add_subcommand("reproduce", "write the CSV and plot script for a figure");
    rep->add_option("figure", figure, "fig1a, fig1b or fig2")->required()->check(CLI::IsMember({"fig1a", "fig1b", "fig2"}));
    rep->add_option("--out", out, "output directory")->required();

    auto* fuzz = app.add_subcommand("fuzz", "safety fuzzing over every disturbance family");
    fuzz->add_option("--config", config, "config file")->required();
    fuzz->add_option("--seeds", seeds, "seeds per family")->check(CLI::PositiveNumber);
    fuzz->add_option("--T", T, "override the horizon");

    auto* bench = app.add_subcommand("benchmark", "best safe linear gain in hindsight");
    bench->add_option("--config", config, "config file")->required();
    bench->add_option("--grid-step", step, "grid step")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*run) return cmd_run(config, seed, T, out);
        if (*rep) return cmd_reproduce(figure, out);
        if (*fuzz) return cmd_fuzz(config, seeds, T);
        if (*bench) return cmd_benchmark(config, step);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const RunAbort& e) {
        std::cerr << "run aborted: " << e.what() << '\n';
        return kUnsafe;
    } catch (const ParameterWindowError& e) {
        std::cerr << "parameter window: " << e.what() << '\n';
        return kUnsafe;
    } catch (const FeasibilityError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kUnsafe;
    } catch (const SeedInfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kUnsafe;
    } catch (const EmptyWindowError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kUnsafe;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kOk;
}
