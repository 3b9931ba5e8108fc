// dispatchctl: solve, train, benchmark, calibrate and report from the command line.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "dispatch/energy.hpp"
#include "dispatch/grid_model.hpp"
#include "dispatch/harness.hpp"
#include "dispatch/solvers.hpp"
#include "dispatch/surrogates.hpp"

namespace fs = std::filesystem;
using namespace dispatch;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> out;
    unsigned jobs = 0;
};

std::uint64_t effective_seed(const Globals& g, std::uint64_t from_config) {
    return g.seed ? *g.seed : from_config;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cli", fmt::format("cannot write '{}'", path.string()));
    return out;
}

Setup mode_of(const std::string& text) {
    auto s = parse_setup(text);
    if (!s) throw UsageError(fmt::format("unknown mode '{}'", text));
    return *s;
}

const std::vector<std::string> kModes{"centralized", "distributed", "decentralized"};

// ---------------------------------------------------------------------------
// solve

struct SolveArgs {
    fs::path scenario;
    std::string mode;
    double rho = 1.0;
    double tol = 1e-4;
    std::size_t max_iter = 2000;
    double fluctuation = 0.0;
};

void print_solution(const grid::CommunitySpec& spec, const solvers::DispatchSolution& sol,
                    Setup mode, std::size_t iterations) {
    std::cout << fmt::format("mode {}\n", to_string(mode));
    std::cout << fmt::format("objective {:.10g}\n", sol.objective);
    std::cout << fmt::format("balance_residual {:.3e}\n", sol.balance_residual);
    std::cout << fmt::format("iterations {}\n", iterations);
    for (std::size_t i = 0; i < spec.n_agents(); ++i) {
        std::cout << fmt::format("agent {} p_o {:.6f} p_g", spec.agents[i].id, sol.p_o[i]);
        for (double p : sol.p_g[i]) std::cout << fmt::format(" {:.6f}", p);
        std::cout << '\n';
    }
}

int run_solve(const SolveArgs& args, const Globals& g) {
    const auto scenario = grid::load_scenario(args.scenario);
    if (scenario.spec.agents.empty()) throw UsageError("scenario file defines no agents");
    const auto& spec = scenario.spec;
    const Setup mode = mode_of(args.mode);
    const auto loads = grid::sample_loads(spec, args.fluctuation, effective_seed(g, scenario.bench.seed));

    std::vector<solvers::TraceRecord> trace;
    auto write_trace = [&] {
        if (!g.out) return;
        auto file = open_output(*g.out / fmt::format("{}_trace.csv", to_string(mode)));
        solvers::write_trace_csv(file, trace);
    };

    try {
        solvers::DispatchSolution sol;
        if (mode == Setup::Centralized) {
            sol = solvers::solve_centralized(spec, loads, args.tol);
            trace.push_back({0, sol.objective, sol.balance_residual, 0.0,
                             solvers::centralized_price(spec, loads), 0.0, 0.0});
        } else if (mode == Setup::Distributed) {
            solvers::AdmmOptions opt;
            opt.rho = args.rho;
            opt.tol = args.tol;
            opt.max_iter = args.max_iter;
            opt.jobs = g.jobs;
            auto result = solvers::run_distributed(spec, loads, opt);
            sol = result.solution;
            trace = std::move(result.state.trace);
        } else {
            solvers::ConsensusOptions opt;
            opt.rho = args.rho;
            opt.tol = args.tol;
            opt.max_iter = args.max_iter;
            opt.jobs = g.jobs;
            auto result = solvers::run_decentralized(spec, loads, opt);
            sol = result.solution;
            trace = std::move(result.state.trace);
        }
        print_solution(spec, sol, mode, mode == Setup::Centralized ? 0 : trace.size());
        write_trace();
    } catch (const solvers::NonConvergedError& e) {
        trace = e.trace();
        write_trace();
        throw;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    fs::path scenario;
    std::string mode;
    std::size_t samples = 1000;
    std::size_t epochs = 100;
    std::size_t hidden = 64;
    std::size_t batch = 32;
    double lr = 1e-2;
    std::optional<double> fluctuation;
    double rho = 1.0;
    double tol = 1e-4;
    std::size_t max_iter = 2000;
};

int run_train(const TrainArgs& args, const Globals& g) {
    if (!g.out) throw UsageError("train writes network files and needs --out");
    const auto scenario = grid::load_scenario(args.scenario);
    if (scenario.spec.agents.empty()) throw UsageError("scenario file defines no agents");
    const auto& spec = scenario.spec;
    const Setup mode = mode_of(args.mode);
    const std::uint64_t seed = effective_seed(g, scenario.bench.seed);

    surrogate::SolverSettings settings;
    settings.rho = args.rho;
    settings.tol = args.tol;
    settings.max_iter = args.max_iter;
    settings.fluctuation = args.fluctuation.value_or(scenario.bench.fluctuation);
    const auto data = surrogate::generate_dataset(spec, mode, args.samples, settings, seed);

    const auto dims = surrogate::setup_dims(mode, spec.n_agents(), spec.n_loads(), spec.n_gens());
    auto set = surrogate::build_surrogate(dims, args.hidden, grid::derive_seed(seed, 1));
    surrogate::TrainOptions opt;
    opt.epochs = args.epochs;
    opt.batch = args.batch;
    opt.learning_rate = args.lr;
    opt.seed = grid::derive_seed(seed, 2);
    const auto histories = surrogate::train(set, data, opt);

    surrogate::write_surrogate_set(*g.out, set);
    auto loss = open_output(*g.out / fmt::format("{}_loss.csv", to_string(mode)));
    loss << "epoch";
    for (std::size_t k = 0; k < histories.size(); ++k) loss << ",net" << k;
    loss << '\n';
    for (std::size_t e = 0; e <= args.epochs; ++e) {
        loss << e;
        for (const auto& h : histories) loss << fmt::format(",{:.12g}", h.loss_history[e]);
        loss << '\n';
    }

    std::cout << fmt::format("mode {}\nsamples {}\nnetworks {}\nhidden {}\nparameters {}\n", to_string(mode),
                             data.size(), set.nets.size(), set.hidden, set.parameter_count());
    for (std::size_t k = 0; k < histories.size(); ++k)
        std::cout << fmt::format("net{} loss {:.6g} -> {:.6g}\n", k, histories[k].loss_history.front(),
                                 histories[k].loss_history.back());
    return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    std::string experiment;
    fs::path config;
    std::vector<std::string> setups;
    std::optional<std::uint64_t> target_params;
    std::vector<std::size_t> hidden_list;
    std::vector<std::size_t> gen_list;
    std::optional<std::size_t> n_agents, n_gens, n_loads;
    std::optional<std::size_t> repetitions, rounds;
    std::optional<double> fluctuation, rho, device_power_w;
    std::optional<fs::path> energy_model, network_dir;
    std::optional<std::string> backend;
};

energy::EnergyModel resolve_model(const bench::BenchConfig& cfg) {
    if (cfg.energy_model) return energy::read_model(*cfg.energy_model);
    const auto obs = energy::reference_observations();
    return energy::calibrate(obs).model;
}

void apply_overrides(bench::BenchConfig& cfg, const BenchArgs& a, const Globals& g) {
    if (!a.setups.empty()) {
        cfg.setups.clear();
        for (const auto& s : a.setups) cfg.setups.push_back(mode_of(s));
    }
    if (a.target_params) cfg.target_params = a.target_params;
    if (!a.hidden_list.empty()) cfg.hidden_list = a.hidden_list;
    if (!a.gen_list.empty()) cfg.gen_list = a.gen_list;
    if (a.n_agents) cfg.n_agents = *a.n_agents;
    if (a.n_gens) cfg.n_gens = *a.n_gens;
    if (a.n_loads) cfg.n_loads = *a.n_loads;
    if (a.repetitions) cfg.repetitions = *a.repetitions;
    if (a.rounds) cfg.rounds = *a.rounds;
    if (a.fluctuation) cfg.fluctuation = *a.fluctuation;
    if (a.rho) cfg.rho = *a.rho;
    if (a.device_power_w) cfg.device_power_w = *a.device_power_w;
    if (a.energy_model) cfg.energy_model = a.energy_model;
    if (a.network_dir) cfg.network_dir = a.network_dir;
    if (a.backend) cfg.backend = *a.backend == "wallclock" ? bench::EnergyBackend::Wallclock
                                                           : bench::EnergyBackend::Analytic;
    if (g.seed) cfg.seed = *g.seed;
    if (g.jobs != 0) cfg.jobs = g.jobs;
}

void publish(const std::vector<bench::BenchRow>& rows, const std::string& experiment,
             const bench::BenchConfig& cfg, const Globals& g) {
    if (g.out) {
        const auto path = bench::output_path(*g.out, experiment, fmt::format("seed{}", cfg.seed));
        bench::emit_csv(path, rows);
        bench::print_summary(std::cout, bench::summarize(rows));
        std::cerr << fmt::format("wrote {}\n", path.string());
    } else {
        bench::emit_csv(std::cout, rows);
    }
}

int run_bench(const BenchArgs& args, const Globals& g) {
    auto scenario = grid::load_scenario(args.config);
    auto& cfg = scenario.bench;
    apply_overrides(cfg, args, g);
    const auto model = resolve_model(cfg);

    if (args.experiment == "table2") {
        publish(bench::run_equal_params(cfg, model), "table2", cfg, g);
    } else if (args.experiment == "size-sweep") {
        publish(bench::run_size_sweep(cfg, model), "size_sweep", cfg, g);
    } else if (args.experiment == "scal-sweep") {
        publish(bench::run_scalability_sweep(cfg, model), "scal_sweep", cfg, g);
    } else {
        if (scenario.spec.agents.empty()) throw bench::ConfigError("week needs a community (agents or bench.scenario)");
        const auto result = bench::run_week_simulation(cfg, scenario.spec, model);
        publish(result.rows, "week", cfg, g);
        std::ostream& info = g.out ? std::cout : std::cerr;
        info << fmt::format("events {}\n", result.events);
        for (const auto& [setup, total] : result.totals)
            info << fmt::format("{} total_energy_kwh {:.12g} total_carbon_g {:.12g} worst_box_violation {:.6g}\n",
                                to_string(setup), total.energy_kwh, total.carbon_g,
                                result.worst.at(setup).box_violation_max);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// calibrate / report

struct CalibrateArgs {
    fs::path observations;
    double intensity = energy::kReferenceGridIntensity;
};

int run_calibrate(const CalibrateArgs& args, const Globals& g) {
    const auto obs = energy::read_observations_csv(args.observations);
    const auto cal = energy::calibrate(obs, args.intensity);
    if (g.out) {
        const auto path = *g.out / "energy_model.json";
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        energy::write_model(path, cal.model);
        std::cerr << fmt::format("wrote {}\n", path.string());
        std::cout << fmt::format("{:<14} {:>14} {:>14} {:>10}\n", "setup", "measured_kwh", "fitted_kwh", "rel_err");
        for (std::size_t k = 0; k < obs.size(); ++k)
            std::cout << fmt::format("{:<14} {:>14.6g} {:>14.6g} {:>10.2e}\n", to_string(obs[k].setup),
                                     obs[k].measured_kwh, obs[k].measured_kwh + cal.residual_kwh[k],
                                     cal.relative_residual[k]);
    } else {
        std::cout << energy::model_to_json(cal.model);
    }
    return 0;
}

int run_report(const fs::path& csv) {
    bench::print_summary(std::cout, bench::summarize(bench::parse_csv(csv)));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-agent economic dispatch solvers, surrogates and energy benchmarks", "dispatchctl"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Base seed (overrides DISPATCH_SEED and config)");
    app.add_option("--out", g.out, "Directory for every output file");
    app.add_option("--jobs", g.jobs, "Worker threads (0: available cores)");

    SolveArgs solve;
    auto* solve_cmd = app.add_subcommand("solve", "Solve one dispatch instance");
    solve_cmd->add_option("--scenario", solve.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
    solve_cmd->add_option("--mode", solve.mode, "Coordination setup")->required()->check(CLI::IsMember(kModes));
    solve_cmd->add_option("--rho", solve.rho, "ADMM penalty")->check(CLI::PositiveNumber);
    solve_cmd->add_option("--tol", solve.tol, "Stopping tolerance, MW")->check(CLI::PositiveNumber);
    solve_cmd->add_option("--max-iter", solve.max_iter, "Iteration cap");
    solve_cmd->add_option("--fluctuation", solve.fluctuation, "Load fluctuation around nominal")
        ->check(CLI::Range(0.0, 0.999999));

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Generate imitation data and train surrogates");
    train_cmd->add_option("--scenario", train.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--mode", train.mode, "Coordination setup")->required()->check(CLI::IsMember(kModes));
    train_cmd->add_option("--samples", train.samples, "Load scenarios to solve")->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", train.epochs, "Training epochs");
    train_cmd->add_option("--hidden", train.hidden, "Hidden width")->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", train.batch, "Mini-batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", train.lr, "Learning rate")->check(CLI::PositiveNumber);
    train_cmd->add_option("--fluctuation", train.fluctuation, "Load fluctuation (default: config)")
        ->check(CLI::Range(0.0, 0.999999));
    train_cmd->add_option("--rho", train.rho, "ADMM penalty for labels")->check(CLI::PositiveNumber);
    train_cmd->add_option("--tol", train.tol, "Solver tolerance for labels")->check(CLI::PositiveNumber);
    train_cmd->add_option("--max-iter", train.max_iter, "Solver iteration cap for labels");

    BenchArgs bench_args;
    auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark experiment");
    bench_cmd->add_option("experiment", bench_args.experiment, "table2 | size-sweep | scal-sweep | week")
        ->required()
        ->check(CLI::IsMember({"table2", "size-sweep", "scal-sweep", "week"}));
    bench_cmd->add_option("--config", bench_args.config, "Config JSON")->required()->check(CLI::ExistingFile);
    bench_cmd->add_option("--setups", bench_args.setups, "Setups to run")->check(CLI::IsMember(kModes));
    bench_cmd->add_option("--target-params", bench_args.target_params, "Parameter budget (table2)");
    bench_cmd->add_option("--hidden-list", bench_args.hidden_list, "Hidden widths (size-sweep)");
    bench_cmd->add_option("--gen-list", bench_args.gen_list, "Generators per agent (scal-sweep)");
    bench_cmd->add_option("--n-agents", bench_args.n_agents, "Agents");
    bench_cmd->add_option("--n-gens", bench_args.n_gens, "Generators per agent");
    bench_cmd->add_option("--n-loads", bench_args.n_loads, "Loads per agent");
    bench_cmd->add_option("--repetitions", bench_args.repetitions, "Repetitions per cell");
    bench_cmd->add_option("--rounds", bench_args.rounds, "Surrogate rounds per event");
    bench_cmd->add_option("--fluctuation", bench_args.fluctuation, "Load fluctuation (week)");
    bench_cmd->add_option("--rho", bench_args.rho, "Dual step between surrogate rounds");
    bench_cmd->add_option("--energy-model", bench_args.energy_model, "Energy model JSON");
    bench_cmd->add_option("--network-dir", bench_args.network_dir, "Trained networks (week)");
    bench_cmd->add_option("--backend", bench_args.backend, "analytic | wallclock")
        ->check(CLI::IsMember({"analytic", "wallclock"}));
    bench_cmd->add_option("--device-power-w", bench_args.device_power_w, "Device power for wallclock");

    CalibrateArgs cal;
    auto* cal_cmd = app.add_subcommand("calibrate", "Fit an energy model to measurements");
    cal_cmd->add_option("--observations", cal.observations, "Observation CSV")->required()->check(CLI::ExistingFile);
    cal_cmd->add_option("--intensity", cal.intensity, "Grid intensity, gCO2eq/kWh")->check(CLI::PositiveNumber);

    fs::path report_csv;
    auto* report_cmd = app.add_subcommand("report", "Summarise a results CSV");
    report_cmd->add_option("--csv", report_csv, "Results CSV")->required()->check(CLI::ExistingFile);

    if (argc <= 1) {
        std::cerr << app.help();
        return kUsageError;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*solve_cmd) return run_solve(solve, g);
        if (*train_cmd) return run_train(train, g);
        if (*bench_cmd) return run_bench(bench_args, g);
        if (*cal_cmd) return run_calibrate(cal, g);
        if (*report_cmd) return run_report(report_csv);
    } catch (const UsageError& e) {
        std::cerr << fmt::format("usage error: {}\n", e.what());
        return kUsageError;
    } catch (const Error& e) {
        std::cerr << fmt::format("error [{}]: {}\n", e.module(), e.what());
        return kRuntimeFailure;
    } catch (const std::exception& e) {
        std::cerr << fmt::format("error [cli]: {}\n", e.what());
        return kRuntimeFailure;
    }
    return kUsageError;
}
