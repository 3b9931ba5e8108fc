#include <algorithm>
#include <charconv>
#include <ostream>
#include <cmath>
#include <fstream>
#include <random>
#include <tuple>

#include <fmt/core.h>

#include "dispatch/harness.hpp"
#include "dispatch/parallel.hpp"
#include "dispatch/solvers.hpp"

namespace dispatch::bench {

using surrogate::SetupDims;

std::size_t nearest_hidden_nodes(const SetupDims& dims, std::uint64_t target) {
    const std::size_t below = surrogate::equalize_hidden_nodes(dims, target);
    const std::uint64_t under = target - surrogate::param_count(dims, below);
    const std::uint64_t over = surrogate::param_count(dims, below + 1) - target;
    return over < under ? below + 1 : below;
}

namespace {

void check_common(const BenchConfig& config) {
    if (config.repetitions == 0) throw ConfigError("repetitions must be at least 1");
    if (config.setups.empty()) throw ConfigError("no setups selected");
    if (config.rounds == 0) throw ConfigError("rounds must be at least 1");
}

std::size_t index_of(Setup s) { return static_cast<std::size_t>(s); }

std::uint64_t calls_per_event(Setup setup, std::size_t n_agents, std::size_t rounds) {
    return setup == Setup::Centralized ? 1 : n_agents * rounds;
}

struct Cell {
    Setup setup;
    std::size_t n_gens;
    std::size_t hidden;
    std::size_t repetition;
};

// Wall-clock cost of `calls` forward passes through freshly built networks.
energy::EnergyReport time_inference(const SetupDims& dims, std::size_t hidden, std::uint64_t seed,
                                    std::uint64_t calls, const BenchConfig& config,
                                    const energy::EnergyModel& model) {
    const auto set = surrogate::build_surrogate(dims, hidden, seed);
    std::mt19937_64 rng(seed);
    std::vector<surrogate::VectorXd> inputs;
    for (std::size_t k = 0; k < set.nets.size(); ++k) {
        surrogate::VectorXd x(static_cast<Eigen::Index>(dims.in_dim));
        for (Eigen::Index c = 0; c < x.size(); ++c) x[c] = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        inputs.push_back(std::move(x));
    }
    const std::uint64_t flops = set.nets.front().flops() * calls;
    double sink = 0.0;
    auto report = energy::measure_wallclock(
        [&] {
            for (std::uint64_t c = 0; c < calls; ++c) {
                const std::size_t k = c % set.nets.size();
                const auto& x = inputs[k];
                sink += surrogate::forward(set.nets[k], {x.data(), static_cast<std::size_t>(x.size())})[0];
            }
        },
        config.device_power_w, model.grid_intensity, flops, calls);
    if (!std::isfinite(sink)) throw Error("bench_harness", "non-finite network output");
    return report;
}

BenchRow shape_row(const std::string& experiment, const Cell& cell, const BenchConfig& config,
                   const energy::EnergyModel& model) {
    const auto dims = surrogate::setup_dims(cell.setup, config.n_agents, config.n_loads, cell.n_gens);
    BenchRow row;
    row.experiment = experiment;
    row.setup = cell.setup;
    row.n_agents = config.n_agents;
    row.n_gens = cell.n_gens;
    row.hidden = cell.hidden;
    row.total_params = surrogate::param_count(dims, cell.hidden);
    row.repetition = cell.repetition;
    row.seed = grid::derive_seed(config.seed, cell.repetition);
    row.messages = solvers::message_stats(cell.setup, config.n_agents, config.rounds).messages;

    const std::uint64_t per_call = surrogate::flop_count(dims.in_dim, cell.hidden, dims.out_dim);
    const std::uint64_t calls = calls_per_event(cell.setup, config.n_agents, config.rounds);
    const auto report = config.backend == EnergyBackend::Analytic
                            ? energy::analytic_report(per_call, calls, model, cell.hidden)
                            : time_inference(dims, cell.hidden, row.seed, calls, config, model);
    row.flops = report.flops;
    row.calls = report.calls;
    row.energy_kwh = report.energy_kwh;
    row.carbon_g = report.carbon_g;
    return row;
}

std::vector<BenchRow> run_cells(const std::string& experiment, const std::vector<Cell>& cells,
                                const BenchConfig& config, const energy::EnergyModel& model) {
    model.validate();
    std::vector<BenchRow> rows(cells.size());
    // Wall-clock cells are timed one at a time so they do not contend.
    const unsigned jobs = config.backend == EnergyBackend::Analytic ? config.jobs : 1;
    parallel_for(cells.size(), jobs, [&](std::size_t k) { rows[k] = shape_row(experiment, cells[k], config, model); });
    sort_rows(rows);
    return rows;
}

}  // namespace

std::vector<BenchRow> run_equal_params(const BenchConfig& config, const energy::EnergyModel& model) {
    check_common(config);
    if (!config.target_params) throw ConfigError("table2 needs bench.target_params");
    std::vector<Cell> cells;
    for (Setup s : config.setups) {
        const auto dims = surrogate::setup_dims(s, config.n_agents, config.n_loads, config.n_gens);
        const std::size_t hidden = nearest_hidden_nodes(dims, *config.target_params);
        for (std::size_t r = 0; r < config.repetitions; ++r) cells.push_back({s, config.n_gens, hidden, r});
    }
    return run_cells("table2", cells, config, model);
}

std::vector<BenchRow> run_size_sweep(const BenchConfig& config, const energy::EnergyModel& model) {
    check_common(config);
    if (config.hidden_list.empty()) throw ConfigError("size-sweep needs a non-empty bench.hidden_list");
    std::vector<Cell> cells;
    for (Setup s : config.setups)
        for (std::size_t h : config.hidden_list) {
            if (h == 0) throw ConfigError("hidden widths must be positive");
            for (std::size_t r = 0; r < config.repetitions; ++r) cells.push_back({s, config.n_gens, h, r});
        }
    return run_cells("size_sweep", cells, config, model);
}

std::vector<BenchRow> run_scalability_sweep(const BenchConfig& config, const energy::EnergyModel& model) {
    check_common(config);
    if (config.gen_list.empty()) throw ConfigError("scal-sweep needs a non-empty bench.gen_list");
    std::vector<Cell> cells;
    for (Setup s : config.setups) {
        auto it = config.fixed_hidden.find(s);
        if (it == config.fixed_hidden.end())
            throw ConfigError(fmt::format("no fixed hidden width for {}", to_string(s)));
        for (std::size_t g : config.gen_list) {
            if (g == 0) throw ConfigError("generator counts must be positive");
            for (std::size_t r = 0; r < config.repetitions; ++r) cells.push_back({s, g, it->second, r});
        }
    }
    return run_cells("scal_sweep", cells, config, model);
}

namespace {

struct WeekCell {
    std::vector<BenchRow> rows;
    energy::EnergyReport total;
    surrogate::ViolationReport worst;
};

void merge_worst(surrogate::ViolationReport& into, const surrogate::ViolationReport& v) {
    into.box_violation_total = std::max(into.box_violation_total, v.box_violation_total);
    into.box_violation_max = std::max(into.box_violation_max, v.box_violation_max);
    into.identity_error_max = std::max(into.identity_error_max, v.identity_error_max);
    into.balance_residual = std::max(into.balance_residual, v.balance_residual);
    into.local_balance_error = std::max(into.local_balance_error, v.local_balance_error);
    into.finite = into.finite && v.finite;
}

// One inference event: `rounds` surrogate rounds from a cold start.
surrogate::ViolationReport run_event(const surrogate::SurrogateSet& set, const grid::CommunitySpec& spec,
                                     const grid::LoadSample& loads, std::size_t rounds, double rho) {
    const std::size_t n = spec.n_agents();
    surrogate::ViolationReport worst;
    if (set.dims.setup == Setup::Centralized) {
        return surrogate::infer_dispatch(set, spec, {surrogate::centralized_features(loads)}).violations;
    }

    double lambda = 0.0;
    std::vector<double> p_o(n, 0.0);
    solvers::Matrix lambda_pair(n, std::vector<double>(n, 0.0));
    solvers::Matrix copies(n, std::vector<double>(n, 0.0));
    std::vector<surrogate::VectorXd> inputs(n);
    for (std::size_t r = 0; r < rounds; ++r) {
        for (std::size_t i = 0; i < n; ++i)
            inputs[i] = set.dims.setup == Setup::Distributed
                            ? surrogate::distributed_features(loads.values[i], lambda, p_o, i)
                            : surrogate::decentralized_features(loads.values[i], lambda_pair, p_o, copies, i);
        const auto out = surrogate::infer_dispatch(set, spec, inputs);
        merge_worst(worst, out.violations);
        p_o = out.proposal.p_o;
        if (set.dims.setup == Setup::Distributed) {
            double sum = 0.0;
            for (double p : p_o) sum += p;
            lambda = solvers::dual_update_distributed(lambda, rho, sum);
        } else {
            copies = out.copies;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (i != j)
                        lambda_pair[i][j] =
                            solvers::dual_update_decentralized(lambda_pair[i][j], rho, copies[i][j], p_o[j]);
        }
    }
    return worst;
}

}  // namespace

WeekResult run_week_simulation(const BenchConfig& config, const grid::CommunitySpec& spec,
                               const energy::EnergyModel& model) {
    check_common(config);
    grid::validate(spec);
    model.validate();

    std::vector<surrogate::SurrogateSet> sets;
    for (Setup s : config.setups) {
        const auto dims = surrogate::setup_dims(s, spec.n_agents(), spec.n_loads(), spec.n_gens());
        if (config.network_dir) {
            sets.push_back(surrogate::read_surrogate_set(*config.network_dir, dims));
        } else {
            auto it = config.fixed_hidden.find(s);
            if (it == config.fixed_hidden.end())
                throw ConfigError(fmt::format("no hidden width for {}", to_string(s)));
            sets.push_back(surrogate::build_surrogate(dims, it->second, grid::derive_seed(config.seed, 1000 + index_of(s))));
        }
    }

    const std::size_t n = spec.n_agents();
    const std::size_t cells = sets.size() * config.repetitions;
    std::vector<WeekCell> out(cells);
    const unsigned jobs = config.backend == EnergyBackend::Analytic ? config.jobs : 1;

    parallel_for(cells, jobs, [&](std::size_t c) {
        const auto& set = sets[c / config.repetitions];
        const std::size_t rep = c % config.repetitions;
        const Setup setup = set.dims.setup;
        const std::uint64_t rep_seed = grid::derive_seed(config.seed, rep);
        const std::uint64_t calls = calls_per_event(setup, n, config.rounds);
        const std::uint64_t per_call = set.nets.front().flops();
        const auto event_cost = energy::analytic_report(per_call, calls, model, set.hidden);
        const std::uint64_t messages = solvers::message_stats(setup, n, config.rounds).messages;

        WeekCell& cell = out[c];
        cell.total.backend = config.backend == EnergyBackend::Analytic ? energy::Backend::Analytic
                                                                       : energy::Backend::Wallclock;
        for (std::size_t e = 0; e < kWeekEvents; ++e) {
            const std::uint64_t seed = grid::derive_seed(rep_seed, e);
            const auto loads = grid::sample_loads(spec, config.fluctuation, seed);

            energy::EnergyReport cost = event_cost;
            surrogate::ViolationReport v;
            if (config.backend == EnergyBackend::Analytic) {
                v = run_event(set, spec, loads, config.rounds, config.rho);
            } else {
                cost = energy::measure_wallclock(
                    [&] { v = run_event(set, spec, loads, config.rounds, config.rho); },
                    config.device_power_w, model.grid_intensity, per_call * calls, calls);
            }
            merge_worst(cell.worst, v);

            BenchRow row;
            row.experiment = "week";
            row.setup = setup;
            row.n_agents = n;
            row.n_gens = spec.n_gens();
            row.hidden = set.hidden;
            row.total_params = set.parameter_count();
            row.flops = cost.flops;
            row.calls = cost.calls;
            row.energy_kwh = cost.energy_kwh;
            row.carbon_g = cost.carbon_g;
            row.messages = messages;
            row.repetition = rep;
            row.seed = seed;
            cell.rows.push_back(row);

            if (config.backend == EnergyBackend::Wallclock) cell.total += cost;
        }
        if (config.backend == EnergyBackend::Analytic)
            cell.total = energy::analytic_report(per_call, calls * kWeekEvents, model, set.hidden);
    });

    WeekResult result;
    result.events = kWeekEvents;
    for (std::size_t c = 0; c < cells; ++c) {
        const auto& set = sets[c / config.repetitions];
        const Setup setup = set.dims.setup;
        result.rows.insert(result.rows.end(), out[c].rows.begin(), out[c].rows.end());
        auto [it, fresh] = result.totals.try_emplace(setup, out[c].total);
        if (!fresh) it->second += out[c].total;
        merge_worst(result.worst[setup], out[c].worst);
        result.per_event[setup] = energy::analytic_report(
            set.nets.front().flops(), calls_per_event(setup, n, config.rounds), model, set.hidden);
    }
    sort_rows(result.rows);
    return result;
}

void sort_rows(std::vector<BenchRow>& rows) {
    auto key = [](const BenchRow& r) {
        return std::tie(r.experiment, r.setup, r.n_agents, r.n_gens, r.hidden, r.repetition, r.seed);
    };
    std::stable_sort(rows.begin(), rows.end(), [&](const BenchRow& a, const BenchRow& b) { return key(a) < key(b); });
}

bool params_consistent(const BenchRow& row, std::size_t n_loads) {
    const auto dims = surrogate::setup_dims(row.setup, row.n_agents, n_loads, row.n_gens);
    return surrogate::param_count(dims, row.hidden) == row.total_params;
}

namespace {

std::string real(double v) { return fmt::format("{:.12g}", v); }

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return fields;
}

std::uint64_t parse_uint(const std::string& text, std::size_t line, const char* column) {
    std::uint64_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size())
        throw Error("bench_harness", fmt::format("line {}: bad integer in column '{}'", line, column));
    return value;
}

double parse_real(const std::string& text, std::size_t line, const char* column) {
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size())
        throw Error("bench_harness", fmt::format("line {}: bad number in column '{}'", line, column));
    return value;
}

}  // namespace

void emit_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
    out << kCsvHeader << '\n';
    for (const auto& r : rows) {
        out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.experiment, to_string(r.setup),
                           r.n_agents, r.n_gens, r.hidden, r.total_params, r.flops, r.calls,
                           real(r.energy_kwh), real(r.carbon_g), r.messages, r.repetition, r.seed);
    }
}

void emit_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("bench_harness", fmt::format("cannot write {}", path.string()));
    emit_csv(out, rows);
}

std::vector<BenchRow> parse_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("bench_harness", "empty results file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw Error("bench_harness", "unexpected results header");

    std::vector<BenchRow> rows;
    std::size_t number = 1;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 13)
            throw Error("bench_harness", fmt::format("line {}: expected 13 columns, got {}", number, f.size()));
        BenchRow r;
        r.experiment = f[0];
        const auto setup = parse_setup(f[1]);
        if (!setup) throw Error("bench_harness", fmt::format("line {}: unknown setup '{}'", number, f[1]));
        r.setup = *setup;
        r.n_agents = parse_uint(f[2], number, "n_agents");
        r.n_gens = parse_uint(f[3], number, "n_gens");
        r.hidden = parse_uint(f[4], number, "hidden");
        r.total_params = parse_uint(f[5], number, "total_params");
        r.flops = parse_uint(f[6], number, "flops");
        r.calls = parse_uint(f[7], number, "calls");
        r.energy_kwh = parse_real(f[8], number, "energy_kwh");
        r.carbon_g = parse_real(f[9], number, "carbon_g");
        r.messages = parse_uint(f[10], number, "messages");
        r.repetition = parse_uint(f[11], number, "repetition");
        r.seed = parse_uint(f[12], number, "seed");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<BenchRow> parse_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("bench_harness", fmt::format("cannot read {}", path.string()));
    return parse_csv(in);
}

std::filesystem::path output_path(const std::filesystem::path& dir, const std::string& experiment,
                                  const std::string& tag) {
    return dir / fmt::format("{}_{}.csv", experiment, tag);
}

std::vector<SummaryRow> summarize(const std::vector<BenchRow>& rows) {
    std::map<std::tuple<std::string, Setup, std::size_t, std::size_t>, SummaryRow> groups;
    for (const auto& r : rows) {
        auto& g = groups[{r.experiment, r.setup, r.n_gens, r.hidden}];
        g.experiment = r.experiment;
        g.setup = r.setup;
        g.n_gens = r.n_gens;
        g.hidden = r.hidden;
        g.total_params = r.total_params;
        ++g.count;
        g.mean_energy_kwh += r.energy_kwh;
        g.mean_carbon_g += r.carbon_g;
    }
    std::vector<SummaryRow> out;
    for (auto& [key, g] : groups) {
        g.mean_energy_kwh /= static_cast<double>(g.count);
        g.mean_carbon_g /= static_cast<double>(g.count);
        out.push_back(g);
    }
    return out;
}

void print_summary(std::ostream& out, const std::vector<SummaryRow>& summary) {
    out << fmt::format("{:<11} {:<14} {:>6} {:>7} {:>12} {:>6} {:>14} {:>14}\n", "experiment", "setup", "n_gens",
                       "hidden", "params", "rows", "energy_kwh", "carbon_g");
    for (const auto& s : summary)
        out << fmt::format("{:<11} {:<14} {:>6} {:>7} {:>12} {:>6} {:>14.6g} {:>14.6g}\n", s.experiment,
                           to_string(s.setup), s.n_gens, s.hidden, s.total_params, s.count, s.mean_energy_kwh,
                           s.mean_carbon_g);
}

}  // namespace dispatch::bench
