#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dispatch/bench_config.hpp"
#include "dispatch/energy.hpp"
#include "dispatch/error.hpp"
#include "dispatch/grid_model.hpp"
#include "dispatch/setup.hpp"
#include "dispatch/surrogates.hpp"

namespace dispatch::bench {

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("bench_harness", what) {}
};

inline constexpr std::size_t kEventsPerHour = 4;
inline constexpr std::size_t kHoursPerDay = 24;
inline constexpr std::size_t kDaysPerWeek = 7;
inline constexpr std::size_t kWeekEvents = kEventsPerHour * kHoursPerDay * kDaysPerWeek;  // 672

struct BenchRow {
    std::string experiment;
    Setup setup = Setup::Centralized;
    std::size_t n_agents = 0;
    std::size_t n_gens = 0;
    std::size_t hidden = 0;
    std::uint64_t total_params = 0;
    std::uint64_t flops = 0;
    std::uint64_t calls = 0;
    double energy_kwh = 0.0;
    double carbon_g = 0.0;
    std::uint64_t messages = 0;
    std::size_t repetition = 0;
    std::uint64_t seed = 0;

    bool operator==(const BenchRow&) const = default;
};

/// Hidden width whose total parameter count is closest to `target`
/// (ties resolve to the smaller width).
std::size_t nearest_hidden_nodes(const surrogate::SetupDims& dims, std::uint64_t target);

/// Per setup: width matched to the target parameter count, one communication
/// iteration of inference (1 call centralized, N_A calls otherwise, times
/// `rounds`), energy from the model.
std::vector<BenchRow> run_equal_params(const BenchConfig& config, const energy::EnergyModel& model);

/// One row per (setup, hidden, repetition).
std::vector<BenchRow> run_size_sweep(const BenchConfig& config, const energy::EnergyModel& model);

/// One row per (setup, N_G, repetition) with per-setup hidden held at fixed_hidden.
std::vector<BenchRow> run_scalability_sweep(const BenchConfig& config, const energy::EnergyModel& model);

struct WeekResult {
    std::size_t events = 0;
    std::vector<BenchRow> rows;                          // one per (setup, repetition, event)
    std::map<Setup, energy::EnergyReport> totals;        // over every event and repetition
    std::map<Setup, energy::EnergyReport> per_event;     // analytic cost of a single event
    std::map<Setup, surrogate::ViolationReport> worst;   // worst violations seen
};

/// 4 events/hour x 24 h x 7 days. Each event samples loads from a seed derived
/// from its index, runs `rounds` surrogate communication rounds from a cold
/// start (zero duals and snapshots), and accumulates energy and messages.
WeekResult run_week_simulation(const BenchConfig& config, const grid::CommunitySpec& spec,
                               const energy::EnergyModel& model);

/// Sort key: (experiment, setup, n_agents, n_gens, hidden, repetition, seed).
void sort_rows(std::vector<BenchRow>& rows);

inline constexpr const char* kCsvHeader =
    "experiment,setup,n_agents,n_gens,hidden,total_params,flops,calls,energy_kwh,carbon_g,"
    "messages,repetition,seed";

/// Header plus rows; reals with 12 significant digits, locale-independent.
void emit_csv(std::ostream& out, const std::vector<BenchRow>& rows);
void emit_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows);
std::vector<BenchRow> parse_csv(std::istream& in);
std::vector<BenchRow> parse_csv(const std::filesystem::path& path);

/// `<experiment>_<tag>.csv`
std::filesystem::path output_path(const std::filesystem::path& dir, const std::string& experiment,
                                  const std::string& tag);

/// total_params recomputed from (setup, n_agents, n_gens, hidden) and n_loads.
bool params_consistent(const BenchRow& row, std::size_t n_loads);

struct SummaryRow {
    std::string experiment;
    Setup setup = Setup::Centralized;
    std::size_t n_gens = 0;
    std::size_t hidden = 0;
    std::uint64_t total_params = 0;
    std::size_t count = 0;
    double mean_energy_kwh = 0.0;
    double mean_carbon_g = 0.0;
};

/// Means over repetitions (and events) grouped by (experiment, setup, n_gens, hidden).
std::vector<SummaryRow> summarize(const std::vector<BenchRow>& rows);
void print_summary(std::ostream& out, const std::vector<SummaryRow>& summary);

}  // namespace dispatch::bench
