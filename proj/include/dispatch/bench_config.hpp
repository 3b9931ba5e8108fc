#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "dispatch/setup.hpp"

namespace dispatch::bench {

enum class EnergyBackend { Analytic, Wallclock };

/// Experiment settings. Mirrors the `bench` object of a scenario/config file;
/// CLI flags override individual fields.
struct BenchConfig {
    std::optional<std::filesystem::path> scenario;
    std::vector<Setup> setups{kAllSetups.begin(), kAllSetups.end()};

    // Community dimensions used by the shape-only experiments
    // (table2, size-sweep, scal-sweep).
    std::size_t n_agents = 33;
    std::size_t n_gens = 100;
    std::size_t n_loads = 100;

    std::optional<std::uint64_t> target_params;   // table2
    std::vector<std::size_t> hidden_list;         // size-sweep
    std::vector<std::size_t> gen_list;            // scal-sweep
    std::map<Setup, std::size_t> fixed_hidden{    // scal-sweep and week
        {Setup::Centralized, 6000},
        {Setup::Distributed, 5133},
        {Setup::Decentralized, 3655}};

    double fluctuation = 0.1;
    std::uint64_t seed = 0;
    std::size_t repetitions = 1;
    std::size_t rounds = 1;          // surrogate communication rounds per inference event
    double rho = 1.0;                // dual step used between surrogate rounds

    std::optional<std::filesystem::path> energy_model;
    std::optional<std::filesystem::path> network_dir;
    EnergyBackend backend = EnergyBackend::Analytic;
    double device_power_w = 100.0;   // wallclock backend only

    unsigned jobs = 0;               // 0: hardware concurrency
};

}  // namespace dispatch::bench
