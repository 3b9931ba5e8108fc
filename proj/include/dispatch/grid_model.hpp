#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dispatch/bench_config.hpp"
#include "dispatch/error.hpp"

namespace dispatch::grid {

/// Quadratic generator cost a*P^2 + b*P + c with capacity p_max (MW).
struct GeneratorSpec {
    double a = 0.0;      // $/MW^2
    double b = 0.0;      // $/MW
    double c = 0.0;      // $
    double p_max = 0.0;  // MW

    double cost(double p) const { return (a * p + b) * p + c; }
    double marginal_cost(double p) const { return 2.0 * a * p + b; }

    bool operator==(const GeneratorSpec&) const = default;
};

struct AgentSpec {
    std::size_t id = 0;
    std::vector<GeneratorSpec> generators;
    std::vector<double> nominal_loads;  // MW

    double capacity() const;
    double nominal_demand() const;

    bool operator==(const AgentSpec&) const = default;
};

struct CommunitySpec {
    std::vector<AgentSpec> agents;

    std::size_t n_agents() const { return agents.size(); }
    // Per-agent counts; meaningful once validate() has passed.
    std::size_t n_gens() const { return agents.empty() ? 0 : agents.front().generators.size(); }
    std::size_t n_loads() const { return agents.empty() ? 0 : agents.front().nominal_loads.size(); }

    double capacity() const;
    double nominal_demand() const;

    bool operator==(const CommunitySpec&) const = default;
};

/// N_A x N_D realised demands, row per agent.
struct LoadSample {
    std::vector<std::vector<double>> values;
    std::uint64_t seed = 0;

    double agent_demand(std::size_t agent) const;
    double total_demand() const;
};

/// A load sample equal to the nominal loads (no fluctuation).
LoadSample nominal_loads(const CommunitySpec& spec);

enum class ValidationIssue {
    Infeasible,
    NonUniformAgents,
    NonConvexCost,
    InvalidCapacity,
    NegativeLoad,
    Empty,
};

const char* to_string(ValidationIssue issue);

class ValidationError : public Error {
public:
    ValidationError(ValidationIssue issue, const std::string& what)
        : Error("grid_model", what), issue_(issue) {}
    ValidationIssue issue() const noexcept { return issue_; }

private:
    ValidationIssue issue_;
};

class ParseError : public Error {
public:
    ParseError(std::string field, const std::string& what)
        : Error("grid_model", what), field_(std::move(field)) {}
    // Dotted path of the offending field, e.g. "agents[0].generators[1].p_max".
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Returns the first violated invariant, if any.
std::optional<ValidationError> check(const CommunitySpec& spec);

/// Throws ValidationError when any invariant fails.
void validate(const CommunitySpec& spec);

/// Throws ValidationError(Infeasible) when a realised sample exceeds capacity.
void validate_sample(const CommunitySpec& spec, const LoadSample& loads);

/// Each load drawn independently and uniformly in [(1-phi)*nominal, (1+phi)*nominal].
/// Pure function of (spec, fluctuation, seed).
LoadSample sample_loads(const CommunitySpec& spec, double fluctuation, std::uint64_t seed);

/// Deterministic child seed for stream `index` of `base` (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Seed from DISPATCH_SEED when set, otherwise `fallback`.
std::uint64_t seed_from_env(std::uint64_t fallback);

struct Scenario {
    CommunitySpec spec;
    bench::BenchConfig bench;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const CommunitySpec& spec, const bench::BenchConfig& bench);
void write_scenario(const std::filesystem::path& path, const CommunitySpec& spec,
                    const bench::BenchConfig& bench = {});

/// Bus active-power demands (MW) of the 33-bus radial distribution feeder.
const std::vector<double>& ieee33_bus_loads_mw();

struct SynthesisOptions {
    std::size_t gens_per_agent = 2;
    std::size_t loads_per_agent = 1;
    double capacity_margin = 1.5;  // total capacity / total nominal demand
};

/// One agent per bus. Each bus load is split evenly across `loads_per_agent`
/// load nodes; generators are synthesised with staggered quadratic costs and
/// equal capacity so that total capacity = margin * total demand.
CommunitySpec synthesize_community(const std::vector<double>& bus_loads_mw,
                                   const SynthesisOptions& options);

}  // namespace dispatch::grid
