#include "dispatch/grid_model.hpp"

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>

#include <fmt/core.h>

namespace dispatch::grid {

double AgentSpec::capacity() const {
    double total = 0.0;
    for (const auto& g : generators) total += g.p_max;
    return total;
}

double AgentSpec::nominal_demand() const {
    return std::accumulate(nominal_loads.begin(), nominal_loads.end(), 0.0);
}

double CommunitySpec::capacity() const {
    double total = 0.0;
    for (const auto& a : agents) total += a.capacity();
    return total;
}

double CommunitySpec::nominal_demand() const {
    double total = 0.0;
    for (const auto& a : agents) total += a.nominal_demand();
    return total;
}

double LoadSample::agent_demand(std::size_t agent) const {
    const auto& row = values.at(agent);
    return std::accumulate(row.begin(), row.end(), 0.0);
}

double LoadSample::total_demand() const {
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) total += agent_demand(i);
    return total;
}

LoadSample nominal_loads(const CommunitySpec& spec) {
    LoadSample sample;
    sample.values.reserve(spec.n_agents());
    for (const auto& a : spec.agents) sample.values.push_back(a.nominal_loads);
    return sample;
}

const char* to_string(ValidationIssue issue) {
    switch (issue) {
        case ValidationIssue::Infeasible: return "Infeasible";
        case ValidationIssue::NonUniformAgents: return "NonUniformAgents";
        case ValidationIssue::NonConvexCost: return "NonConvexCost";
        case ValidationIssue::InvalidCapacity: return "InvalidCapacity";
        case ValidationIssue::NegativeLoad: return "NegativeLoad";
        case ValidationIssue::Empty: return "Empty";
    }
    return "?";
}

std::optional<ValidationError> check(const CommunitySpec& spec) {
    using enum ValidationIssue;
    if (spec.agents.empty()) return ValidationError(Empty, "community has no agents");

    const std::size_t n_gens = spec.agents.front().generators.size();
    const std::size_t n_loads = spec.agents.front().nominal_loads.size();
    if (n_gens == 0 || n_loads == 0)
        return ValidationError(Empty, "every agent needs at least one generator and one load");

    for (std::size_t i = 0; i < spec.agents.size(); ++i) {
        const auto& agent = spec.agents[i];
        if (agent.generators.size() != n_gens || agent.nominal_loads.size() != n_loads)
            return ValidationError(
                NonUniformAgents,
                fmt::format("agent {} has {} generators / {} loads, expected {} / {}", i,
                            agent.generators.size(), agent.nominal_loads.size(), n_gens, n_loads));
        for (std::size_t g = 0; g < agent.generators.size(); ++g) {
            const auto& gen = agent.generators[g];
            if (!(gen.a >= 0.0))
                return ValidationError(NonConvexCost,
                                       fmt::format("agent {} generator {}: a = {} < 0", i, g, gen.a));
            if (!(gen.p_max > 0.0) || !std::isfinite(gen.p_max))
                return ValidationError(
                    InvalidCapacity,
                    fmt::format("agent {} generator {}: p_max = {} must be positive", i, g, gen.p_max));
        }
        for (std::size_t d = 0; d < agent.nominal_loads.size(); ++d)
            if (!(agent.nominal_loads[d] >= 0.0))
                return ValidationError(NegativeLoad,
                                       fmt::format("agent {} load {} is negative", i, d));
    }

    if (spec.nominal_demand() > spec.capacity())
        return ValidationError(Infeasible,
                               fmt::format("demand {} MW exceeds capacity {} MW",
                                           spec.nominal_demand(), spec.capacity()));
    return std::nullopt;
}

void validate(const CommunitySpec& spec) {
    if (auto err = check(spec)) throw *err;
}

void validate_sample(const CommunitySpec& spec, const LoadSample& loads) {
    if (loads.values.size() != spec.n_agents())
        throw ValidationError(ValidationIssue::NonUniformAgents,
                              "load sample row count does not match agent count");
    for (const auto& row : loads.values)
        if (row.size() != spec.n_loads())
            throw ValidationError(ValidationIssue::NonUniformAgents,
                                  "load sample column count does not match loads per agent");
    const double demand = loads.total_demand();
    if (demand > spec.capacity())
        throw ValidationError(ValidationIssue::Infeasible,
                              fmt::format("sampled demand {} MW exceeds capacity {} MW", demand,
                                          spec.capacity()));
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t state = base ^ (0xd1b54a32d192ed03ULL * (index + 1));
    return splitmix64(state);
}

LoadSample sample_loads(const CommunitySpec& spec, double fluctuation, std::uint64_t seed) {
    if (!(fluctuation >= 0.0 && fluctuation < 1.0))
        throw Error("grid_model", fmt::format("fluctuation {} outside [0, 1)", fluctuation));

    LoadSample sample;
    sample.seed = seed;
    sample.values.reserve(spec.n_agents());
    // splitmix64 stream mapped to [0,1) with 53 random bits; unlike
    // std::uniform_real_distribution this is identical across standard libraries.
    std::uint64_t state = seed;
    for (const auto& agent : spec.agents) {
        std::vector<double> row;
        row.reserve(agent.nominal_loads.size());
        for (double nominal : agent.nominal_loads) {
            const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
            row.push_back(nominal * (1.0 - fluctuation + 2.0 * fluctuation * u));
        }
        sample.values.push_back(std::move(row));
    }
    return sample;
}

std::uint64_t seed_from_env(std::uint64_t fallback) {
    const char* env = std::getenv("DISPATCH_SEED");
    if (env == nullptr || *env == '\0') return fallback;
    char* end = nullptr;
    const unsigned long long value = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
        throw Error("grid_model", fmt::format("DISPATCH_SEED='{}' is not an unsigned integer", env));
    return value;
}

const std::vector<double>& ieee33_bus_loads_mw() {
    // Active demand per bus, kW / 1000. Bus 1 is the substation.
    static const std::vector<double> loads = {
        0.000, 0.100, 0.090, 0.120, 0.060, 0.060, 0.200, 0.200, 0.060, 0.060, 0.045,
        0.060, 0.060, 0.120, 0.060, 0.060, 0.060, 0.090, 0.090, 0.090, 0.090, 0.090,
        0.090, 0.420, 0.420, 0.060, 0.060, 0.060, 0.120, 0.200, 0.150, 0.210, 0.060};
    return loads;
}

CommunitySpec synthesize_community(const std::vector<double>& bus_loads_mw,
                                   const SynthesisOptions& options) {
    if (options.gens_per_agent == 0 || options.loads_per_agent == 0)
        throw Error("grid_model", "synthesis needs at least one generator and one load per agent");

    const double demand = std::accumulate(bus_loads_mw.begin(), bus_loads_mw.end(), 0.0);
    const std::size_t n_units = bus_loads_mw.size() * options.gens_per_agent;
    const double unit_capacity = options.capacity_margin * demand / static_cast<double>(n_units);

    CommunitySpec spec;
    for (std::size_t i = 0; i < bus_loads_mw.size(); ++i) {
        AgentSpec agent;
        agent.id = i;
        for (std::size_t g = 0; g < options.gens_per_agent; ++g) {
            GeneratorSpec gen;
            gen.a = 20.0 * (1.0 + 0.25 * static_cast<double>((i + g) % 5));
            gen.b = 10.0 + 2.0 * static_cast<double>((3 * i + g) % 7);
            gen.c = 0.0;
            gen.p_max = unit_capacity;
            agent.generators.push_back(gen);
        }
        agent.nominal_loads.assign(options.loads_per_agent,
                                   bus_loads_mw[i] / static_cast<double>(options.loads_per_agent));
        spec.agents.push_back(std::move(agent));
    }
    return spec;
}

}  // namespace dispatch::grid
