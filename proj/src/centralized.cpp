#include <cmath>
#include <ostream>

#include <fmt/core.h>
#include <fmt/ostream.h>

#include "dispatch/solvers.hpp"

namespace dispatch::solvers {

double net_export(std::span<const double> p_g, std::span<const double> loads) {
    double gen = 0.0;
    for (double p : p_g) gen += p;
    double load = 0.0;
    for (double d : loads) load += d;
    return gen - load;
}

double dispatch_cost(const grid::CommunitySpec& spec, const Matrix& p_g) {
    double cost = 0.0;
    for (std::size_t i = 0; i < spec.n_agents(); ++i) {
        const auto& gens = spec.agents[i].generators;
        for (std::size_t g = 0; g < gens.size(); ++g) cost += gens[g].cost(p_g[i][g]);
    }
    return cost;
}

DispatchSolution make_solution(const grid::CommunitySpec& spec, const grid::LoadSample& loads,
                               Matrix p_g) {
    DispatchSolution sol;
    sol.p_o.resize(spec.n_agents());
    double balance = 0.0;
    for (std::size_t i = 0; i < spec.n_agents(); ++i) {
        sol.p_o[i] = net_export(p_g[i], loads.values[i]);
        balance += sol.p_o[i];
    }
    sol.objective = dispatch_cost(spec, p_g);
    sol.balance_residual = std::abs(balance);
    sol.p_g = std::move(p_g);
    return sol;
}

namespace {

struct Flattened {
    std::vector<grid::GeneratorSpec> units;
    std::size_t per_agent = 0;
};

Flattened flatten(const grid::CommunitySpec& spec) {
    Flattened f;
    f.per_agent = spec.n_gens();
    for (const auto& a : spec.agents)
        f.units.insert(f.units.end(), a.generators.begin(), a.generators.end());
    return f;
}

}  // namespace

DispatchSolution solve_centralized(const grid::CommunitySpec& spec, const grid::LoadSample& loads,
                                   double tol) {
    grid::validate(spec);
    grid::validate_sample(spec, loads);

    const auto flat = flatten(spec);
    const auto clearing = clear_price(flat.units, 0.0, loads.total_demand());

    Matrix p_g(spec.n_agents());
    for (std::size_t i = 0; i < spec.n_agents(); ++i)
        p_g[i].assign(clearing.output.begin() + static_cast<std::ptrdiff_t>(i * flat.per_agent),
                      clearing.output.begin() + static_cast<std::ptrdiff_t>((i + 1) * flat.per_agent));

    auto sol = make_solution(spec, loads, std::move(p_g));
    if (sol.balance_residual > tol)
        throw Error("dispatch_solvers",
                    fmt::format("centralized balance residual {} exceeds tolerance {}",
                                sol.balance_residual, tol));
    return sol;
}

double centralized_price(const grid::CommunitySpec& spec, const grid::LoadSample& loads) {
    grid::validate_sample(spec, loads);
    return clear_price(flatten(spec).units, 0.0, loads.total_demand()).price;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace) {
    out << "iter,objective,balance_residual,consensus_residual,lambda_or_max_dual\n";
    for (const auto& r : trace)
        fmt::print(out, "{},{:.12g},{:.12g},{:.12g},{:.12g}\n", r.iter, r.objective,
                   r.balance_residual, r.consensus_residual, r.dual);
}

MessageStats message_stats(Setup setup, std::size_t n_agents, std::size_t rounds) {
    if (n_agents == 0) throw Error("dispatch_solvers", "message_stats needs at least one agent");
    switch (setup) {
        case Setup::Centralized: return {n_agents, n_agents};
        case Setup::Distributed: return {2 * n_agents * rounds, n_agents};
        case Setup::Decentralized:
            return {n_agents * (n_agents - 1) * rounds, n_agents * (n_agents - 1) / 2};
    }
    return {};
}

}  // namespace dispatch::solvers
