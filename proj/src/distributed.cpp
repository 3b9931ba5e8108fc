#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "dispatch/parallel.hpp"
#include "dispatch/solvers.hpp"
#include "solvers_internal.hpp"

namespace dispatch::solvers {

namespace {

void require_rho(double rho) {
    if (!(rho > 0.0)) throw Error("dispatch_solvers", fmt::format("rho = {} must be positive", rho));
}

double sum_loads(std::span<const double> loads) {
    double total = 0.0;
    for (double d : loads) total += d;
    return total;
}

}  // namespace

std::vector<std::size_t> resolve_order(const std::vector<std::size_t>& order, std::size_t n) {
    if (order.empty()) {
        std::vector<std::size_t> identity(n);
        std::iota(identity.begin(), identity.end(), 0);
        return identity;
    }
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k)
        if (sorted[k] != k || sorted.size() != n)
            throw Error("dispatch_solvers", "agent_order must be a permutation of the agents");
    return order;
}

LocalDispatch local_solve_distributed(const grid::AgentSpec& agent, std::span<const double> loads_i,
                                      double lambda, double sum_others_po, double rho) {
    require_rho(rho);
    // Stationarity: f_g'(P_g) = pi with pi = -(lambda + rho*(T - L + s)), i.e.
    // T + pi/rho = L - s - lambda/rho.
    const double load = sum_loads(loads_i);
    const auto clearing =
        clear_price(agent.generators, 1.0 / rho, load - sum_others_po - lambda / rho);
    LocalDispatch out;
    out.p_g = clearing.output;
    out.p_o = net_export(out.p_g, loads_i);
    return out;
}

double dual_update_distributed(double lambda, double rho, double sum_po) {
    require_rho(rho);
    return lambda + rho * sum_po;
}

DistributedResult run_distributed(const grid::CommunitySpec& spec, const grid::LoadSample& loads,
                                  const AdmmOptions& options) {
    require_rho(options.rho);
    grid::validate(spec);
    grid::validate_sample(spec, loads);

    const std::size_t n = spec.n_agents();
    const auto order = resolve_order(options.agent_order, n);

    AdmmState state;
    state.rho = options.rho;
    state.p_o_snapshot.assign(n, 0.0);
    state.p_g.assign(n, std::vector<double>(spec.n_gens(), 0.0));
    std::vector<TraceRecord> trace;

    for (std::size_t round = 0; round < options.max_iter; ++round) {
        AdmmState next;
        next.k = state.k + 1;
        next.rho = state.rho;
        next.p_o_snapshot.assign(n, 0.0);
        next.p_g.assign(n, {});

        // Jacobi: every agent reads only the round-k snapshot.
        parallel_for(n, options.jobs, [&](std::size_t slot) {
            const std::size_t i = order[slot];
            double others = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) others += state.p_o_snapshot[j];
            auto local =
                local_solve_distributed(spec.agents[i], loads.values[i], state.lambda, others, state.rho);
            next.p_g[i] = std::move(local.p_g);
            next.p_o_snapshot[i] = local.p_o;
        });

        double sum_po = 0.0;
        double step = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_po += next.p_o_snapshot[i];
            step = std::max(step, std::abs(next.p_o_snapshot[i] - state.p_o_snapshot[i]));
            for (std::size_t g = 0; g < next.p_g[i].size(); ++g)
                step = std::max(step, std::abs(next.p_g[i][g] - state.p_g[i][g]));
        }
        next.lambda = dual_update_distributed(state.lambda, state.rho, sum_po);

        TraceRecord rec;
        rec.iter = next.k;
        rec.objective = dispatch_cost(spec, next.p_g);
        rec.balance_residual = std::abs(sum_po);
        rec.consensus_residual = step;
        rec.dual = next.lambda;
        rec.net_balance = sum_po;
        trace.push_back(rec);

        if (options.observer) options.observer(state, next);
        state = std::move(next);

        if (rec.balance_residual <= options.tol && step <= options.tol) {
            DistributedResult result;
            result.solution = make_solution(spec, loads, state.p_g);
            state.trace = std::move(trace);
            result.state = std::move(state);
            return result;
        }
    }
    throw NonConvergedError(
        fmt::format("distributed ADMM did not converge in {} iterations", options.max_iter),
        std::move(trace));
}

}  // namespace dispatch::solvers
