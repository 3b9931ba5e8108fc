#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "dispatch/parallel.hpp"
#include "dispatch/solvers.hpp"
#include "solvers_internal.hpp"

namespace dispatch::solvers {

double DecentralizedState::consensus_residual() const {
    double worst = 0.0;
    const std::size_t n = p_o_snapshot.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) worst = std::max(worst, std::abs(p_o_copy[i][j] - p_o_snapshot[j]));
    return worst;
}

double DecentralizedState::local_balance_error() const {
    double worst = 0.0;
    const std::size_t n = p_o_snapshot.size();
    for (std::size_t i = 0; i < n; ++i) {
        double total = p_o_snapshot[i];
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) total += p_o_copy[i][j];
        worst = std::max(worst, std::abs(total));
    }
    return worst;
}

LocalConsensusDispatch local_solve_decentralized(const grid::AgentSpec& agent,
                                                 std::span<const double> loads_i,
                                                 const NeighborView& view, double rho) {
    if (!(rho > 0.0)) throw Error("dispatch_solvers", fmt::format("rho = {} must be positive", rho));
    const std::size_t m = view.neighbor_po.size();
    if (view.duals_out.size() != m || view.duals_in.size() != m || view.copies_of_me.size() != m)
        throw Error("dispatch_solvers", "neighbour vectors must all have length N_A - 1");

    double load = 0.0;
    for (double d : loads_i) load += d;

    LocalConsensusDispatch out;
    if (m == 0) {
        out.p_g = clear_price(agent.generators, 0.0, load).output;
        out.p_o = net_export(out.p_g, loads_i);
        return out;
    }

    // For a fixed P_o the copies solve an equality-constrained separable QP
    // whose value is -mean(lambda_out)*P_o + rho/(2m)*(P_o + Q)^2 + const.
    // Together with the incoming terms the P_o-part has gradient
    // alpha*P_o - beta, and generator stationarity gives
    // T + pi/alpha = L + beta/alpha with pi the local marginal cost.
    const double md = static_cast<double>(m);
    double in_duals = 0.0, out_duals = 0.0, held = 0.0, q = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        in_duals += view.duals_in[k];
        out_duals += view.duals_out[k];
        held += view.copies_of_me[k];
        q += view.neighbor_po[k];
    }
    const double alpha = rho * (md + 1.0 / md);
    const double beta = in_duals + rho * held + out_duals / md - rho * q / md;

    out.p_g = clear_price(agent.generators, 1.0 / alpha, load + beta / alpha).output;
    out.p_o = net_export(out.p_g, loads_i);

    // Copies: c_j = P_o^j - (lambda_ij + nu)/rho with nu fixed by the local balance.
    const double nu = (rho * (q + out.p_o) - out_duals) / md;
    out.copies.resize(m);
    double running = out.p_o;
    for (std::size_t k = 0; k + 1 < m; ++k) {
        out.copies[k] = view.neighbor_po[k] - (view.duals_out[k] + nu) / rho;
        running += out.copies[k];
    }
    // The last copy negates the running sum, so P_o + copies accumulated in
    // neighbour order is exactly zero.
    out.copies[m - 1] = -running;
    return out;
}

double dual_update_decentralized(double lambda_ij, double rho, double copy_ij_next,
                                 double po_j_next) {
    if (!(rho > 0.0)) throw Error("dispatch_solvers", fmt::format("rho = {} must be positive", rho));
    return lambda_ij + rho * (copy_ij_next - po_j_next);
}

DecentralizedResult run_decentralized(const grid::CommunitySpec& spec,
                                      const grid::LoadSample& loads,
                                      const ConsensusOptions& options) {
    if (!(options.rho > 0.0))
        throw Error("dispatch_solvers", fmt::format("rho = {} must be positive", options.rho));
    grid::validate(spec);
    grid::validate_sample(spec, loads);

    const std::size_t n = spec.n_agents();
    const auto order = resolve_order(options.agent_order, n);

    DecentralizedState state;
    state.rho = options.rho;
    state.lambda_pair.assign(n, std::vector<double>(n, 0.0));
    state.p_o_copy.assign(n, std::vector<double>(n, 0.0));
    state.p_o_snapshot.assign(n, 0.0);
    state.p_g.assign(n, std::vector<double>(spec.n_gens(), 0.0));

    DecentralizedResult result;
    std::vector<TraceRecord> trace;

    for (std::size_t round = 0; round < options.max_iter; ++round) {
        DecentralizedState next;
        next.k = state.k + 1;
        next.rho = state.rho;
        next.lambda_pair = state.lambda_pair;
        next.p_o_copy.assign(n, std::vector<double>(n, 0.0));
        next.p_o_snapshot.assign(n, 0.0);
        next.p_g.assign(n, {});

        // Primal phase against the round-k snapshot.
        parallel_for(n, options.jobs, [&](std::size_t slot) {
            const std::size_t i = order[slot];
            std::vector<double> out_d, in_d, nb_po, copies_of_me;
            out_d.reserve(n);
            in_d.reserve(n);
            nb_po.reserve(n);
            copies_of_me.reserve(n);
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                out_d.push_back(state.lambda_pair[i][j]);
                in_d.push_back(state.lambda_pair[j][i]);
                nb_po.push_back(state.p_o_snapshot[j]);
                copies_of_me.push_back(state.p_o_copy[j][i]);
            }
            auto local = local_solve_decentralized(spec.agents[i], loads.values[i],
                                                   {out_d, in_d, nb_po, copies_of_me}, state.rho);
            next.p_g[i] = std::move(local.p_g);
            next.p_o_snapshot[i] = local.p_o;
            std::size_t k = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) next.p_o_copy[i][j] = local.copies[k++];
        });

        // Dual phase after the barrier.
        double max_dual = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                next.lambda_pair[i][j] = dual_update_decentralized(
                    state.lambda_pair[i][j], state.rho, next.p_o_copy[i][j], next.p_o_snapshot[j]);
                max_dual = std::max(max_dual, std::abs(next.lambda_pair[i][j]));
            }

        double sum_po = 0.0;
        for (double p : next.p_o_snapshot) sum_po += p;

        TraceRecord rec;
        rec.iter = next.k;
        rec.objective = dispatch_cost(spec, next.p_g);
        rec.balance_residual = std::abs(sum_po);
        rec.consensus_residual = next.consensus_residual();
        rec.dual = max_dual;
        rec.net_balance = sum_po;
        rec.local_balance_error = next.local_balance_error();
        trace.push_back(rec);

        if (options.observer) options.observer(state, next);
        if (options.keep_history) result.history.push_back(next);
        state = std::move(next);

        if (rec.consensus_residual <= options.tol && rec.balance_residual <= options.tol) {
            result.solution = make_solution(spec, loads, state.p_g);
            state.trace = std::move(trace);
            result.state = std::move(state);
            return result;
        }
    }
    throw NonConvergedError(
        fmt::format("decentralized consensus ADMM did not converge in {} iterations",
                    options.max_iter),
        std::move(trace));
}

}  // namespace dispatch::solvers
