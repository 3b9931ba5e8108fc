#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "dispatch/error.hpp"
#include "dispatch/grid_model.hpp"
#include "dispatch/setup.hpp"

namespace dispatch::solvers {

using Matrix = std::vector<std::vector<double>>;

struct DispatchSolution {
    Matrix p_g;                   // N_A x N_G, MW
    std::vector<double> p_o;      // net export per agent, MW
    double objective = 0.0;       // $
    double balance_residual = 0.0;  // |sum p_o|, MW
};

/// sum(p_g) - sum(loads), always evaluated in index order so that the
/// net-export identity holds bit-for-bit wherever it is recomputed.
double net_export(std::span<const double> p_g, std::span<const double> loads);

/// Total generation cost of a dispatch (fixed costs included).
double dispatch_cost(const grid::CommunitySpec& spec, const Matrix& p_g);

/// Assembles a solution from generator set-points; p_o and residual derived.
DispatchSolution make_solution(const grid::CommunitySpec& spec, const grid::LoadSample& loads,
                               Matrix p_g);

// ---------------------------------------------------------------------------
// Price clearing

/// Result of clearing a set of quadratic units against a price-elastic target.
struct PriceClearing {
    double price = 0.0;           // common marginal cost
    std::vector<double> output;   // MW per unit, inside [0, p_max]
};

/// Finds the price pi and outputs P_g(pi) = argmin_{0<=P<=p_max} f_g(P) - pi*P
/// such that sum_g P_g + weight*pi = target. Exact breakpoint search over the
/// piecewise-linear response: no iteration tolerance. Units with a = 0 are
/// bang-bang; at a tie price they are filled in ascending index order.
/// weight = 0 is a fixed-demand clearing and throws Infeasible when target is
/// outside [0, capacity].
PriceClearing clear_price(std::span<const grid::GeneratorSpec> units, double weight,
                          double target);

// ---------------------------------------------------------------------------
// Centralized

/// Global minimiser of total cost subject to generator boxes and sum p_o = 0.
DispatchSolution solve_centralized(const grid::CommunitySpec& spec, const grid::LoadSample& loads,
                                   double tol = 1e-4);

/// Clearing price of the centralized optimum ($/MW).
double centralized_price(const grid::CommunitySpec& spec, const grid::LoadSample& loads);

// ---------------------------------------------------------------------------
// Iteration traces

struct TraceRecord {
    std::size_t iter = 0;
    double objective = 0.0;
    double balance_residual = 0.0;    // |sum p_o|
    double consensus_residual = 0.0;  // decentralized: max |copy_ij - p_o_j|; distributed: max primal step
    double dual = 0.0;                // distributed: lambda; decentralized: max |lambda_ij|
    double net_balance = 0.0;         // signed sum p_o
    double local_balance_error = 0.0;  // decentralized: max_i |p_o_i + sum_j copy_ij|
};

/// Columns: iter,objective,balance_residual,consensus_residual,lambda_or_max_dual
void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace);

class NonConvergedError : public Error {
public:
    NonConvergedError(const std::string& what, std::vector<TraceRecord> trace)
        : Error("dispatch_solvers", what), trace_(std::move(trace)) {}
    const std::vector<TraceRecord>& trace() const noexcept { return trace_; }

private:
    std::vector<TraceRecord> trace_;
};

// ---------------------------------------------------------------------------
// Distributed ADMM (central coordinator, scalar multiplier)

struct AdmmState {
    std::size_t k = 0;
    double lambda = 0.0;
    std::vector<double> p_o_snapshot;
    Matrix p_g;
    double rho = 1.0;
    std::vector<TraceRecord> trace;
};

struct LocalDispatch {
    std::vector<double> p_g;
    double p_o = 0.0;
};

/// argmin sum_g f_g(P_g) + lambda*(P_o + s) + rho/2*(P_o + s)^2 over the
/// generator boxes, with P_o = sum P_g - sum loads and s = sum_others_po.
LocalDispatch local_solve_distributed(const grid::AgentSpec& agent, std::span<const double> loads_i,
                                      double lambda, double sum_others_po, double rho);

/// lambda + rho * sum_po
double dual_update_distributed(double lambda, double rho, double sum_po);

struct AdmmOptions {
    double rho = 1.0;
    double tol = 1e-4;
    std::size_t max_iter = 1000;
    // Order in which agents are visited inside a round. Empty: ascending.
    // Results do not depend on it; exposed so that can be verified.
    std::vector<std::size_t> agent_order;
    unsigned jobs = 1;
    // Called once per round with the state before and after the round.
    std::function<void(const AdmmState& before, const AdmmState& after)> observer;
};

struct DistributedResult {
    DispatchSolution solution;
    AdmmState state;
};

DistributedResult run_distributed(const grid::CommunitySpec& spec, const grid::LoadSample& loads,
                                  const AdmmOptions& options = {});

// ---------------------------------------------------------------------------
// Decentralized consensus ADMM (peer-to-peer, copy variables)

struct DecentralizedState {
    std::size_t k = 0;
    Matrix lambda_pair;   // (i,j): lambda^{i,j}; diagonal unused
    Matrix p_o_copy;      // (i,j): agent i's copy of p_o[j]; diagonal unused
    std::vector<double> p_o_snapshot;
    Matrix p_g;
    double rho = 1.0;
    std::vector<TraceRecord> trace;

    double consensus_residual() const;
    double local_balance_error() const;
};

/// Inputs of agent i's primal step, each over neighbours j != i in ascending j.
struct NeighborView {
    std::span<const double> duals_out;      // lambda^{i,j}
    std::span<const double> duals_in;       // lambda^{j,i}
    std::span<const double> neighbor_po;    // p_o[j] at k
    std::span<const double> copies_of_me;   // copy^{j,i} at k
};

struct LocalConsensusDispatch {
    std::vector<double> p_g;
    double p_o = 0.0;
    std::vector<double> copies;  // copy^{i,j} at k+1, neighbours ascending
};

/// Minimises the agent's generation cost plus, summed over every neighbour j,
///   lambda_ij (c_j - P_o^j) + lambda_ji (C_ji - P_o) + rho/2 (c_j - P_o^j)^2 + rho/2 (C_ji - P_o)^2
/// subject to generator boxes and the hard local balance P_o + sum_j c_j = 0.
/// With no neighbours the balance forces P_o = 0 (self-sufficient dispatch).
LocalConsensusDispatch local_solve_decentralized(const grid::AgentSpec& agent,
                                                 std::span<const double> loads_i,
                                                 const NeighborView& view, double rho);

/// lambda_ij + rho * (copy_ij_next - po_j_next)
double dual_update_decentralized(double lambda_ij, double rho, double copy_ij_next,
                                 double po_j_next);

struct ConsensusOptions {
    double rho = 1.0;
    double tol = 1e-4;
    std::size_t max_iter = 2000;
    std::vector<std::size_t> agent_order;
    unsigned jobs = 1;
    bool keep_history = false;  // store a state snapshot per round (trace omitted)
    std::function<void(const DecentralizedState& before, const DecentralizedState& after)> observer;
};

struct DecentralizedResult {
    DispatchSolution solution;
    DecentralizedState state;
    std::vector<DecentralizedState> history;  // filled when keep_history
};

DecentralizedResult run_decentralized(const grid::CommunitySpec& spec,
                                      const grid::LoadSample& loads,
                                      const ConsensusOptions& options = {});

// ---------------------------------------------------------------------------
// Communication accounting

struct MessageStats {
    std::size_t messages = 0;
    std::size_t links = 0;
};

/// centralized: one unidirectional broadcast to each agent (rounds ignored);
/// distributed: agent->coordinator and coordinator->agent per round;
/// decentralized: every ordered agent pair per round.
/// links counts physical (undirected) channels.
MessageStats message_stats(Setup setup, std::size_t n_agents, std::size_t rounds);

}  // namespace dispatch::solvers
