#include <doctest.h>

#include <random>

#include "dispatch/solvers.hpp"
#include "oracles.hpp"
#include "trace_compare.hpp"

using namespace dispatch;

TEST_CASE("local step analytic examples") {
    grid::AgentSpec agent;
    agent.generators = {{1.0, 0.0, 0.0, 10.0}};
    const std::vector<double> loads{2.0};

    auto r = solvers::local_solve_distributed(agent, loads, 0.0, 0.0, 2.0);
    CHECK(r.p_g[0] == doctest::Approx(1.0));
    CHECK(r.p_o == doctest::Approx(-1.0));

    r = solvers::local_solve_distributed(agent, loads, 4.0, 0.0, 2.0);
    CHECK(r.p_g[0] == 0.0);
    CHECK(r.p_o == -2.0);
}

TEST_CASE("local step agrees with a grid search over the box") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> a(0.2, 3.0), b(0.0, 10.0), cap(1.0, 5.0), load(0.0, 6.0),
        lam(-10.0, 10.0), s(-3.0, 3.0), rho(0.5, 3.0);
    for (int trial = 0; trial < 15; ++trial) {
        grid::AgentSpec agent;
        agent.generators = {{a(rng), b(rng), 0.0, cap(rng)}, {a(rng), b(rng), 0.0, cap(rng)}};
        const std::vector<double> loads{load(rng)};
        const double l = lam(rng), sum_others = s(rng), r = rho(rng);
        auto objective = [&](double p0, double p1) {
            const double po = p0 + p1 - loads[0];
            return agent.generators[0].cost(p0) + agent.generators[1].cost(p1) + l * (po + sum_others) +
                   0.5 * r * (po + sum_others) * (po + sum_others);
        };
        const auto local = solvers::local_solve_distributed(agent, loads, l, sum_others, r);
        const auto best = oracle::brute_force_box2(agent.generators[0].p_max, agent.generators[1].p_max, 0.01,
                                                   objective);
        const double mine = objective(local.p_g[0], local.p_g[1]);
        CHECK(mine <= best.objective + 1e-9);
        CHECK(best.objective - mine <= 0.05);
        CHECK(std::abs(local.p_g[0] - best.p[0]) <= 0.02);
        CHECK(std::abs(local.p_g[1] - best.p[1]) <= 0.02);
        CHECK(local.p_o == local.p_g[0] + local.p_g[1] - loads[0]);
    }
}

TEST_CASE("dual update arithmetic") {
    CHECK(solvers::dual_update_distributed(0.0, 1.0, 0.5) == 0.5);
    CHECK(solvers::dual_update_distributed(3.25, 1.0, 0.0) == 3.25);
    CHECK(solvers::dual_update_distributed(1.0, 2.0, -0.25) == 0.5);
    CHECK_THROWS_AS(solvers::dual_update_distributed(1.0, 0.0, 1.0), Error);
}

TEST_CASE("three-agent instance reaches the centralized objective") {
    const auto spec = oracle::three_agent_instance();
    const auto loads = grid::nominal_loads(spec);
    const auto ref = solvers::solve_centralized(spec, loads);
    const auto run = solvers::run_distributed(spec, loads);
    CHECK(run.state.trace.size() <= 500);
    CHECK(std::abs(run.solution.objective - ref.objective) / ref.objective <= 1e-4);
    CHECK(run.solution.balance_residual <= 1e-4);
    // The multiplier settles at minus the clearing price.
    CHECK(run.state.lambda == doctest::Approx(-solvers::centralized_price(spec, loads)).epsilon(1e-3));
}

TEST_CASE("dual sequence replays from the trace") {
    const auto spec = oracle::three_agent_instance();
    const auto run = solvers::run_distributed(spec, grid::nominal_loads(spec));
    double lambda = 0.0;
    for (const auto& rec : run.state.trace) {
        lambda = lambda + run.state.rho * rec.net_balance;
        CHECK(same_bits(lambda, rec.dual));
    }
}

TEST_CASE("boxes and identity hold at every iterate") {
    const auto spec = oracle::three_agent_instance();
    const auto loads = grid::nominal_loads(spec);
    solvers::AdmmOptions opt;
    std::size_t rounds = 0;
    opt.observer = [&](const solvers::AdmmState&, const solvers::AdmmState& after) {
        ++rounds;
        for (std::size_t i = 0; i < spec.n_agents(); ++i) {
            double gen = 0.0;
            for (std::size_t g = 0; g < spec.n_gens(); ++g) {
                CHECK(after.p_g[i][g] >= 0.0);
                CHECK(after.p_g[i][g] <= spec.agents[i].generators[g].p_max);
                gen += after.p_g[i][g];
            }
            CHECK(after.p_o_snapshot[i] == gen - loads.values[i][0]);
        }
    };
    const auto run = solvers::run_distributed(spec, loads, opt);
    CHECK(rounds == run.state.trace.size());
}

TEST_CASE("zero-cost single agent settles immediately") {
    const auto spec = oracle::make_spec({{{0.0, 0.0, 0.0, 10.0}}}, {{4.0}});
    const auto run = solvers::run_distributed(spec, grid::nominal_loads(spec));
    CHECK(run.state.trace.size() <= 2);
    CHECK(run.solution.p_g[0][0] == 4.0);
}

TEST_CASE("iteration cap raises with the partial trace") {
    const auto spec = oracle::three_agent_instance();
    solvers::AdmmOptions opt;
    opt.max_iter = 1;
    try {
        solvers::run_distributed(spec, grid::nominal_loads(spec), opt);
        FAIL("expected NonConvergedError");
    } catch (const solvers::NonConvergedError& e) {
        CHECK(e.trace().size() == 1);
        CHECK(e.module() == "dispatch_solvers");
    }
}

TEST_CASE("residual shrinks between iteration 20 and 200") {
    const auto spec = oracle::three_agent_instance();
    solvers::AdmmOptions opt;
    opt.tol = 1e-300;
    opt.max_iter = 200;
    std::vector<solvers::TraceRecord> trace;
    try {
        trace = solvers::run_distributed(spec, grid::nominal_loads(spec), opt).state.trace;
    } catch (const solvers::NonConvergedError& e) {
        trace = e.trace();
    }
    REQUIRE(trace.size() == 200);
    auto combined = [&](std::size_t k) { return trace[k - 1].balance_residual + trace[k - 1].consensus_residual; };
    CHECK(combined(200) < combined(20));
}

TEST_CASE("agent order and thread count leave the trace bitwise unchanged") {
    const auto spec = oracle::three_agent_instance();
    const auto loads = grid::sample_loads(spec, 0.1, 3);
    const auto base = solvers::run_distributed(spec, loads);
    std::vector<std::size_t> order{0, 1, 2};
    do {
        for (unsigned jobs : {1u, 3u}) {
            solvers::AdmmOptions opt;
            opt.agent_order = order;
            opt.jobs = jobs;
            const auto other = solvers::run_distributed(spec, loads, opt);
            CHECK(identical_traces(base.state.trace, other.state.trace));
            CHECK(base.solution.p_g == other.solution.p_g);
        }
    } while (std::next_permutation(order.begin(), order.end()));

    solvers::AdmmOptions bad;
    bad.agent_order = {0, 0, 1};
    CHECK_THROWS_AS(solvers::run_distributed(spec, loads, bad), Error);
}

TEST_CASE("infeasible samples are rejected before iterating") {
    const auto spec = oracle::three_agent_instance();
    grid::LoadSample loads;
    loads.values = {{30.0}, {30.0}, {30.0}};
    CHECK_THROWS_AS(solvers::run_distributed(spec, loads), grid::ValidationError);
}
