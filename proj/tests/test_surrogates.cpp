#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "dispatch/surrogates.hpp"
#include "oracles.hpp"

using namespace dispatch;
using namespace dispatch::surrogate;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> to_nested(const RowMatrix& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
    return out;
}

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("table dimensions at 33 agents, 100 loads and 100 generators") {
    auto c = setup_dims(Setup::Centralized, 33, 100, 100);
    auto d = setup_dims(Setup::Distributed, 33, 100, 100);
    auto x = setup_dims(Setup::Decentralized, 33, 100, 100);
    CHECK(c.in_dim == 3300);
    CHECK(c.out_dim == 3333);
    CHECK(c.networks() == 1);
    CHECK(d.in_dim == 133);
    CHECK(d.out_dim == 101);
    CHECK(d.networks() == 33);
    CHECK(x.in_dim == 196);
    CHECK(x.out_dim == 133);
    CHECK(x.networks() == 33);
    CHECK_THROWS_AS(setup_dims(Setup::Centralized, 0, 1, 1), Error);
}

TEST_CASE("parameter counts agree with a weight-by-weight count") {
    for (Setup s : kAllSetups)
        for (std::size_t h : {1, 7, 64}) {
            const auto dims = setup_dims(s, 5, 3, 4);
            CHECK(param_count(dims, h) ==
                  dims.networks() * oracle::count_params_by_hand(dims.in_dim, h, dims.out_dim));
        }
    CHECK(network_params(1, 1, 1) == 4);
    CHECK(make_network(1, 1, 1, 0).parameters().size() == 4);
}

TEST_CASE("published parameter totals") {
    CHECK(param_count(setup_dims(Setup::Centralized, 33, 100, 100), 6000) == 39'807'333);
    CHECK(param_count(setup_dims(Setup::Distributed, 33, 100, 100), 5133) == 39'809'748);
    CHECK(param_count(setup_dims(Setup::Decentralized, 33, 100, 100), 3655) == 39'807'339);
}

TEST_CASE("hidden-node equalization is the largest width within budget") {
    const std::pair<Setup, std::uint64_t> cases[] = {
        {Setup::Centralized, 39'807'333}, {Setup::Distributed, 39'809'748}, {Setup::Decentralized, 39'807'339}};
    const std::size_t expected[] = {6000, 5133, 3655};
    for (std::size_t k = 0; k < 3; ++k) {
        const auto dims = setup_dims(cases[k].first, 33, 100, 100);
        const auto h = equalize_hidden_nodes(dims, cases[k].second);
        CHECK(h == expected[k]);
        CHECK(param_count(dims, h) <= cases[k].second);
        CHECK(param_count(dims, h + 1) > cases[k].second);
    }
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto dims = setup_dims(kAllSetups[trial % 3], 1 + rng() % 10, 1 + rng() % 10, 1 + rng() % 10);
        const std::uint64_t target = param_count(dims, 1) + rng() % 100000;
        const auto h = equalize_hidden_nodes(dims, target);
        CHECK(param_count(dims, h) <= target);
        CHECK(param_count(dims, h + 1) > target);
    }
    CHECK_THROWS_AS(equalize_hidden_nodes(setup_dims(Setup::Centralized, 33, 100, 100), 100), TargetTooSmall);
}

TEST_CASE("equal-budget totals stay within one hundredth of a percent") {
    const std::uint64_t totals[] = {39'807'333, 39'809'748, 39'807'339};
    const auto [lo, hi] = std::minmax_element(std::begin(totals), std::end(totals));
    CHECK(static_cast<double>(*hi - *lo) / static_cast<double>(*lo) < 1e-4);
}

TEST_CASE("forward pass FLOP formula") {
    CHECK(flop_count(2, 3, 1) == 25);
    CHECK(flop_count(3300, 6000, 3333) == 79'611'333);
    CHECK(flop_count(133, 5133, 101) == 2'412'611);
    CHECK(flop_count(196, 3655, 133) == 2'412'433);
    for (std::uint64_t h = 1; h < 50; ++h) CHECK(flop_count(7, 2 * h, 5) > flop_count(7, h, 5));
}

TEST_CASE("forward examples") {
    auto net = make_zero_network(3, 4, 1);
    net.b2[0] = 5.0;
    const std::vector<double> any{1.0, -2.0, 7.0};
    CHECK(forward(net, any)[0] == 5.0);

    auto tiny = make_zero_network(2, 1, 1);
    tiny.w1(0, 0) = 1.0;
    tiny.w1(1, 0) = 1.0;
    tiny.w2(0, 0) = 1.0;
    const std::vector<double> x{1.0, 2.0};
    CHECK(forward(tiny, x)[0] == 3.0);
    const std::vector<double> wrong{1.0};
    CHECK_THROWS_AS(forward(tiny, wrong), DimensionMismatch);
}

TEST_CASE("forward matches a naive dense multiply") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto net = make_network(3 + trial, 5 + 2 * trial, 2 + trial % 3, 100 + trial);
        std::vector<double> x(net.in_dim);
        for (double& v : x) v = u(rng);
        const auto y = forward(net, x);
        const auto ref = oracle::dense_forward(to_nested(net.w1), to_std(net.b1), to_nested(net.w2), to_std(net.b2), x);
        REQUIRE(static_cast<std::size_t>(y.size()) == ref.size());
        for (std::size_t k = 0; k < ref.size(); ++k) CHECK(std::abs(y[static_cast<Eigen::Index>(k)] - ref[k]) <= 1e-12);

        Eigen::MatrixXd batch(2, static_cast<Eigen::Index>(x.size()));
        for (std::size_t c = 0; c < x.size(); ++c) {
            batch(0, static_cast<Eigen::Index>(c)) = x[c];
            batch(1, static_cast<Eigen::Index>(c)) = -x[c];
        }
        const auto yb = forward_batch(net, batch);
        for (std::size_t k = 0; k < ref.size(); ++k)
            CHECK(std::abs(yb(0, static_cast<Eigen::Index>(k)) - ref[k]) <= 1e-12);
    }
}

TEST_CASE("forward is linear in the output weights") {
    auto net = make_network(4, 6, 3, 9);
    const std::vector<double> x{0.5, -1.0, 2.0, 0.25};
    net.b2.setZero();
    const RowMatrix w_a = net.w2;
    const RowMatrix w_b = RowMatrix::Random(6, 3);
    net.w2 = w_a;
    const VectorXd ya = forward(net, x);
    net.w2 = w_b;
    const VectorXd yb = forward(net, x);
    net.w2 = 2.0 * w_a - 3.0 * w_b;
    const VectorXd ysum = forward(net, x);
    CHECK((ysum - (2.0 * ya - 3.0 * yb)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("initialisation is deterministic and bounded") {
    const auto a = make_network(10, 20, 5, 42);
    const auto b = make_network(10, 20, 5, 42);
    const auto c = make_network(10, 20, 5, 43);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(a.w1.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(10.0));
    CHECK(a.w2.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(20.0));

    const auto dims = setup_dims(Setup::Distributed, 4, 2, 3);
    const auto set = build_surrogate(dims, 8, 5);
    CHECK(set.nets.size() == 4);
    CHECK(set.nets[0] == make_network(dims.in_dim, 8, dims.out_dim, grid::derive_seed(5, 0)));
    CHECK(set.nets[3] == make_network(dims.in_dim, 8, dims.out_dim, grid::derive_seed(5, 3)));
    CHECK(set.parameter_count() == param_count(dims, 8));
    CHECK(build_surrogate(setup_dims(Setup::Centralized, 33, 2, 2), 3, 0).nets.size() == 1);
}

TEST_CASE("serialization round trip is bitwise") {
    auto net = make_network(6, 9, 4, 1234);
    net.in_shift = VectorXd::Random(6);
    net.in_scale = VectorXd::Constant(6, 0.3);
    net.out_shift = VectorXd::Random(4);
    net.out_scale = VectorXd::Constant(4, 1.7);
    const auto bytes = serialize_network(net);
    const auto back = deserialize_network(bytes);
    CHECK(back == net);
    CHECK(serialize_network(back) == bytes);

    const auto dir = fs::temp_directory_path() / "dispatch_net_tests";
    fs::remove_all(dir);
    const auto dims = setup_dims(Setup::Decentralized, 3, 2, 2);
    const auto set = build_surrogate(dims, 5, 8);
    write_surrogate_set(dir, set);
    CHECK(fs::exists(dir / "decentralized_net2.mlp"));
    const auto loaded = read_surrogate_set(dir, dims);
    REQUIRE(loaded.nets.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(loaded.nets[k] == set.nets[k]);
    CHECK(loaded.hidden == 5);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(deserialize_network(truncated), Error);
    auto garbage = bytes;
    garbage[0] = 'X';
    CHECK_THROWS_AS(deserialize_network(garbage), Error);
    CHECK_THROWS_AS(read_surrogate_set(dir, setup_dims(Setup::Decentralized, 3, 2, 5)), Error);
}

TEST_CASE("feature vectors follow the table layout") {
    const std::vector<double> loads{1.0, 2.0};
    const std::vector<double> po{0.1, 0.2, 0.3};
    const auto xd = distributed_features(loads, 7.0, po, 1);
    CHECK(to_std(xd) == std::vector<double>{1.0, 2.0, 7.0, 0.1, 0.3});

    solvers::Matrix lam{{0, 11, 12}, {21, 0, 23}, {31, 32, 0}};
    solvers::Matrix copies{{0, 0.11, 0.12}, {0.21, 0, 0.23}, {0.31, 0.32, 0}};
    const auto xc = decentralized_features(loads, lam, po, copies, 1);
    CHECK(to_std(xc) == std::vector<double>{1.0, 2.0, 11, 32, 0.1, 0.3, 0.11, 0.32});

    const auto dims = setup_dims(Setup::Decentralized, 3, 2, 4);
    CHECK(feature_names(dims).size() == dims.in_dim);
    CHECK(label_names(dims).size() == dims.out_dim);
    CHECK(feature_names(setup_dims(Setup::Centralized, 3, 2, 4)).size() == 6);
}

TEST_CASE("centralized dataset labels are the analytic optimum") {
    const auto spec = oracle::make_spec({{{1, 0, 0, 10}}, {{2, 0, 0, 10}}}, {{3.0}, {0.0}});
    const auto data = generate_dataset(spec, Setup::Centralized, 10, {}, 4);
    REQUIRE(data.size() == 10);
    for (Eigen::Index r = 0; r < 10; ++r) {
        const double d = data.inputs(r, 0) + data.inputs(r, 1);
        // Equal marginal cost 2*P1 = 4*P2 with P1 + P2 = d.
        const double p1 = 2.0 * d / 3.0, p2 = d / 3.0;
        CHECK(data.targets(r, 0) == doctest::Approx(p1 - data.inputs(r, 0)));
        CHECK(data.targets(r, 1) == doctest::Approx(p1));
        CHECK(data.targets(r, 2) == doctest::Approx(p2 - data.inputs(r, 1)));
        CHECK(data.targets(r, 3) == doctest::Approx(p2));
    }
    const auto empty = generate_dataset(spec, Setup::Centralized, 0, {}, 4);
    CHECK(empty.size() == 0);
    CHECK(empty.inputs.cols() == 2);
    CHECK(empty.targets.cols() == 4);
}

TEST_CASE("multi-agent datasets record single ADMM transitions") {
    const auto spec = oracle::three_agent_instance();
    const auto dist = generate_dataset(spec, Setup::Distributed, 60, {}, 1);
    CHECK(dist.inputs.cols() == 1 + 3);
    CHECK(dist.targets.cols() == 2 + 1);
    CHECK(dist.size() == 60);
    for (Eigen::Index r = 0; r < 60; ++r) {
        const std::size_t i = dist.agent[static_cast<std::size_t>(r)];
        CHECK(dist.targets(r, 0) == doctest::Approx(dist.targets(r, 1) + dist.targets(r, 2) - dist.inputs(r, 0)));
        for (int g = 0; g < 2; ++g) {
            CHECK(dist.targets(r, 1 + g) >= 0.0);
            CHECK(dist.targets(r, 1 + g) <= spec.agents[i].generators[static_cast<std::size_t>(g)].p_max);
        }
        // Replaying the local step on the recorded features reproduces the label.
        const double lambda = dist.inputs(r, 1);
        const double others = dist.inputs(r, 2) + dist.inputs(r, 3);
        const std::vector<double> li{dist.inputs(r, 0)};
        const auto local = solvers::local_solve_distributed(spec.agents[i], li, lambda, others, 1.0);
        CHECK(local.p_g[0] == dist.targets(r, 1));
        CHECK(local.p_g[1] == dist.targets(r, 2));
    }

    const auto dec = generate_dataset(spec, Setup::Decentralized, 30, {}, 1);
    CHECK(dec.inputs.cols() == 1 + 3 * 2);
    CHECK(dec.targets.cols() == 2 + 3);
    for (Eigen::Index r = 0; r < 30; ++r) {
        // Local balance: P_o plus outgoing copies.
        CHECK(std::abs(dec.targets(r, 0) + dec.targets(r, 3) + dec.targets(r, 4)) <= 1e-12);
    }

    std::ostringstream csv;
    write_dataset_csv(csv, dec);
    const auto text = csv.str();
    CHECK(text.substr(0, text.find('\n')) ==
          "agent,pd_0,lambda_in_0,lambda_in_1,po_nb_0,po_nb_1,copy_in_0,copy_in_1,po,pg_0,pg_1,copy_out_0,copy_out_1");
    CHECK(std::count(text.begin(), text.end(), '\n') == 31);
}

TEST_CASE("dataset generation surfaces solver failures") {
    const auto spec = oracle::three_agent_instance();
    SolverSettings s;
    s.max_iter = 2;
    CHECK_THROWS_AS(generate_dataset(spec, Setup::Distributed, 1000, s, 0), SolverFailed);
}

TEST_CASE("inference reports violations without projecting") {
    const auto spec = oracle::three_agent_instance();
    const auto dims = setup_dims(Setup::Decentralized, 3, 1, 2);
    const auto set = build_surrogate(dims, 6, 3);
    const auto loads = grid::nominal_loads(spec);
    solvers::Matrix zero(3, std::vector<double>(3, 0.0));
    const std::vector<double> po(3, 0.0);
    std::vector<VectorXd> inputs;
    for (std::size_t i = 0; i < 3; ++i) inputs.push_back(decentralized_features(loads.values[i], zero, po, zero, i));
    const auto out = infer_dispatch(set, spec, inputs);
    CHECK(out.violations.finite);
    CHECK(out.copies.size() == 3);
    CHECK(out.copies[0].size() == 3);
    // The raw outputs are kept: recompute one box violation by hand.
    double worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t g = 0; g < 2; ++g) {
            const double p = out.proposal.p_g[i][g];
            worst = std::max(worst, p < 0 ? -p : std::max(0.0, p - 10.0));
        }
    CHECK(out.violations.box_violation_max == worst);
    CHECK(out.violations.identity_error_max > 0.0);

    inputs.pop_back();
    CHECK_THROWS_AS(infer_dispatch(set, spec, inputs), DimensionMismatch);
    CHECK_THROWS_AS(infer_dispatch(build_surrogate(setup_dims(Setup::Centralized, 2, 1, 2), 3, 0), spec, {}),
                    DimensionMismatch);
}

TEST_CASE("a memorised sample infers with negligible violations") {
    const auto spec = oracle::make_spec({{{1, 0, 0, 10}}, {{2, 0, 0, 10}}}, {{3.0}, {0.0}});
    const auto loads = grid::nominal_loads(spec);
    const auto sol = solvers::solve_centralized(spec, loads);
    const auto dims = setup_dims(Setup::Centralized, 2, 1, 1);
    // Zero weights and the solver output as bias reproduce the sample exactly.
    SurrogateSet set{dims, 2, {make_zero_network(dims.in_dim, 2, dims.out_dim)}};
    set.nets[0].b2 << sol.p_o[0], sol.p_g[0][0], sol.p_o[1], sol.p_g[1][0];
    const auto out = infer_dispatch(set, spec, {centralized_features(loads)});
    CHECK(out.violations.box_violation_total == 0.0);
    CHECK(out.violations.identity_error_max <= 1e-12);
    CHECK(out.violations.balance_residual <= 1e-12);
    CHECK(out.proposal.objective == doctest::Approx(6.0));
}
