#include <doctest.h>

#include <random>

#include "dispatch/surrogates.hpp"
#include "oracles.hpp"

using namespace dispatch;
using namespace dispatch::surrogate;

namespace {

// Worst relative gap between the analytic gradient and central differences.
double gradient_gap(MlpSurrogate net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const VectorXd theta = net.parameters();
    const VectorXd g = mse_gradient(net, x, y);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta[k]));
        VectorXd plus = theta, minus = theta;
        plus[k] += h;
        minus[k] -= h;
        net.set_parameters(plus);
        const double fp = mse_loss(net, x, y);
        net.set_parameters(minus);
        const double fm = mse_loss(net, x, y);
        const double fd = (fp - fm) / (2.0 * h);
        const double scale = std::max({std::abs(fd), std::abs(g[k]), 1e-6});
        worst = std::max(worst, std::abs(fd - g[k]) / scale);
    }
    return worst;
}

}  // namespace

TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n01;
    SUBCASE("smallest network (four parameters)") {
        for (int point = 0; point < 3; ++point) {
            auto net = make_network(1, 1, 1, 50 + point);
            net.b1[0] = 0.3 + 0.1 * point;  // keep the unit active
            Eigen::MatrixXd x(4, 1), y(4, 1);
            for (int r = 0; r < 4; ++r) {
                x(r, 0) = 0.5 + 0.2 * r;
                y(r, 0) = n01(rng);
            }
            CHECK(gradient_gap(net, x, y) <= 1e-5);
        }
    }
    SUBCASE("wider networks at three random points") {
        for (int point = 0; point < 3; ++point) {
            auto net = make_network(4, 7, 3, 70 + point);
            Eigen::MatrixXd x = Eigen::MatrixXd::Random(12, 4);
            Eigen::MatrixXd y = Eigen::MatrixXd::Random(12, 3);
            CHECK(gradient_gap(net, x, y) <= 1e-5);
        }
    }
    SUBCASE("with fitted normalisation") {
        auto net = make_network(3, 5, 2, 90);
        Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 3) * 4.0;
        Eigen::MatrixXd y = Eigen::MatrixXd::Random(20, 2) * 10.0;
        TrainOptions opt;
        opt.epochs = 0;
        train(net, x, y, opt);
        REQUIRE(net.normalized());
        CHECK(gradient_gap(net, x, y) <= 1e-5);
    }
}

TEST_CASE("memorising identical rows lowers the loss") {
    auto net = make_network(3, 8, 2, 1);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(16, 3);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(16, 2);
    for (int r = 0; r < 16; ++r) {
        x.row(r) << 1.0, -0.5, 2.0;
        y.row(r) << 3.0, -1.0;
    }
    TrainOptions opt;
    opt.epochs = 50;
    opt.standardize = false;
    const auto result = train(net, x, y, opt);
    REQUIRE(result.loss_history.size() == 51);
    CHECK(result.loss_history.back() < result.loss_history.front());
}

TEST_CASE("zero learning rate keeps the loss constant") {
    auto net = make_network(3, 8, 2, 1);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 3);
    const Eigen::MatrixXd y = Eigen::MatrixXd::Random(10, 2);
    TrainOptions opt;
    opt.epochs = 5;
    opt.learning_rate = 0.0;
    const auto result = train(net, x, y, opt);
    for (double l : result.loss_history) CHECK(l == result.loss_history.front());
}

TEST_CASE("training is deterministic in its seed") {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(40, 3);
    const Eigen::MatrixXd y = Eigen::MatrixXd::Random(40, 2);
    TrainOptions opt;
    opt.epochs = 10;
    opt.batch = 7;
    opt.seed = 5;
    auto a = make_network(3, 6, 2, 2), b = make_network(3, 6, 2, 2), c = make_network(3, 6, 2, 2);
    train(a, x, y, opt);
    train(b, x, y, opt);
    opt.seed = 6;
    train(c, x, y, opt);
    CHECK(a == b);
    CHECK_FALSE(a == c);
}

TEST_CASE("shape mismatches are rejected") {
    auto net = make_network(3, 4, 2, 0);
    CHECK_THROWS_AS(train(net, Eigen::MatrixXd::Zero(5, 2), Eigen::MatrixXd::Zero(5, 2), {}), DimensionMismatch);
    CHECK_THROWS_AS(mse_loss(net, Eigen::MatrixXd::Zero(5, 3), Eigen::MatrixXd::Zero(4, 2)), DimensionMismatch);
    auto set = build_surrogate(setup_dims(Setup::Distributed, 3, 1, 2), 4, 0);
    const auto data = generate_dataset(oracle::three_agent_instance(), Setup::Centralized, 3, {}, 0);
    CHECK_THROWS_AS(train(set, data, {}), DimensionMismatch);
}

TEST_CASE("per-agent training uses only each agent's rows") {
    const auto spec = oracle::three_agent_instance();
    const auto data = generate_dataset(spec, Setup::Distributed, 90, {}, 2);
    auto set = build_surrogate(data.dims, 6, 3);
    TrainOptions opt;
    opt.epochs = 20;
    const auto histories = train(set, data, opt);
    REQUIRE(histories.size() == 3);
    for (const auto& h : histories) CHECK(h.loss_history.back() < h.loss_history.front());
}
