#include <cmath>
#include <numeric>
#include <random>

#include <fmt/core.h>

#include "dispatch/surrogates.hpp"

namespace dispatch::surrogate {

namespace {

void check_shapes(const MlpSurrogate& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.cols() != static_cast<Eigen::Index>(net.in_dim) ||
        y.cols() != static_cast<Eigen::Index>(net.out_dim) || x.rows() != y.rows())
        throw DimensionMismatch(fmt::format("data {}x{} -> {}x{} does not fit a {}-{}-{} network",
                                            x.rows(), x.cols(), y.rows(), y.cols(), net.in_dim,
                                            net.hidden_dim, net.out_dim));
}

// Data mapped into the network's normalised space.
struct Normalized {
    Eigen::MatrixXd x, y;
};

Normalized normalize(const MlpSurrogate& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (!net.normalized()) return {x, y};
    Normalized n;
    n.x = ((x.rowwise() - net.in_shift.transpose()).array().rowwise() / net.in_scale.transpose().array()).matrix();
    n.y = ((y.rowwise() - net.out_shift.transpose()).array().rowwise() / net.out_scale.transpose().array()).matrix();
    return n;
}

double loss_normalized(const MlpSurrogate& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.rows() == 0) return 0.0;
    Eigen::MatrixXd h = ((x * net.w1).rowwise() + net.b1.transpose()).cwiseMax(0.0);
    Eigen::MatrixXd e = ((h * net.w2).rowwise() + net.b2.transpose()) - y;
    return e.squaredNorm() / static_cast<double>(e.size());
}

// Backpropagation of the mean squared error; returns gradients in place.
void gradient_normalized(const MlpSurrogate& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                         RowMatrix& gw1, VectorXd& gb1, RowMatrix& gw2, VectorXd& gb2) {
    Eigen::MatrixXd z = (x * net.w1).rowwise() + net.b1.transpose();
    Eigen::MatrixXd h = z.cwiseMax(0.0);
    Eigen::MatrixXd g = ((h * net.w2).rowwise() + net.b2.transpose()) - y;
    g *= 2.0 / static_cast<double>(g.size());
    gw2 = h.transpose() * g;
    gb2 = g.colwise().sum().transpose();
    Eigen::MatrixXd gz = (g * net.w2.transpose()).cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    gw1 = x.transpose() * gz;
    gb1 = gz.colwise().sum().transpose();
}

void fit_normalization(MlpSurrogate& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    auto stats = [](const Eigen::MatrixXd& m, VectorXd& shift, VectorXd& scale) {
        shift = m.colwise().mean().transpose();
        scale.resize(m.cols());
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double var = (m.col(c).array() - shift[c]).square().mean();
            // Constant columns pass through unscaled.
            scale[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    };
    stats(x, net.in_shift, net.in_scale);
    stats(y, net.out_shift, net.out_scale);
}

// Fisher-Yates with an explicit bounded draw so the order is library-independent.
void shuffle(std::vector<Eigen::Index>& idx, std::mt19937_64& rng) {
    for (std::size_t k = idx.size(); k > 1; --k) {
        const std::uint64_t bound = k;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t r;
        do r = rng(); while (r >= limit);
        std::swap(idx[k - 1], idx[static_cast<std::size_t>(r % bound)]);
    }
}

}  // namespace

double mse_loss(const MlpSurrogate& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    check_shapes(net, inputs, targets);
    const auto n = normalize(net, inputs, targets);
    return loss_normalized(net, n.x, n.y);
}

VectorXd mse_gradient(const MlpSurrogate& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    check_shapes(net, inputs, targets);
    const auto n = normalize(net, inputs, targets);
    MlpSurrogate grad = make_zero_network(net.in_dim, net.hidden_dim, net.out_dim);
    gradient_normalized(net, n.x, n.y, grad.w1, grad.b1, grad.w2, grad.b2);
    return grad.parameters();
}

TrainResult train(MlpSurrogate& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                  const TrainOptions& options) {
    check_shapes(net, inputs, targets);
    if (inputs.rows() == 0) throw Error("surrogates", "cannot train on an empty dataset");
    if (options.batch == 0) throw Error("surrogates", "batch size must be positive");

    if (options.standardize) fit_normalization(net, inputs, targets);
    const auto data = normalize(net, inputs, targets);

    TrainResult result;
    result.loss_history.push_back(loss_normalized(net, data.x, data.y));

    std::mt19937_64 rng(options.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    RowMatrix gw1, gw2;
    VectorXd gb1, gb2;
    Eigen::MatrixXd bx, by;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += options.batch) {
            const std::size_t len = std::min(options.batch, order.size() - start);
            bx.resize(static_cast<Eigen::Index>(len), data.x.cols());
            by.resize(static_cast<Eigen::Index>(len), data.y.cols());
            for (std::size_t r = 0; r < len; ++r) {
                bx.row(static_cast<Eigen::Index>(r)) = data.x.row(order[start + r]);
                by.row(static_cast<Eigen::Index>(r)) = data.y.row(order[start + r]);
            }
            gradient_normalized(net, bx, by, gw1, gb1, gw2, gb2);
            net.w1 -= options.learning_rate * gw1;
            net.b1 -= options.learning_rate * gb1;
            net.w2 -= options.learning_rate * gw2;
            net.b2 -= options.learning_rate * gb2;
        }
        result.loss_history.push_back(loss_normalized(net, data.x, data.y));
    }
    return result;
}

std::vector<TrainResult> train(SurrogateSet& set, const ImitationDataset& data, const TrainOptions& options) {
    if (data.dims.in_dim != set.dims.in_dim || data.dims.out_dim != set.dims.out_dim)
        throw DimensionMismatch("dataset widths do not match the surrogate setup");
    std::vector<TrainResult> results;
    for (std::size_t k = 0; k < set.nets.size(); ++k) {
        std::vector<Eigen::Index> rows;
        for (std::size_t r = 0; r < data.agent.size(); ++r)
            if (data.agent[r] == k) rows.push_back(static_cast<Eigen::Index>(r));
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), data.inputs.cols());
        Eigen::MatrixXd y(static_cast<Eigen::Index>(rows.size()), data.targets.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)) = data.inputs.row(rows[r]);
            y.row(static_cast<Eigen::Index>(r)) = data.targets.row(rows[r]);
        }
        TrainOptions per_net = options;
        per_net.seed = grid::derive_seed(options.seed, k);
        results.push_back(train(set.nets[k], x, y, per_net));
    }
    return results;
}

}  // namespace dispatch::surrogate
