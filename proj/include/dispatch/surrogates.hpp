#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dispatch/error.hpp"
#include "dispatch/grid_model.hpp"
#include "dispatch/setup.hpp"
#include "dispatch/solvers.hpp"

namespace dispatch::surrogate {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Eigen::VectorXd;

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& what) : Error("surrogates", what) {}
};

// ---------------------------------------------------------------------------
// Dimensions

struct SetupDims {
    Setup setup = Setup::Centralized;
    std::size_t n_agents = 0, n_loads = 0, n_gens = 0;
    std::size_t in_dim = 0, out_dim = 0;

    /// 1 for centralized, N_A otherwise.
    std::size_t networks() const { return setup == Setup::Centralized ? 1 : n_agents; }
    bool operator==(const SetupDims&) const = default;
};

/// Input/output widths per coordination setup:
///   centralized    in = N_D*N_A          out = (N_G+1)*N_A
///   distributed    in = N_D + N_A        out = N_G+1
///   decentralized  in = N_D + 3(N_A-1)   out = N_G + N_A
SetupDims setup_dims(Setup setup, std::size_t n_agents, std::size_t n_loads, std::size_t n_gens);

/// Parameters of one hidden-layer network with biases on both layers.
constexpr std::uint64_t network_params(std::uint64_t in, std::uint64_t hidden, std::uint64_t out) {
    return hidden * (in + out + 1) + out;
}

/// Total parameters over every network of the setup.
std::uint64_t param_count(const SetupDims& dims, std::size_t hidden);

class TargetTooSmall : public Error {
public:
    explicit TargetTooSmall(const std::string& what) : Error("surrogates", what) {}
};

/// Largest hidden width whose total parameter count does not exceed target.
std::size_t equalize_hidden_nodes(const SetupDims& dims, std::uint64_t target_params);

/// Forward-pass FLOPs: 2*in*h (multiply-add) + h (bias) + h (activation)
/// + 2*h*out + out (bias). Input/output normalisation is not counted.
constexpr std::uint64_t flop_count(std::uint64_t in, std::uint64_t hidden, std::uint64_t out) {
    return 2 * in * hidden + hidden + hidden + 2 * hidden * out + out;
}

// ---------------------------------------------------------------------------
// Network

enum class Activation : std::uint32_t { Relu = 1 };

/// One-hidden-layer perceptron: y = w2^T relu(w1^T x + b1) + b2.
/// Optional affine normalisation maps raw inputs/outputs to the trained
/// space; it is fitted data statistics, not trainable parameters.
struct MlpSurrogate {
    std::size_t in_dim = 0, hidden_dim = 0, out_dim = 0;
    RowMatrix w1;      // in x hidden
    VectorXd b1;       // hidden
    RowMatrix w2;      // hidden x out
    VectorXd b2;       // out
    Activation activation = Activation::Relu;
    std::uint64_t seed = 0;

    VectorXd in_shift, in_scale;    // empty: identity
    VectorXd out_shift, out_scale;  // empty: identity

    std::uint64_t parameter_count() const { return network_params(in_dim, hidden_dim, out_dim); }
    std::uint64_t flops() const { return flop_count(in_dim, hidden_dim, out_dim); }
    bool normalized() const { return in_shift.size() != 0; }

    /// Flattened trainable parameters in the order w1, b1, w2, b2 (row-major).
    VectorXd parameters() const;
    void set_parameters(const VectorXd& theta);

    bool operator==(const MlpSurrogate& other) const;
};

/// Zero-weight network of the given shape.
MlpSurrogate make_zero_network(std::size_t in, std::size_t hidden, std::size_t out);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, deterministic in seed.
MlpSurrogate make_network(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed);

VectorXd forward(const MlpSurrogate& net, std::span<const double> input);

/// Row-wise forward pass over a batch (one sample per row), raw units.
Eigen::MatrixXd forward_batch(const MlpSurrogate& net, const Eigen::MatrixXd& inputs);

/// Every network of one setup.
struct SurrogateSet {
    SetupDims dims;
    std::size_t hidden = 0;
    std::vector<MlpSurrogate> nets;

    std::uint64_t parameter_count() const;
    std::uint64_t flops_per_round() const;  // all networks invoked once
};

/// One network (centralized) or N_A networks seeded derive_seed(seed, agent).
SurrogateSet build_surrogate(const SetupDims& dims, std::size_t hidden, std::uint64_t seed);

void write_network(const std::filesystem::path& path, const MlpSurrogate& net);
MlpSurrogate read_network(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_network(const MlpSurrogate& net);
MlpSurrogate deserialize_network(std::span<const std::uint8_t> bytes);

/// `<dir>/<setup>_net<k>.mlp` for each network.
void write_surrogate_set(const std::filesystem::path& dir, const SurrogateSet& set);
SurrogateSet read_surrogate_set(const std::filesystem::path& dir, const SetupDims& dims);

// ---------------------------------------------------------------------------
// Features

/// Loads of all agents, agent-major.
VectorXd centralized_features(const grid::LoadSample& loads);
/// Local loads, lambda^k, then p_o[j] for j != i ascending.
VectorXd distributed_features(std::span<const double> loads_i, double lambda,
                              std::span<const double> p_o, std::size_t agent);
/// Local loads, lambda^{j,i}, p_o[j], copy^{j,i}; each block over j != i ascending.
VectorXd decentralized_features(std::span<const double> loads_i, const solvers::Matrix& lambda_pair,
                                std::span<const double> p_o, const solvers::Matrix& copies,
                                std::size_t agent);

std::vector<std::string> feature_names(const SetupDims& dims);
std::vector<std::string> label_names(const SetupDims& dims);

// ---------------------------------------------------------------------------
// Imitation data

struct SolverSettings {
    double rho = 1.0;
    double tol = 1e-4;
    std::size_t max_iter = 2000;
    double fluctuation = 0.1;
};

struct ImitationDataset {
    SetupDims dims;
    Eigen::MatrixXd inputs;            // rows: samples
    Eigen::MatrixXd targets;
    std::vector<std::size_t> agent;    // owning network of each row
    std::uint64_t seed = 0;
    SolverSettings settings;

    std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
};

class SolverFailed : public Error {
public:
    explicit SolverFailed(const std::string& what) : Error("surrogates", what) {}
};

/// Centralized: one row per sampled load scenario with the optimal dispatch
/// as label, agent-major [p_o_i, p_g_i...]. Multi-agent: one row per agent per
/// ADMM round, features from the round-k snapshot and labels the agent's
/// primal output for round k+1.
ImitationDataset generate_dataset(const grid::CommunitySpec& spec, Setup mode,
                                  std::size_t n_samples, const SolverSettings& settings,
                                  std::uint64_t seed);

/// Header of feature names then label names; 17 significant digits.
void write_dataset_csv(std::ostream& out, const ImitationDataset& data);

/// Rows [begin, end) restricted to one owning network.
ImitationDataset subset(const ImitationDataset& data, std::size_t begin, std::size_t end);

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    std::size_t epochs = 100;
    std::size_t batch = 32;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
    bool standardize = true;   // fit input/output normalisation from the data
};

struct TrainResult {
    std::vector<double> loss_history;  // entry 0: before training, then one per epoch
};

/// Mean squared error over samples and outputs, in the network's normalised
/// output space.
double mse_loss(const MlpSurrogate& net, const Eigen::MatrixXd& inputs,
                const Eigen::MatrixXd& targets);

/// Gradient of mse_loss with respect to parameters(), same ordering.
VectorXd mse_gradient(const MlpSurrogate& net, const Eigen::MatrixXd& inputs,
                      const Eigen::MatrixXd& targets);

/// Plain mini-batch gradient descent on mean squared error.
TrainResult train(MlpSurrogate& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                  const TrainOptions& options);

/// Trains each network on the rows it owns; one history per network.
std::vector<TrainResult> train(SurrogateSet& set, const ImitationDataset& data,
                               const TrainOptions& options);

// ---------------------------------------------------------------------------
// Inference

struct ViolationReport {
    double box_violation_total = 0.0;  // sum of |clip(p) - p| over generators, MW
    double box_violation_max = 0.0;
    double identity_error_max = 0.0;   // max_i |p_o_i - (sum p_g_i - sum loads_i)|
    double balance_residual = 0.0;     // |sum_i p_o_i|
    double local_balance_error = 0.0;  // decentralized: max_i |p_o_i + sum_j copy_ij|
    bool finite = true;
};

struct SurrogateDispatch {
    solvers::DispatchSolution proposal;  // raw network outputs, not projected
    solvers::Matrix copies;              // decentralized: (i,j) copy^{i,j}; empty otherwise
    ViolationReport violations;
};

/// `inputs` holds one feature vector per network. Loads are read back from
/// the feature vectors; box limits come from `spec`.
SurrogateDispatch infer_dispatch(const SurrogateSet& set, const grid::CommunitySpec& spec,
                                 const std::vector<VectorXd>& inputs);

}  // namespace dispatch::surrogate
