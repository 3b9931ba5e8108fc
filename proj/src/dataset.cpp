#include <ostream>

#include <fmt/core.h>
#include <fmt/ostream.h>

#include "dispatch/surrogates.hpp"

namespace dispatch::surrogate {

VectorXd centralized_features(const grid::LoadSample& loads) {
    std::vector<double> flat;
    for (const auto& row : loads.values) flat.insert(flat.end(), row.begin(), row.end());
    return Eigen::Map<const VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

VectorXd distributed_features(std::span<const double> loads_i, double lambda,
                              std::span<const double> p_o, std::size_t agent) {
    const std::size_t n = p_o.size();
    VectorXd x(static_cast<Eigen::Index>(loads_i.size() + n));
    Eigen::Index k = 0;
    for (double d : loads_i) x[k++] = d;
    x[k++] = lambda;
    for (std::size_t j = 0; j < n; ++j)
        if (j != agent) x[k++] = p_o[j];
    return x;
}

VectorXd decentralized_features(std::span<const double> loads_i, const solvers::Matrix& lambda_pair,
                                std::span<const double> p_o, const solvers::Matrix& copies,
                                std::size_t agent) {
    const std::size_t n = p_o.size();
    VectorXd x(static_cast<Eigen::Index>(loads_i.size() + 3 * (n - 1)));
    Eigen::Index k = 0;
    for (double d : loads_i) x[k++] = d;
    for (std::size_t j = 0; j < n; ++j)
        if (j != agent) x[k++] = lambda_pair[j][agent];
    for (std::size_t j = 0; j < n; ++j)
        if (j != agent) x[k++] = p_o[j];
    for (std::size_t j = 0; j < n; ++j)
        if (j != agent) x[k++] = copies[j][agent];
    return x;
}

std::vector<std::string> feature_names(const SetupDims& d) {
    std::vector<std::string> names;
    switch (d.setup) {
        case Setup::Centralized:
            for (std::size_t i = 0; i < d.n_agents; ++i)
                for (std::size_t l = 0; l < d.n_loads; ++l) names.push_back(fmt::format("pd_{}_{}", i, l));
            break;
        case Setup::Distributed:
            for (std::size_t l = 0; l < d.n_loads; ++l) names.push_back(fmt::format("pd_{}", l));
            names.push_back("lambda");
            for (std::size_t j = 0; j + 1 < d.n_agents; ++j) names.push_back(fmt::format("po_nb_{}", j));
            break;
        case Setup::Decentralized:
            for (std::size_t l = 0; l < d.n_loads; ++l) names.push_back(fmt::format("pd_{}", l));
            for (const char* block : {"lambda_in", "po_nb", "copy_in"})
                for (std::size_t j = 0; j + 1 < d.n_agents; ++j) names.push_back(fmt::format("{}_{}", block, j));
            break;
    }
    return names;
}

std::vector<std::string> label_names(const SetupDims& d) {
    std::vector<std::string> names;
    if (d.setup == Setup::Centralized) {
        for (std::size_t i = 0; i < d.n_agents; ++i) {
            names.push_back(fmt::format("po_{}", i));
            for (std::size_t g = 0; g < d.n_gens; ++g) names.push_back(fmt::format("pg_{}_{}", i, g));
        }
        return names;
    }
    names.push_back("po");
    for (std::size_t g = 0; g < d.n_gens; ++g) names.push_back(fmt::format("pg_{}", g));
    if (d.setup == Setup::Decentralized)
        for (std::size_t j = 0; j + 1 < d.n_agents; ++j) names.push_back(fmt::format("copy_out_{}", j));
    return names;
}

namespace {

class RowSink {
public:
    RowSink(ImitationDataset& data, std::size_t capacity) : data_(data), capacity_(capacity) {
        data_.inputs.resize(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(data.dims.in_dim));
        data_.targets.resize(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(data.dims.out_dim));
    }

    bool full() const { return filled_ == capacity_; }

    void push(const VectorXd& x, const VectorXd& y, std::size_t agent) {
        if (full()) return;
        const auto r = static_cast<Eigen::Index>(filled_++);
        data_.inputs.row(r) = x.transpose();
        data_.targets.row(r) = y.transpose();
        data_.agent.push_back(agent);
    }

private:
    ImitationDataset& data_;
    std::size_t capacity_;
    std::size_t filled_ = 0;
};

VectorXd local_label(std::span<const double> p_g, double p_o) {
    VectorXd y(static_cast<Eigen::Index>(p_g.size() + 1));
    y[0] = p_o;
    for (std::size_t g = 0; g < p_g.size(); ++g) y[static_cast<Eigen::Index>(g + 1)] = p_g[g];
    return y;
}

}  // namespace

ImitationDataset generate_dataset(const grid::CommunitySpec& spec, Setup mode,
                                  std::size_t n_samples, const SolverSettings& settings,
                                  std::uint64_t seed) {
    grid::validate(spec);
    ImitationDataset data;
    data.dims = setup_dims(mode, spec.n_agents(), spec.n_loads(), spec.n_gens());
    data.seed = seed;
    data.settings = settings;
    RowSink sink(data, n_samples);

    const std::size_t n = spec.n_agents();
    for (std::uint64_t scenario = 0; !sink.full(); ++scenario) {
        const auto loads = grid::sample_loads(spec, settings.fluctuation, grid::derive_seed(seed, scenario));
        try {
            switch (mode) {
                case Setup::Centralized: {
                    const auto sol = solvers::solve_centralized(spec, loads, settings.tol);
                    VectorXd y(static_cast<Eigen::Index>(data.dims.out_dim));
                    Eigen::Index k = 0;
                    for (std::size_t i = 0; i < n; ++i) {
                        y[k++] = sol.p_o[i];
                        for (double p : sol.p_g[i]) y[k++] = p;
                    }
                    sink.push(centralized_features(loads), y, 0);
                    break;
                }
                case Setup::Distributed: {
                    solvers::AdmmOptions opt;
                    opt.rho = settings.rho;
                    opt.tol = settings.tol;
                    opt.max_iter = settings.max_iter;
                    opt.observer = [&](const solvers::AdmmState& before, const solvers::AdmmState& after) {
                        for (std::size_t i = 0; i < n; ++i)
                            sink.push(distributed_features(loads.values[i], before.lambda, before.p_o_snapshot, i),
                                      local_label(after.p_g[i], after.p_o_snapshot[i]), i);
                    };
                    solvers::run_distributed(spec, loads, opt);
                    break;
                }
                case Setup::Decentralized: {
                    solvers::ConsensusOptions opt;
                    opt.rho = settings.rho;
                    opt.tol = settings.tol;
                    opt.max_iter = settings.max_iter;
                    opt.observer = [&](const solvers::DecentralizedState& before,
                                       const solvers::DecentralizedState& after) {
                        for (std::size_t i = 0; i < n; ++i) {
                            VectorXd y(static_cast<Eigen::Index>(data.dims.out_dim));
                            y.head(static_cast<Eigen::Index>(spec.n_gens() + 1)) =
                                local_label(after.p_g[i], after.p_o_snapshot[i]);
                            Eigen::Index k = static_cast<Eigen::Index>(spec.n_gens() + 1);
                            for (std::size_t j = 0; j < n; ++j)
                                if (j != i) y[k++] = after.p_o_copy[i][j];
                            sink.push(decentralized_features(loads.values[i], before.lambda_pair,
                                                             before.p_o_snapshot, before.p_o_copy, i),
                                      y, i);
                        }
                    };
                    solvers::run_decentralized(spec, loads, opt);
                    break;
                }
            }
        } catch (const solvers::NonConvergedError& e) {
            throw SolverFailed(fmt::format("scenario {}: {}", scenario, e.what()));
        } catch (const grid::ValidationError& e) {
            throw SolverFailed(fmt::format("scenario {}: {}", scenario, e.what()));
        }
    }
    return data;
}

void write_dataset_csv(std::ostream& out, const ImitationDataset& data) {
    const auto features = feature_names(data.dims);
    const auto labels = label_names(data.dims);
    std::string header = "agent";
    for (const auto& n : features) header += "," + n;
    for (const auto& n : labels) header += "," + n;
    out << header << '\n';
    for (Eigen::Index r = 0; r < data.inputs.rows(); ++r) {
        fmt::print(out, "{}", data.agent[static_cast<std::size_t>(r)]);
        for (Eigen::Index c = 0; c < data.inputs.cols(); ++c) fmt::print(out, ",{:.17g}", data.inputs(r, c));
        for (Eigen::Index c = 0; c < data.targets.cols(); ++c) fmt::print(out, ",{:.17g}", data.targets(r, c));
        out << '\n';
    }
}

ImitationDataset subset(const ImitationDataset& data, std::size_t begin, std::size_t end) {
    ImitationDataset out;
    out.dims = data.dims;
    out.seed = data.seed;
    out.settings = data.settings;
    const auto b = static_cast<Eigen::Index>(begin), n = static_cast<Eigen::Index>(end - begin);
    out.inputs = data.inputs.middleRows(b, n);
    out.targets = data.targets.middleRows(b, n);
    out.agent.assign(data.agent.begin() + b, data.agent.begin() + b + n);
    return out;
}

}  // namespace dispatch::surrogate
