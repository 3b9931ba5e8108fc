#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "dispatch/surrogates.hpp"

namespace dispatch::surrogate {

SurrogateDispatch infer_dispatch(const SurrogateSet& set, const grid::CommunitySpec& spec,
                                 const std::vector<VectorXd>& inputs) {
    const auto& dims = set.dims;
    if (dims.n_agents != spec.n_agents() || dims.n_gens != spec.n_gens() || dims.n_loads != spec.n_loads())
        throw DimensionMismatch("surrogate dimensions do not match the community");
    if (inputs.size() != set.nets.size())
        throw DimensionMismatch(fmt::format("expected {} input vectors, got {}", set.nets.size(), inputs.size()));

    const std::size_t n = dims.n_agents, n_g = dims.n_gens, n_d = dims.n_loads;
    SurrogateDispatch result;
    auto& sol = result.proposal;
    sol.p_g.assign(n, std::vector<double>(n_g));
    sol.p_o.assign(n, 0.0);
    std::vector<std::vector<double>> loads(n, std::vector<double>(n_d));

    auto out_of = [&](std::size_t k) {
        const auto& x = inputs[k];
        return forward(set.nets[k], std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
    };

    if (dims.setup == Setup::Centralized) {
        const VectorXd y = out_of(0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = i * (n_g + 1);
            sol.p_o[i] = y[static_cast<Eigen::Index>(base)];
            for (std::size_t g = 0; g < n_g; ++g) sol.p_g[i][g] = y[static_cast<Eigen::Index>(base + 1 + g)];
            for (std::size_t d = 0; d < n_d; ++d) loads[i][d] = inputs[0][static_cast<Eigen::Index>(i * n_d + d)];
        }
    } else {
        if (dims.setup == Setup::Decentralized) result.copies.assign(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            const VectorXd y = out_of(i);
            sol.p_o[i] = y[0];
            for (std::size_t g = 0; g < n_g; ++g) sol.p_g[i][g] = y[static_cast<Eigen::Index>(1 + g)];
            for (std::size_t d = 0; d < n_d; ++d) loads[i][d] = inputs[i][static_cast<Eigen::Index>(d)];
            if (dims.setup == Setup::Decentralized) {
                Eigen::Index k = static_cast<Eigen::Index>(n_g + 1);
                for (std::size_t j = 0; j < n; ++j)
                    if (j != i) result.copies[i][j] = y[k++];
            }
        }
    }

    auto& v = result.violations;
    double balance = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& gens = spec.agents[i].generators;
        for (std::size_t g = 0; g < n_g; ++g) {
            const double p = sol.p_g[i][g];
            const double excess = std::abs(std::clamp(p, 0.0, gens[g].p_max) - p);
            v.box_violation_total += excess;
            v.box_violation_max = std::max(v.box_violation_max, excess);
        }
        v.identity_error_max =
            std::max(v.identity_error_max, std::abs(sol.p_o[i] - solvers::net_export(sol.p_g[i], loads[i])));
        balance += sol.p_o[i];
        if (!result.copies.empty()) {
            double local = sol.p_o[i];
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) local += result.copies[i][j];
            v.local_balance_error = std::max(v.local_balance_error, std::abs(local));
        }
    }
    v.balance_residual = std::abs(balance);
    sol.balance_residual = v.balance_residual;
    sol.objective = solvers::dispatch_cost(spec, sol.p_g);
    v.finite = std::isfinite(v.box_violation_total) && std::isfinite(v.identity_error_max) &&
               std::isfinite(v.balance_residual) && std::isfinite(v.local_balance_error) &&
               std::isfinite(sol.objective);
    return result;
}

}  // namespace dispatch::surrogate
