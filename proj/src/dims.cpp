#include <fmt/core.h>

#include "dispatch/surrogates.hpp"

namespace dispatch::surrogate {

SetupDims setup_dims(Setup setup, std::size_t n_agents, std::size_t n_loads, std::size_t n_gens) {
    if (n_agents == 0 || n_loads == 0 || n_gens == 0)
        throw Error("surrogates", "setup dimensions need at least one agent, load and generator");
    SetupDims d{setup, n_agents, n_loads, n_gens, 0, 0};
    switch (setup) {
        case Setup::Centralized:
            d.in_dim = n_loads * n_agents;
            d.out_dim = (n_gens + 1) * n_agents;
            break;
        case Setup::Distributed:
            d.in_dim = n_loads + n_agents;
            d.out_dim = n_gens + 1;
            break;
        case Setup::Decentralized:
            d.in_dim = n_loads + 3 * (n_agents - 1);
            d.out_dim = n_gens + n_agents;
            break;
    }
    return d;
}

std::uint64_t param_count(const SetupDims& dims, std::size_t hidden) {
    if (hidden == 0) throw Error("surrogates", "hidden width must be at least 1");
    return dims.networks() * network_params(dims.in_dim, hidden, dims.out_dim);
}

std::size_t equalize_hidden_nodes(const SetupDims& dims, std::uint64_t target_params) {
    const std::uint64_t minimum = param_count(dims, 1);
    if (target_params < minimum)
        throw TargetTooSmall(fmt::format("target {} parameters is below the {} needed at one hidden node",
                                         target_params, minimum));
    const std::uint64_t n = dims.networks();
    const std::uint64_t per_hidden = n * (dims.in_dim + dims.out_dim + 1);
    return static_cast<std::size_t>((target_params - n * dims.out_dim) / per_hidden);
}

std::uint64_t SurrogateSet::parameter_count() const {
    std::uint64_t total = 0;
    for (const auto& n : nets) total += n.parameter_count();
    return total;
}

std::uint64_t SurrogateSet::flops_per_round() const {
    std::uint64_t total = 0;
    for (const auto& n : nets) total += n.flops();
    return total;
}

}  // namespace dispatch::surrogate
