#pragma once

#include <cstddef>
#include <vector>

namespace dispatch::solvers {

// Validates a visiting order (empty means ascending) and returns it.
std::vector<std::size_t> resolve_order(const std::vector<std::size_t>& order, std::size_t n);

}  // namespace dispatch::solvers
