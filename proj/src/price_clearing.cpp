#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/core.h>

#include "dispatch/solvers.hpp"

namespace dispatch::solvers {

namespace {

using grid::GeneratorSpec;

// Output of one unit at a price strictly away from its bang-bang tie point.
double unit_response(const GeneratorSpec& g, double price) {
    if (g.a > 0.0) return std::clamp((price - g.b) / (2.0 * g.a), 0.0, g.p_max);
    return price > g.b ? g.p_max : 0.0;
}

// Sum of responses at `price`. Linear units at exactly b contribute 0 for the
// lower branch and p_max for the upper branch.
double total_response(std::span<const GeneratorSpec> units, double price, bool upper) {
    double total = 0.0;
    for (const auto& g : units) {
        if (g.a == 0.0 && price == g.b)
            total += upper ? g.p_max : 0.0;
        else
            total += unit_response(g, price);
    }
    return total;
}

}  // namespace

PriceClearing clear_price(std::span<const GeneratorSpec> units, double weight, double target) {
    if (units.empty()) throw Error("dispatch_solvers", "price clearing needs at least one unit");

    std::vector<double> breaks;
    breaks.reserve(2 * units.size());
    double capacity = 0.0;
    for (const auto& g : units) {
        breaks.push_back(g.b);
        if (g.a > 0.0) breaks.push_back(g.b + 2.0 * g.a * g.p_max);
        capacity += g.p_max;
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    if (weight == 0.0 && (target < 0.0 || target > capacity))
        throw grid::ValidationError(
            grid::ValidationIssue::Infeasible,
            fmt::format("demand {} MW outside generation range [0, {}] MW", target, capacity));

    auto g_lo = [&](double p) { return total_response(units, p, false) + weight * p; };
    auto g_hi = [&](double p) { return total_response(units, p, true) + weight * p; };

    PriceClearing result;
    std::size_t k = 0;
    while (k < breaks.size() && g_hi(breaks[k]) < target) ++k;

    if (k == breaks.size()) {
        // Every unit saturated; only the elastic term moves.
        result.price = breaks.back() + (target - g_hi(breaks.back())) / weight;
    } else if (g_lo(breaks[k]) <= target) {
        result.price = breaks[k];
    } else if (k == 0) {
        // Below every breakpoint all units sit at zero.
        if (weight == 0.0) {
            result.price = breaks.front();
        } else {
            result.price = target / weight;
        }
    } else {
        // Response is affine on (breaks[k-1], breaks[k]); interpolate its end values.
        const double p0 = breaks[k - 1];
        const double p1 = breaks[k];
        const double v0 = g_hi(p0);
        const double v1 = g_lo(p1);
        result.price = p0 + (target - v0) * (p1 - p0) / (v1 - v0);
        result.price = std::clamp(result.price, p0, p1);
    }

    result.output.resize(units.size());
    double committed = result.price * weight;
    std::vector<std::size_t> tied;
    for (std::size_t u = 0; u < units.size(); ++u) {
        const auto& g = units[u];
        if (g.a == 0.0 && result.price == g.b) {
            tied.push_back(u);
            continue;
        }
        result.output[u] = unit_response(g, result.price);
        committed += result.output[u];
    }
    double remainder = std::max(0.0, target - committed);
    for (std::size_t u : tied) {
        const double take = std::min(remainder, units[u].p_max);
        result.output[u] = take;
        remainder -= take;
    }

    if (weight == 0.0) {
        // Absorb the interpolation rounding in the last unit strictly inside its box.
        double total = 0.0;
        for (double p : result.output) total += p;
        for (std::size_t u = units.size(); u-- > 0;) {
            const double p = result.output[u];
            if (p > 0.0 && p < units[u].p_max) {
                result.output[u] = std::clamp(p + (target - total), 0.0, units[u].p_max);
                break;
            }
        }
    }
    return result;
}

}  // namespace dispatch::solvers
