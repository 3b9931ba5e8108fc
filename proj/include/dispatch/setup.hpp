#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace dispatch {

/// Coordination topology of a dispatch model.
enum class Setup { Centralized, Distributed, Decentralized };

inline constexpr std::array<Setup, 3> kAllSetups = {Setup::Centralized, Setup::Distributed,
                                                    Setup::Decentralized};

constexpr std::string_view to_string(Setup s) {
    switch (s) {
        case Setup::Centralized: return "centralized";
        case Setup::Distributed: return "distributed";
        case Setup::Decentralized: return "decentralized";
    }
    return "?";
}

constexpr std::optional<Setup> parse_setup(std::string_view name) {
    for (Setup s : kAllSetups)
        if (to_string(s) == name) return s;
    return std::nullopt;
}

}  // namespace dispatch
