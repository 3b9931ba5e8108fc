#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dispatch/error.hpp"
#include "dispatch/setup.hpp"

namespace dispatch::energy {

inline constexpr double kJoulesPerKwh = 3.6e6;

/// Emission/energy ratio of the reference deployment measurements, g/kWh.
inline constexpr double kReferenceGridIntensity = 0.476;

/// Networks at least `min_width` hidden units wide scale their FLOP energy by `factor`.
struct WidthBucket {
    std::size_t min_width = 0;
    double factor = 1.0;
    bool operator==(const WidthBucket&) const = default;
};

struct EnergyModel {
    double joules_per_flop = 0.0;
    double per_call_overhead_j = 0.0;
    std::vector<WidthBucket> width_efficiency;  // ascending min_width; empty: factor 1
    double grid_intensity = kReferenceGridIntensity;  // gCO2eq per kWh

    double efficiency(std::size_t width) const;
    /// Throws when a field is negative, intensity is not positive, a factor is
    /// below 1, or factors increase with width.
    void validate() const;

    bool operator==(const EnergyModel&) const = default;
};

enum class Backend { Analytic, Wallclock };

struct EnergyReport {
    std::uint64_t flops = 0;
    std::uint64_t calls = 0;
    double energy_kwh = 0.0;
    double carbon_g = 0.0;
    Backend backend = Backend::Analytic;

    /// Associative merge; mixing backends yields a wallclock-tagged report.
    EnergyReport& operator+=(const EnergyReport& other);
};

/// calls * (flops_per_call * joules_per_flop * efficiency(width) + overhead) / 3.6e6
double estimate_energy(std::uint64_t flops_per_call, std::uint64_t calls, const EnergyModel& model,
                       std::size_t width);

double estimate_carbon(double energy_kwh, double grid_intensity);

EnergyReport analytic_report(std::uint64_t flops_per_call, std::uint64_t calls,
                             const EnergyModel& model, std::size_t width);

// ---------------------------------------------------------------------------
// Calibration

struct Observation {
    Setup setup = Setup::Centralized;
    std::uint64_t flops_per_call = 0;
    std::uint64_t calls_per_iteration = 0;
    std::size_t width = 0;
    double measured_kwh = 0.0;
};

class Underdetermined : public Error {
public:
    explicit Underdetermined(const std::string& what) : Error("energy_accounting", what) {}
};

struct Calibration {
    EnergyModel model;
    std::vector<double> residual_kwh;      // fitted - measured, per observation
    std::vector<double> relative_residual;
    double rss = 0.0;
    std::optional<std::size_t> bucket_threshold;  // set when a width split was fitted
};

/// Non-negative least squares in kWh over joules_per_flop and overhead and,
/// with three or more observations, a two-bucket width efficiency whose
/// narrow-bucket factor is >= 1. Every width split between observed widths
/// is tried; the plain two-parameter model wins ties.
Calibration calibrate(std::span<const Observation> observations,
                      double grid_intensity = kReferenceGridIntensity);

/// Published per-iteration inference energy of the three setups at 33 agents,
/// 100 loads and 100 generators per agent.
std::vector<Observation> reference_observations();

std::vector<Observation> read_observations_csv(std::istream& in);
std::vector<Observation> read_observations_csv(const std::filesystem::path& path);

std::string model_to_json(const EnergyModel& model);
EnergyModel model_from_json(const std::string& text);
void write_model(const std::filesystem::path& path, const EnergyModel& model);
EnergyModel read_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Wall-clock backend

class WorkloadFailed : public Error {
public:
    explicit WorkloadFailed(const std::string& what) : Error("energy_accounting", what) {}
};

/// Elapsed seconds * device watts. Non-deterministic; tagged Wallclock.
EnergyReport measure_wallclock(const std::function<void()>& workload, double device_power_watts,
                               double grid_intensity = kReferenceGridIntensity,
                               std::uint64_t flops = 0, std::uint64_t calls = 0);

}  // namespace dispatch::energy
