#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/core.h>
#include <json.hpp>

#include "dispatch/energy.hpp"

namespace dispatch::energy {

double EnergyModel::efficiency(std::size_t width) const {
    double factor = 1.0;
    for (const auto& b : width_efficiency)
        if (width >= b.min_width) factor = b.factor;
    return factor;
}

void EnergyModel::validate() const {
    if (!(joules_per_flop >= 0.0) || !(per_call_overhead_j >= 0.0))
        throw Error("energy_accounting", "energy model coefficients must be non-negative");
    if (!(grid_intensity > 0.0)) throw Error("energy_accounting", "grid intensity must be positive");
    for (std::size_t k = 0; k < width_efficiency.size(); ++k) {
        const auto& b = width_efficiency[k];
        if (!(b.factor >= 1.0))
            throw Error("energy_accounting", fmt::format("width factor {} is below 1", b.factor));
        if (k > 0 && (b.min_width <= width_efficiency[k - 1].min_width ||
                      b.factor > width_efficiency[k - 1].factor))
            throw Error("energy_accounting",
                        "width buckets must be ascending with non-increasing factors");
    }
}

EnergyReport& EnergyReport::operator+=(const EnergyReport& other) {
    flops += other.flops;
    calls += other.calls;
    energy_kwh += other.energy_kwh;
    carbon_g += other.carbon_g;
    if (other.backend == Backend::Wallclock) backend = Backend::Wallclock;
    return *this;
}

double estimate_energy(std::uint64_t flops_per_call, std::uint64_t calls, const EnergyModel& model,
                       std::size_t width) {
    const double per_call = static_cast<double>(flops_per_call) * model.joules_per_flop *
                                model.efficiency(width) +
                            model.per_call_overhead_j;
    return static_cast<double>(calls) * per_call / kJoulesPerKwh;
}

double estimate_carbon(double energy_kwh, double grid_intensity) {
    if (energy_kwh < 0.0 || grid_intensity < 0.0)
        throw Error("energy_accounting", "energy and intensity must be non-negative");
    return energy_kwh * grid_intensity;
}

EnergyReport analytic_report(std::uint64_t flops_per_call, std::uint64_t calls,
                             const EnergyModel& model, std::size_t width) {
    EnergyReport r;
    r.flops = flops_per_call * calls;
    r.calls = calls;
    r.energy_kwh = estimate_energy(flops_per_call, calls, model, width);
    r.carbon_g = estimate_carbon(r.energy_kwh, model.grid_intensity);
    r.backend = Backend::Analytic;
    return r;
}

namespace {

struct Fit {
    Eigen::VectorXd theta;  // in original column units
    double rss = 0.0;
};

// Minimise ||A theta - y||^2 subject to theta >= 0 by enumerating which
// coefficients are free; exact for the handful of columns used here.
// `requires` lists, per column, a column that must be free whenever it is.
std::optional<Fit> nnls_small(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                              const std::vector<int>& requires_col) {
    const auto cols = a.cols();
    Eigen::VectorXd norm = a.colwise().norm().transpose();
    std::optional<Fit> best;
    for (unsigned mask = 1; mask < (1u << cols); ++mask) {
        bool ok = true;
        for (Eigen::Index c = 0; c < cols; ++c)
            if ((mask >> c & 1u) && requires_col[static_cast<std::size_t>(c)] >= 0 &&
                !(mask >> requires_col[static_cast<std::size_t>(c)] & 1u))
                ok = false;
        if (!ok) continue;

        std::vector<Eigen::Index> free;
        for (Eigen::Index c = 0; c < cols; ++c)
            if ((mask >> c & 1u) && norm[c] > 0.0) free.push_back(c);
        if (free.empty()) continue;

        Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(free.size()));
        for (std::size_t k = 0; k < free.size(); ++k)
            sub.col(static_cast<Eigen::Index>(k)) = a.col(free[k]) / norm[free[k]];
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub);
        if (qr.rank() < sub.cols()) continue;
        const Eigen::VectorXd scaled = qr.solve(y);

        Fit fit;
        fit.theta = Eigen::VectorXd::Zero(cols);
        bool feasible = true;
        for (std::size_t k = 0; k < free.size(); ++k) {
            const double v = scaled[static_cast<Eigen::Index>(k)] / norm[free[k]];
            if (v < 0.0) feasible = false;
            fit.theta[free[k]] = v;
        }
        if (!feasible) continue;
        fit.rss = (a * fit.theta - y).squaredNorm();
        if (!best || fit.rss < best->rss * (1.0 - 1e-9)) best = fit;
    }
    return best;
}

Calibration finish(std::span<const Observation> obs, EnergyModel model, std::optional<std::size_t> threshold) {
    Calibration c;
    c.model = std::move(model);
    c.bucket_threshold = threshold;
    for (const auto& o : obs) {
        const double fitted = estimate_energy(o.flops_per_call, o.calls_per_iteration, c.model, o.width);
        const double r = fitted - o.measured_kwh;
        c.residual_kwh.push_back(r);
        c.relative_residual.push_back(o.measured_kwh != 0.0 ? r / o.measured_kwh : r);
        c.rss += r * r;
    }
    return c;
}

}  // namespace

Calibration calibrate(std::span<const Observation> obs, double grid_intensity) {
    if (obs.size() < 2)
        throw Underdetermined(fmt::format("calibration needs at least 2 observations, got {}", obs.size()));

    const auto rows = static_cast<Eigen::Index>(obs.size());
    Eigen::VectorXd y(rows);
    Eigen::VectorXd flop_col(rows), call_col(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& o = obs[static_cast<std::size_t>(r)];
        y[r] = o.measured_kwh;
        call_col[r] = static_cast<double>(o.calls_per_iteration) / kJoulesPerKwh;
        flop_col[r] = static_cast<double>(o.flops_per_call) * call_col[r];
    }

    Eigen::MatrixXd base(rows, 2);
    base << flop_col, call_col;
    if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(base).rank() < 2)
        throw Underdetermined("observations do not separate per-FLOP energy from per-call overhead");

    EnergyModel model;
    model.grid_intensity = grid_intensity;
    std::optional<std::size_t> threshold;
    double best_rss;
    {
        auto fit = nnls_small(base, y, {-1, -1});
        if (!fit) throw Underdetermined("no non-negative fit exists");
        model.joules_per_flop = fit->theta[0];
        model.per_call_overhead_j = fit->theta[1];
        best_rss = fit->rss;
    }

    if (obs.size() >= 3) {
        std::vector<std::size_t> widths;
        for (const auto& o : obs) widths.push_back(o.width);
        std::sort(widths.begin(), widths.end());
        widths.erase(std::unique(widths.begin(), widths.end()), widths.end());

        for (std::size_t t = 1; t < widths.size(); ++t) {
            const std::size_t split = widths[t];
            Eigen::MatrixXd a(rows, 3);
            for (Eigen::Index r = 0; r < rows; ++r) {
                const bool narrow = obs[static_cast<std::size_t>(r)].width < split;
                a(r, 0) = flop_col[r];
                a(r, 1) = call_col[r];
                a(r, 2) = narrow ? flop_col[r] : 0.0;
            }
            // Narrow-bucket surplus only makes sense with a positive base rate.
            auto fit = nnls_small(a, y, {-1, -1, 0});
            if (!fit || fit->theta[2] == 0.0) continue;
            if (fit->rss < best_rss * (1.0 - 1e-9)) {
                best_rss = fit->rss;
                model.joules_per_flop = fit->theta[0];
                model.per_call_overhead_j = fit->theta[1];
                model.width_efficiency = {{0, 1.0 + fit->theta[2] / fit->theta[0]}, {split, 1.0}};
                threshold = split;
            }
        }
    }
    return finish(obs, std::move(model), threshold);
}

std::vector<Observation> reference_observations() {
    return {
        {Setup::Centralized, 79'611'333, 1, 6000, 0.000313},
        {Setup::Distributed, 2'412'611, 33, 5133, 0.000919},
        {Setup::Decentralized, 2'412'433, 33, 3655, 0.001049},
    };
}

std::vector<Observation> read_observations_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("energy_accounting", "observation file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string expected = "setup,flops_per_call,calls_per_iteration,width,measured_kwh";
    if (line != expected)
        throw Error("energy_accounting", fmt::format("observation header must be '{}'", expected));
    std::vector<Observation> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string setup, flops, calls, width, kwh;
        if (!std::getline(ss, setup, ',') || !std::getline(ss, flops, ',') || !std::getline(ss, calls, ',') ||
            !std::getline(ss, width, ',') || !std::getline(ss, kwh))
            throw Error("energy_accounting", fmt::format("line {}: expected 5 fields", lineno));
        Observation o;
        auto s = parse_setup(setup);
        if (!s) throw Error("energy_accounting", fmt::format("line {}: unknown setup '{}'", lineno, setup));
        o.setup = *s;
        try {
            o.flops_per_call = std::stoull(flops);
            o.calls_per_iteration = std::stoull(calls);
            o.width = std::stoull(width);
            o.measured_kwh = std::stod(kwh);
        } catch (const std::exception&) {
            throw Error("energy_accounting", fmt::format("line {}: malformed number", lineno));
        }
        out.push_back(o);
    }
    return out;
}

std::vector<Observation> read_observations_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("energy_accounting", fmt::format("cannot open '{}'", path.string()));
    return read_observations_csv(in);
}

std::string model_to_json(const EnergyModel& model) {
    nlohmann::json j;
    j["joules_per_flop"] = model.joules_per_flop;
    j["per_call_overhead_j"] = model.per_call_overhead_j;
    j["width_efficiency"] = nlohmann::json::array();
    for (const auto& b : model.width_efficiency)
        j["width_efficiency"].push_back({{"min_width", b.min_width}, {"factor", b.factor}});
    j["grid_intensity"] = model.grid_intensity;
    return j.dump(2) + "\n";
}

EnergyModel model_from_json(const std::string& text) {
    EnergyModel m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.joules_per_flop = j.at("joules_per_flop").get<double>();
        m.per_call_overhead_j = j.at("per_call_overhead_j").get<double>();
        for (const auto& b : j.at("width_efficiency"))
            m.width_efficiency.push_back({b.at("min_width").get<std::size_t>(), b.at("factor").get<double>()});
        m.grid_intensity = j.at("grid_intensity").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("energy_accounting", fmt::format("invalid energy model: {}", e.what()));
    }
    m.validate();
    return m;
}

void write_model(const std::filesystem::path& path, const EnergyModel& model) {
    std::ofstream out(path);
    if (!out) throw Error("energy_accounting", fmt::format("cannot write '{}'", path.string()));
    out << model_to_json(model);
}

EnergyModel read_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("energy_accounting", fmt::format("cannot open '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

EnergyReport measure_wallclock(const std::function<void()>& workload, double device_power_watts,
                               double grid_intensity, std::uint64_t flops, std::uint64_t calls) {
    if (!(device_power_watts > 0.0)) throw Error("energy_accounting", "device power must be positive");
    const auto start = std::chrono::steady_clock::now();
    try {
        workload();
    } catch (const std::exception& e) {
        throw WorkloadFailed(fmt::format("workload failed: {}", e.what()));
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    EnergyReport r;
    r.flops = flops;
    r.calls = calls;
    r.energy_kwh = elapsed.count() * device_power_watts / kJoulesPerKwh;
    r.carbon_g = r.energy_kwh * grid_intensity;
    r.backend = Backend::Wallclock;
    return r;
}

}  // namespace dispatch::energy
