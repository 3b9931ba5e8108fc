#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <thread>

#include "dispatch/energy.hpp"

using namespace dispatch;
using namespace dispatch::energy;

namespace {

EnergyModel plain(double e, double o) {
    EnergyModel m;
    m.joules_per_flop = e;
    m.per_call_overhead_j = o;
    return m;
}

}  // namespace

TEST_CASE("unit conversion") {
    CHECK(estimate_energy(1'000'000'000, 1, plain(1e-9, 0.0), 10) == doctest::Approx(1.0 / 3.6e6));
    CHECK(estimate_energy(1'000'000'000, 0, plain(1e-9, 5.0), 10) == 0.0);
    CHECK(estimate_carbon(1.0, 476.0) == 476.0);
    CHECK(estimate_carbon(0.0, 0.476) == 0.0);
    CHECK(estimate_carbon(0.000313, 0.476) == doctest::Approx(0.000149).epsilon(0.005));
    CHECK_THROWS_AS(estimate_carbon(-1.0, 0.476), Error);
}

TEST_CASE("energy is additive in calls and increasing in FLOPs") {
    const auto m = plain(2e-9, 3.0);
    for (std::uint64_t a : {0ULL, 1ULL, 7ULL, 33ULL})
        for (std::uint64_t b : {0ULL, 2ULL, 11ULL})
            CHECK(estimate_energy(1000, a + b, m, 1) ==
                  doctest::Approx(estimate_energy(1000, a, m, 1) + estimate_energy(1000, b, m, 1)).epsilon(1e-14));
    for (std::uint64_t f = 1; f < 1'000'000; f *= 10) CHECK(estimate_energy(f + 1, 1, m, 1) > estimate_energy(f, 1, m, 1));
}

TEST_CASE("splitting equal FLOPs over 33 calls costs 32 extra overheads") {
    const auto m = plain(1.3e-5, 68.0);
    const std::uint64_t total = 33ULL * 2'000'000;
    const double one = estimate_energy(total, 1, m, 100);
    const double many = estimate_energy(total / 33, 33, m, 100);
    CHECK(many - one == doctest::Approx(32.0 * 68.0 / 3.6e6).epsilon(1e-9));
}

TEST_CASE("reports keep carbon proportional to energy") {
    auto m = plain(1e-8, 1.0);
    m.grid_intensity = 0.476;
    const auto r = analytic_report(5000, 12, m, 50);
    CHECK(r.carbon_g == r.energy_kwh * 0.476);
    CHECK(r.flops == 60000);
    CHECK(r.backend == Backend::Analytic);

    EnergyReport sum;
    sum += r;
    sum += r;
    CHECK(sum.calls == 24);
    CHECK(sum.energy_kwh == 2 * r.energy_kwh);
    EnergyReport wall;
    wall.backend = Backend::Wallclock;
    sum += wall;
    CHECK(sum.backend == Backend::Wallclock);
}

TEST_CASE("width buckets and validation") {
    EnergyModel m = plain(1e-9, 0.0);
    m.width_efficiency = {{0, 1.5}, {1000, 1.0}};
    CHECK(m.efficiency(10) == 1.5);
    CHECK(m.efficiency(999) == 1.5);
    CHECK(m.efficiency(1000) == 1.0);
    CHECK_NOTHROW(m.validate());
    m.width_efficiency = {{0, 1.0}, {1000, 1.5}};
    CHECK_THROWS_AS(m.validate(), Error);
    m.width_efficiency = {{0, 0.5}};
    CHECK_THROWS_AS(m.validate(), Error);
    m = plain(-1.0, 0.0);
    CHECK_THROWS_AS(m.validate(), Error);
    m = plain(1.0, 0.0);
    m.grid_intensity = 0.0;
    CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("two planted observations are recovered exactly") {
    const auto truth = plain(3.5e-9, 12.0);
    std::vector<Observation> obs{
        {Setup::Centralized, 50'000'000, 1, 4000, estimate_energy(50'000'000, 1, truth, 4000)},
        {Setup::Distributed, 1'500'000, 20, 3000, estimate_energy(1'500'000, 20, truth, 3000)}};
    const auto cal = calibrate(obs);
    CHECK(cal.model.joules_per_flop == doctest::Approx(3.5e-9).epsilon(1e-10));
    CHECK(cal.model.per_call_overhead_j == doctest::Approx(12.0).epsilon(1e-10));
    CHECK(cal.model.width_efficiency.empty());
    CHECK_FALSE(cal.bucket_threshold.has_value());
    for (double r : cal.relative_residual) CHECK(std::abs(r) < 1e-10);
}

TEST_CASE("planted width bucket is recovered from four observations") {
    EnergyModel truth = plain(2e-9, 5.0);
    truth.width_efficiency = {{0, 1.8}, {2000, 1.0}};
    std::vector<Observation> obs;
    const std::tuple<std::uint64_t, std::uint64_t, std::size_t> cases[] = {
        {40'000'000, 1, 5000}, {9'000'000, 3, 2500}, {2'000'000, 20, 800}, {6'000'000, 7, 1200}};
    for (auto [f, c, w] : cases) obs.push_back({Setup::Distributed, f, c, w, estimate_energy(f, c, truth, w)});
    const auto cal = calibrate(obs);
    REQUIRE(cal.bucket_threshold.has_value());
    CHECK(cal.model.efficiency(800) == doctest::Approx(1.8).epsilon(1e-8));
    CHECK(cal.model.efficiency(5000) == 1.0);
    CHECK(cal.model.joules_per_flop == doctest::Approx(2e-9).epsilon(1e-8));
    CHECK(cal.model.per_call_overhead_j == doctest::Approx(5.0).epsilon(1e-8));
    CHECK_NOTHROW(cal.model.validate());
}

TEST_CASE("calibration needs separable observations") {
    std::vector<Observation> one{{Setup::Centralized, 100, 1, 10, 1e-6}};
    CHECK_THROWS_AS(calibrate(one), Underdetermined);
    std::vector<Observation> collinear{{Setup::Centralized, 100, 1, 10, 1e-6}, {Setup::Centralized, 100, 2, 10, 2e-6}};
    CHECK_THROWS_AS(calibrate(collinear), Underdetermined);
}

TEST_CASE("fitted coefficients are never negative") {
    // Measurements that would need a negative overhead under least squares.
    std::vector<Observation> obs{{Setup::Centralized, 1'000'000, 1, 10, 1e-6},
                                 {Setup::Distributed, 10'000, 10, 10, 1e-9}};
    const auto cal = calibrate(obs);
    CHECK(cal.model.joules_per_flop >= 0.0);
    CHECK(cal.model.per_call_overhead_j >= 0.0);
    CHECK(cal.rss > 0.0);
}

TEST_CASE("observation CSV and model JSON round trips") {
    std::istringstream in(
        "setup,flops_per_call,calls_per_iteration,width,measured_kwh\n"
        "centralized,79611333,1,6000,0.000313\n"
        "decentralized,2412433,33,3655,0.001049\n");
    const auto obs = read_observations_csv(in);
    REQUIRE(obs.size() == 2);
    CHECK(obs[1].setup == Setup::Decentralized);
    CHECK(obs[1].calls_per_iteration == 33);
    CHECK(obs[1].measured_kwh == 0.001049);

    std::istringstream bad("setup,flops\n");
    CHECK_THROWS_AS(read_observations_csv(bad), Error);
    std::istringstream bad_row("setup,flops_per_call,calls_per_iteration,width,measured_kwh\nmystery,1,1,1,1\n");
    CHECK_THROWS_AS(read_observations_csv(bad_row), Error);

    EnergyModel m = plain(1.2345678901234567e-5, 68.17299291749228);
    m.width_efficiency = {{0, 1.4421616342286305}, {5133, 1.0}};
    CHECK(model_from_json(model_to_json(m)) == m);
    CHECK_THROWS_AS(model_from_json("{\"joules_per_flop\": 1}"), Error);
}

TEST_CASE("wall-clock backend") {
    const auto quick = measure_wallclock([] {}, 100.0);
    CHECK(quick.backend == Backend::Wallclock);
    CHECK(quick.energy_kwh < 1e-6);

    const auto slept = measure_wallclock([] { std::this_thread::sleep_for(std::chrono::milliseconds(200)); }, 100.0);
    CHECK(slept.energy_kwh == doctest::Approx(0.2 * 100.0 / 3.6e6).epsilon(0.25));
    CHECK(slept.carbon_g == doctest::Approx(slept.energy_kwh * kReferenceGridIntensity));

    CHECK_THROWS_AS(measure_wallclock([] { throw std::runtime_error("boom"); }, 100.0), WorkloadFailed);
    CHECK_THROWS_AS(measure_wallclock([] {}, 0.0), Error);
}

TEST_CASE("reference measurements calibrate to within five percent") {
    const auto obs = reference_observations();
    const auto cal = calibrate(obs);
    REQUIRE(obs.size() == 3);
    std::vector<double> fitted;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        CHECK(std::abs(cal.relative_residual[i]) < 0.05);
        fitted.push_back(estimate_energy(obs[i].flops_per_call, obs[i].calls_per_iteration, cal.model, obs[i].width));
    }
    CHECK(fitted[0] < fitted[1]);
    CHECK(fitted[1] < fitted[2]);

    const double published_carbon[] = {0.000149, 0.000438, 0.000499};
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(estimate_carbon(fitted[i], cal.model.grid_intensity) ==
              doctest::Approx(published_carbon[i]).epsilon(0.01));
}

TEST_CASE("bundled model matches a fresh calibration of the bundled observations") {
    const std::filesystem::path dir(DISPATCH_DATA_DIR);
    const auto obs = read_observations_csv(dir / "table2_observations.csv");
    const auto fresh = calibrate(obs).model;
    const auto bundled = read_model(dir / "table2_calibrated.json");
    CHECK(bundled.joules_per_flop == doctest::Approx(fresh.joules_per_flop).epsilon(1e-12));
    CHECK(bundled.per_call_overhead_j == doctest::Approx(fresh.per_call_overhead_j).epsilon(1e-12));
    REQUIRE(bundled.width_efficiency.size() == fresh.width_efficiency.size());
    for (std::size_t i = 0; i < fresh.width_efficiency.size(); ++i) {
        CHECK(bundled.width_efficiency[i].min_width == fresh.width_efficiency[i].min_width);
        CHECK(bundled.width_efficiency[i].factor == doctest::Approx(fresh.width_efficiency[i].factor).epsilon(1e-12));
    }
}
