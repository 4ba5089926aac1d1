#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "thermopalm/calibration.hpp"
#include "thermopalm/errors.hpp"

using namespace thermopalm;

namespace {

double rise_of(const StepTrace& t) { return step_response_metrics(t.mean_cold, t.sample_period).rise_time; }

}  // namespace

TEST(Calibration, DefaultModelMeetsRiseTargets) {
    const PlantEnvironment env;
    const auto models = uniform_channel_models(ChannelThermalModel{});
    const auto warm = simulate_closed_loop_step(models, env, PidGains{}, 10.0, {.duration_s = 15.0});
    const auto cool = simulate_closed_loop_step(models, env, PidGains{}, -10.0, {.duration_s = 15.0});
    EXPECT_NEAR(rise_of(warm), 1.4, 0.14);
    EXPECT_NEAR(rise_of(cool), 2.4, 0.24);
    EXPECT_LT(rise_of(warm), rise_of(cool));
}

TEST(Calibration, FitReproducesTargetsOnResimulation) {
    const PlantEnvironment env;
    const auto report = calibrate_plant_report(1.4, 2.4, PidGains{}, env);
    const auto models = uniform_channel_models(report.model);
    const auto warm = simulate_closed_loop_step(models, env, PidGains{}, 10.0, {.duration_s = 15.0});
    const auto cool = simulate_closed_loop_step(models, env, PidGains{}, -10.0, {.duration_s = 15.0});
    EXPECT_GE(rise_of(warm), 1.26);
    EXPECT_LE(rise_of(warm), 1.54);
    EXPECT_GE(rise_of(cool), 2.16);
    EXPECT_LE(rise_of(cool), 2.64);
    EXPECT_NEAR(report.warm_rise_s, rise_of(warm), 1e-12);
}

TEST(Calibration, InfeasibleTargetFails) {
    CalibrationOptions opts;
    opts.restarts = 1;
    EXPECT_THROW(calibrate_plant(0.01, 0.01, PidGains{}, PlantEnvironment{}, opts), CalibrationFailed);
}

TEST(Calibration, RejectsBadTargets) {
    EXPECT_THROW(calibrate_plant(-1.0, 2.0, PidGains{}, PlantEnvironment{}), InvalidArgument);
    EXPECT_THROW(calibrate_plant(2.0, 1.0, PidGains{}, PlantEnvironment{}), InvalidArgument);
}

TEST(Calibration, ClosedLoopSettlesWithoutSustainedOscillation) {
    const PlantEnvironment env;
    const auto models = uniform_channel_models(ChannelThermalModel{});
    for (double step : {10.0, -10.0}) {
        const auto t = simulate_closed_loop_step(models, env, PidGains{}, step, {.duration_s = 20.0});
        const auto tail = std::vector<double>(t.mean_cold.end() - 500, t.mean_cold.end());
        const auto [lo, hi] = std::minmax_element(tail.begin(), tail.end());
        EXPECT_LT(*hi - *lo, 0.2) << step;
        EXPECT_NEAR(tail.back(), 30.0 + step, 0.1);
    }
}

TEST(SteadyStateRange, CoversOperatingEnvelope) {
    const auto r = steady_state_range(ChannelThermalModel{}, PlantEnvironment{});
    EXPECT_LE(r.coldest_c, 15.0);
    EXPECT_GE(r.warmest_c, 45.0);
}

TEST(OpenLoop, ZeroCurrentStaysAtAmbient) {
    const auto t = simulate_open_loop_step(uniform_channel_models(ChannelThermalModel{}), PlantEnvironment{}, 0.0,
                                           {.duration_s = 1.0});
    for (double v : t.mean_cold) EXPECT_NEAR(v, 30.0, 1e-9);
}
