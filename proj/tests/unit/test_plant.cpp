#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "thermopalm/control.hpp"
#include "thermopalm/errors.hpp"
#include "thermopalm/plant.hpp"

using namespace thermopalm;

namespace {

ChannelModels nominal() { return uniform_channel_models(ChannelThermalModel{}); }

double max_abs_diff(const CellArray& a, const CellArray& b) {
    double m = 0;
    for (std::size_t k = 0; k < kCells; ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

}  // namespace

TEST(PlantStep, EquilibriumIsFixedPoint) {
    const PlantEnvironment env;
    auto s = PlantState::uniform(30.0);
    const CellArray zero{};
    for (int n = 0; n < 1000; ++n) {
        auto next = plant_step(s, zero, nominal(), env, 0.01);
        ASSERT_LT(max_abs_diff(next.t_cold, s.t_cold), 1e-9);
        ASSERT_LT(max_abs_diff(next.t_sensor, s.t_sensor), 1e-9);
        ASSERT_NEAR(next.t_coolant, 30.0, 1e-9);
        s = next;
    }
    EXPECT_NEAR(s.sim_time, 10.0, 1e-9);
}

TEST(PlantStep, PassiveRelaxationIsMonotone) {
    const PlantEnvironment env;
    auto s = PlantState::uniform(30.0);
    s.t_cold = filled(40.0);
    double prev = 40.0;
    for (int n = 0; n < 2000; ++n) {
        s = plant_step(s, CellArray{}, nominal(), env, 0.01);
        ASSERT_LT(s.t_cold[0], prev);
        ASSERT_GT(s.t_cold[0], 30.0);
        prev = s.t_cold[0];
    }
}

TEST(PlantStep, PositiveCurrentHeatsNegativeCools) {
    const PlantEnvironment env;
    auto s = PlantState::uniform(30.0);
    CellArray cur{};
    cur[0] = 0.5;
    cur[1] = -0.5;
    for (int n = 0; n < 100; ++n) s = plant_step(s, cur, nominal(), env, 0.01);
    EXPECT_GT(s.t_cold[0], 30.5);
    EXPECT_LT(s.t_cold[1], 29.5);
    EXPECT_NEAR(s.t_cold[2], 30.0, 0.05);
}

TEST(PlantStep, RejectsBadInputs) {
    const PlantEnvironment env;
    auto s = PlantState::uniform(30.0);
    EXPECT_THROW(plant_step(s, CellArray{}, nominal(), env, 0.0), InvalidArgument);
    EXPECT_THROW(plant_step(s, CellArray{}, nominal(), env, 0.011), InvalidArgument);
    EXPECT_THROW(plant_step(s, filled(0.8), nominal(), env, 0.01), LimitViolation);
    s.t_cold[3] = std::nan("");
    EXPECT_THROW(plant_step(s, CellArray{}, nominal(), env, 0.01), SimulationDiverged);
}

TEST(PlantStep, IntegratorConverges) {
    const PlantEnvironment env;
    CellArray cur;
    for (std::size_t k = 0; k < kCells; ++k) cur[k] = 0.05 * std::sin(static_cast<double>(k) + 0.5);
    auto coarse = PlantState::uniform(30.0);
    auto fine = coarse;
    double worst = 0;
    for (int n = 0; n < 10000; ++n) {
        coarse = plant_step(coarse, cur, nominal(), env, 0.001);
        fine = plant_step(fine, cur, nominal(), env, 0.0005);
        fine = plant_step(fine, cur, nominal(), env, 0.0005);
        worst = std::max(worst, max_abs_diff(coarse.t_cold, fine.t_cold));
    }
    EXPECT_LT(worst, 0.01);
}

TEST(PlantStep, CoolantRiseStaysWithinBudget) {
    const PlantEnvironment env;
    const double budget = coolant_delta_t(array_heat_budget(env.tem), env.coolant);
    // Full drive is the worst sink load; hold it until the face nears the envelope.
    for (double i : {0.7, -0.7}) {
        auto s = PlantState::uniform(30.0);
        for (int n = 0; n < 300 && s.t_cold[0] > 5.0 && s.t_cold[0] < 70.0; ++n) {
            s = plant_step(s, filled(i), nominal(), env, 0.01);
            ASSERT_LE(s.t_coolant - env.coolant.reservoir_temp, budget * 1.05);
        }
    }
    const auto models = spread_channel_models(ChannelThermalModel{}, 0.3, 1);
    for (double step : {15.0, -15.0, 10.0, -10.0}) {
        auto s = PlantState::uniform(30.0);
        std::array<ControllerState, kCells> st{};
        for (int n = 0; n < 1000; ++n) {
            CellArray cur;
            for (std::size_t k = 0; k < kCells; ++k) {
                auto r = pid_step(PidGains{}, st[k], 30.0 + step, s.t_sensor[k], 0.01);
                st[k] = r.state;
                cur[k] = r.current;
            }
            s = plant_step(s, cur, models, env, 0.01);
            ASSERT_LE(s.t_coolant - env.coolant.reservoir_temp, budget * 1.05);
        }
    }
}

TEST(SensorReader, IdealSensorReadsColdFace) {
    const PlantEnvironment env;
    auto m = ChannelThermalModel{};
    m.sensor_lag_tau = 0.0;
    m.sensor_noise_sigma = 0.0;
    const auto models = uniform_channel_models(m);
    auto s = PlantState::uniform(30.0);
    for (int n = 0; n < 50; ++n) s = plant_step(s, filled(0.3), models, env, 0.01);
    SensorReader r(1);
    for (std::size_t k = 0; k < kCells; ++k) EXPECT_EQ(r.read(s, models, k), s.t_cold[k]);
}

TEST(SensorReader, FirstOrderLag) {
    const PlantEnvironment env;
    auto m = ChannelThermalModel{};
    m.sensor_lag_tau = 0.1;
    m.sensor_noise_sigma = 0.0;
    m.heat_capacity = 1e6;  // cold face effectively frozen at its initial value
    const auto models = uniform_channel_models(m);
    auto s = PlantState::uniform(30.0);
    s.t_cold = filled(40.0);
    for (int n = 0; n < 10; ++n) s = plant_step(s, CellArray{}, models, env, 0.01);
    SensorReader r(1);
    const double frac = (r.read(s, models, 0) - 30.0) / 10.0;
    EXPECT_NEAR(frac, 1.0 - std::exp(-1.0), 0.01 * (1.0 - std::exp(-1.0)));
}

TEST(SensorReader, SeededReplayIsBitIdentical) {
    const auto models = nominal();
    const auto s = PlantState::uniform(30.0);
    SensorReader a(42), b(42), c(43);
    bool any_diff = false;
    for (int n = 0; n < 100; ++n) {
        const auto ra = a.read_all(s, models);
        ASSERT_EQ(ra, b.read_all(s, models));
        any_diff |= ra != c.read_all(s, models);
    }
    EXPECT_TRUE(any_diff);
}

TEST(SpreadChannelModels, WithinSpreadAndSeeded) {
    const ChannelThermalModel m;
    const auto a = spread_channel_models(m, 0.3, 5);
    EXPECT_EQ(a, spread_channel_models(m, 0.3, 5));
    for (const auto& c : a) {
        EXPECT_GE(c.g_skin, m.g_skin * 0.7);
        EXPECT_LE(c.g_skin, m.g_skin * 1.3);
        EXPECT_EQ(c.heat_capacity, m.heat_capacity);
    }
}

TEST(ExternalSurfaceSource, ConstantProfile) {
    const auto p = TimedTemperatureProfile::constant(34.0, 5.0);
    EXPECT_EQ(external_surface_source(p, 2.0), filled(34.0));
}

TEST(ExternalSurfaceSource, RampInterpolates) {
    TimedTemperatureProfile p;
    p.cells = {0, 1, 2, 3, 4, 5, 6, 7, 8};
    p.times_s = {0.0, 4.0};
    p.temps_c = {std::vector<double>(9, 30.0), std::vector<double>(9, 38.0)};
    const auto v = external_surface_source(p, 2.0);
    for (double x : v) EXPECT_DOUBLE_EQ(x, 34.0);
    EXPECT_THROW(external_surface_source(p, 4.5), InvalidArgument);
    EXPECT_THROW(external_surface_source(p, -0.1), InvalidArgument);
}

TEST(ExternalSurfaceSource, CheckerboardFromJson) {
    const auto p = load_profile_json(R"({"cells": [0, 2, 4, 6, 8], "times_s": [0, 1],
        "temps_c": [[36, 36, 36, 36, 36], [36, 36, 36, 36, 36]], "untouched_c": 25})");
    const auto v = external_surface_source(p, 0.5);
    for (std::size_t k = 0; k < kCells; ++k) EXPECT_EQ(v[k], k % 2 == 0 ? 36.0 : 25.0) << k;
}

TEST(ProfileJson, UniformKnotsAndRejections) {
    const auto p = load_profile_json(R"({"cells": [4], "times_s": [0, 2], "temps_c": [30, 40]})");
    EXPECT_DOUBLE_EQ(external_surface_source(p, 1.0)[4], 35.0);
    EXPECT_THROW(load_profile_json(R"({"cells": [9], "times_s": [0], "temps_c": [30]})"), SchemaError);
    EXPECT_THROW(load_profile_json(R"({"cells": [1], "times_s": [1, 0], "temps_c": [30, 30]})"), SchemaError);
    EXPECT_THROW(load_profile_json(R"({"cells": [1], "times_s": [0], "temps_c": [30], "bogus": 1})"),
                 SchemaError);
}
