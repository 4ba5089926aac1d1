#pragma once

#include <cstdint>
#include <vector>

#include "thermopalm/control.hpp"
#include "thermopalm/plant.hpp"

namespace thermopalm {

struct ClosedLoopOptions {
    double tick_hz = 100.0;
    double duration_s = 10.0;
    double ambient_c = 30.0;
    bool sensor_noise = false;  // false: lagged but noise-free thermistors
    std::uint64_t seed = 1;
};

/// Samples taken once per control tick. `mean_cold` is the channel average
/// of the contact-face temperature, `cold` keeps each channel.
struct StepTrace {
    double sample_period = 0.01;
    std::vector<double> mean_cold;
    std::vector<CellArray> cold;
    std::vector<CellArray> currents;
    std::vector<double> coolant;
};

/// All nine channels start at ambient and receive setpoint ambient + step_c
/// at t = 0, regulated by independent PID loops with the shared gains.
StepTrace simulate_closed_loop_step(const ChannelModels& models, const PlantEnvironment& env,
                                    const PidGains& gains, double step_c,
                                    const ClosedLoopOptions& opts = {});

/// Constant drive current on all channels from ambient; no controller.
StepTrace simulate_open_loop_step(const ChannelModels& models, const PlantEnvironment& env,
                                  double current, const ClosedLoopOptions& opts = {});

struct SteadyStateRange {
    double coldest_c;
    double warmest_c;
};

/// Steady-state contact temperatures reachable with every channel driven at
/// the same constant current, scanning |I| <= i_max.
SteadyStateRange steady_state_range(const ChannelThermalModel& model, const PlantEnvironment& env);

struct CalibrationOptions {
    double tick_hz = 100.0;
    double step_c = 10.0;
    double duration_s = 15.0;
    double ambient_c = 30.0;
    double tolerance = 0.10;  // relative rise-time error accepted
    double goal = 0.02;       // search stops early below this error
    double required_range_c = 15.0;  // steady state must reach ambient +/- this
    std::uint64_t seed = 7;
    int restarts = 4;
    double min_heat_capacity = 0.02, max_heat_capacity = 3.0;
    double min_g_skin = 0.002, max_g_skin = 0.03;
    double min_g_sink = 0.5, max_g_sink = 10.0;
};

struct CalibrationReport {
    ChannelThermalModel model;
    double warm_rise_s = 0;
    double cool_rise_s = 0;
    int evaluations = 0;
};

/// Fit heat capacity, skin and sink conductances so that the simulated
/// closed-loop 10-90 % rise times for +/-step_c steps match the targets
/// within opts.tolerance. Coordinate search with pattern moves in log space
/// over a bounded box, multi-started from seeded points. Throws CalibrationFailed with the best
/// residuals when no candidate is within tolerance.
CalibrationReport calibrate_plant_report(double target_warm_rise, double target_cool_rise,
                                         const PidGains& gains, const PlantEnvironment& env,
                                         const ChannelThermalModel& base = {},
                                         const CalibrationOptions& opts = {});

inline ChannelThermalModel calibrate_plant(double target_warm_rise, double target_cool_rise,
                                           const PidGains& gains, const PlantEnvironment& env,
                                           const CalibrationOptions& opts = {}) {
    return calibrate_plant_report(target_warm_rise, target_cool_rise, gains, env, {}, opts).model;
}

/// Rise times of the +/-step closed-loop responses for a given model.
struct RiseTimes {
    double warm;
    double cool;
};
RiseTimes closed_loop_rise_times(const ChannelModels& models, const PlantEnvironment& env,
                                 const PidGains& gains, double step_c,
                                 const ClosedLoopOptions& opts = {});

}  // namespace thermopalm
