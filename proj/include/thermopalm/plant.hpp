#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "thermopalm/cells.hpp"
#include "thermopalm/thermo.hpp"

namespace thermopalm {

/// Lumped thermal parameters of one channel in contact with the palm.
struct ChannelThermalModel {
    double heat_capacity = 0.1357;    // J/K, plate + TEM cold face + thermistor
    double g_skin = 0.0066;           // W/K, contact conductance to skin
    double g_sink = 6.64;             // W/K, hot face through heatsink to coolant
    double skin_core_temp = 30.0;     // degC
    double sensor_lag_tau = 0.05;     // s
    double sensor_noise_sigma = 0.05; // degC

    void validate() const;
    friend bool operator==(const ChannelThermalModel&, const ChannelThermalModel&) = default;
};

using ChannelModels = std::array<ChannelThermalModel, kCells>;

/// Nine copies of `nominal` with g_skin scaled by independent uniform
/// factors in [1 - spread, 1 + spread].
ChannelModels spread_channel_models(const ChannelThermalModel& nominal, double spread,
                                    std::uint64_t seed);

inline ChannelModels uniform_channel_models(const ChannelThermalModel& nominal) {
    ChannelModels m;
    m.fill(nominal);
    return m;
}

/// Constants shared by all channels.
struct PlantEnvironment {
    TemParams tem = TemParams::device_default();
    CoolantParams coolant = CoolantParams::device_default();
};

/// Simulation safety envelope; any node outside it is treated as divergence.
inline constexpr double kPlantMinTemp = 0.0;
inline constexpr double kPlantMaxTemp = 80.0;

struct PlantState {
    CellArray t_cold{};    // degC, contact face
    CellArray t_hot{};     // degC, derived from the quasi-static sink balance
    CellArray t_sensor{};  // degC, lagged thermistor temperature
    double t_coolant = 0;  // degC
    double sim_time = 0;   // s

    /// Everything at one temperature, time zero.
    static PlantState uniform(double temp_c);
};

inline constexpr double kPlantInternalStep = 1e-3;
inline constexpr double kPlantMaxStep = 0.01;

/// Advance the plant by dt in (0, 0.01] s with currents held constant.
/// currents use the drive convention: positive heats the contact face.
/// Internally integrates with RK4 at 1 kHz. Throws InvalidArgument on a bad
/// dt, LimitViolation on |current| > i_max, SimulationDiverged on NaN or a
/// node leaving [0, 80] degC.
PlantState plant_step(const PlantState& state, const CellArray& currents,
                      const ChannelModels& models, const PlantEnvironment& env, double dt);

/// d(t_cold)/dt for every channel at the given contact temperatures and
/// drive currents, with hot faces and coolant at their quasi-static balance.
CellArray cold_face_rate(const CellArray& t_cold, const CellArray& currents, const ChannelModels& models,
                         const PlantEnvironment& env);

/// Total heat the sink path delivers into the coolant at this state (W).
double coolant_load(const PlantState& state, const ChannelModels& models);

/// Thermistor readings: lagged temperature plus seeded Gaussian noise.
class SensorReader {
public:
    explicit SensorReader(std::uint64_t seed) : rng_(seed) {}

    double read(const PlantState& state, const ChannelModels& models, std::size_t channel);
    CellArray read_all(const PlantState& state, const ChannelModels& models);

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Piecewise-linear temperature playback for the simulated external surface
/// (the outward-facing thermistors).
struct TimedTemperatureProfile {
    std::vector<std::size_t> cells;           // cells the profile drives
    std::vector<double> times_s;              // strictly increasing knots
    std::vector<std::vector<double>> temps_c; // [knot][cell in `cells`]
    double untouched_c = 30.0;                // reading of cells not listed

    static TimedTemperatureProfile constant(double temp_c, double duration_s);

    /// Throws SchemaError on inconsistent shapes or bad indices.
    void validate() const;
    double start() const { return times_s.front(); }
    double end() const { return times_s.back(); }
};

/// The nine outward-facing temperatures at time t. Throws InvalidArgument
/// when t is outside the profile's domain.
CellArray external_surface_source(const TimedTemperatureProfile& profile, double t);

/// JSON schema: {"cells": [..], "times_s": [..], "temps_c": [..]} where
/// temps_c holds one number per knot (uniform over cells) or one array per
/// knot (per cell). Optional "untouched_c". Unknown keys are rejected.
TimedTemperatureProfile load_profile_json(const std::string& text);
TimedTemperatureProfile load_profile_file(const std::string& path);

/// Plant model files: {"schema": 1, "kind": "plant_model", "heat_capacity",
/// "g_skin", "g_sink", "skin_core_temp", "sensor_lag_tau",
/// "sensor_noise_sigma"} plus an optional free-form "fit" object.
std::string plant_model_to_json(const ChannelThermalModel& m, const std::string& fit_json = "");
ChannelThermalModel plant_model_from_json(const std::string& text);
ChannelThermalModel load_plant_model_file(const std::string& path);
void save_plant_model_file(const std::string& path, const ChannelThermalModel& m, const std::string& fit_json = "");

}  // namespace thermopalm
