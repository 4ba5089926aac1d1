#include "thermopalm/plant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "thermopalm/errors.hpp"

namespace thermopalm {

void ChannelThermalModel::validate() const {
    if (!(heat_capacity > 0)) throw InvalidArgument("ChannelThermalModel: heat_capacity must be > 0");
    if (g_skin < 0 || g_sink < 0) throw InvalidArgument("ChannelThermalModel: conductances must be >= 0");
    if (sensor_noise_sigma < 0) throw InvalidArgument("ChannelThermalModel: sensor_noise_sigma must be >= 0");
    if (sensor_lag_tau < 0) throw InvalidArgument("ChannelThermalModel: sensor_lag_tau must be >= 0");
}

ChannelModels spread_channel_models(const ChannelThermalModel& nominal, double spread,
                                    std::uint64_t seed) {
    if (spread < 0 || spread >= 1) throw InvalidArgument("spread must be in [0, 1)");
    std::mt19937_64 rng(seed);
    ChannelModels models;
    for (auto& m : models) {
        m = nominal;
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        m.g_skin = nominal.g_skin * (1.0 - spread + 2.0 * spread * u);
    }
    return models;
}

PlantState PlantState::uniform(double temp_c) {
    PlantState s;
    s.t_cold = filled(temp_c);
    s.t_hot = filled(temp_c);
    s.t_sensor = filled(temp_c);
    s.t_coolant = temp_c;
    s.sim_time = 0.0;
    return s;
}

namespace {

struct SinkSolution {
    CellArray t_hot;
    double t_coolant;
};

// Hot faces are quasi-static: g_sink (T_h - T_w) = q_h. The coolant bus
// absorbs the summed sink heat as T_w = T_res + sum / (rho V c).
// Both are linear in (T_h, T_w) and solved in closed form.
SinkSolution solve_sink(const CellArray& t_cold, const CellArray& i_tem, const ChannelModels& models,
                        const PlantEnvironment& env) {
    const TemParams& p = env.tem;
    const double capacity_rate =
        env.coolant.density * env.coolant.flow_rate * env.coolant.specific_heat;
    const double b = 1.0 / p.r_thermal;

    CellArray source{};
    double numerator = capacity_rate * env.coolant.reservoir_temp;
    double denominator = capacity_rate;
    for (std::size_t k = 0; k < kCells; ++k) {
        const double a = models[k].g_sink;
        const double tc_k = t_cold[k] + kZeroCelsiusInKelvin;
        source[k] = p.seebeck_alpha * tc_k * i_tem[k] + 0.5 * p.r_electrical * i_tem[k] * i_tem[k];
        const double w = a * b / (a + b);
        numerator += w * t_cold[k] + a * source[k] / (a + b);
        denominator += w;
    }
    SinkSolution out;
    out.t_coolant = numerator / denominator;
    for (std::size_t k = 0; k < kCells; ++k) {
        const double a = models[k].g_sink;
        out.t_hot[k] = (a * out.t_coolant + b * t_cold[k] + source[k]) / (a + b);
    }
    return out;
}

CellArray cold_derivative(const CellArray& t_cold, const CellArray& i_tem, const ChannelModels& models,
                          const PlantEnvironment& env) {
    const SinkSolution sink = solve_sink(t_cold, i_tem, models, env);
    CellArray d{};
    for (std::size_t k = 0; k < kCells; ++k) {
        const double q_in = cold_side_flow(env.tem, Kelvin::from_celsius(t_cold[k]),
                                           Kelvin::from_celsius(sink.t_hot[k]), i_tem[k]);
        const double q_skin = models[k].g_skin * (models[k].skin_core_temp - t_cold[k]);
        d[k] = (q_in + q_skin) / models[k].heat_capacity;
    }
    return d;
}

CellArray axpy(const CellArray& x, double h, const CellArray& d) {
    CellArray r;
    for (std::size_t k = 0; k < kCells; ++k) r[k] = x[k] + h * d[k];
    return r;
}

void check_envelope(const PlantState& s) {
    auto bad = [](double t) { return !std::isfinite(t) || t < kPlantMinTemp || t > kPlantMaxTemp; };
    for (std::size_t k = 0; k < kCells; ++k) {
        if (bad(s.t_cold[k]) || bad(s.t_hot[k])) {
            throw SimulationDiverged("plant left the [0, 80] degC envelope on channel " +
                                     std::to_string(k) + " at t=" + std::to_string(s.sim_time) + " s");
        }
    }
    if (bad(s.t_coolant)) throw SimulationDiverged("coolant temperature diverged");
}

}  // namespace

PlantState plant_step(const PlantState& state, const CellArray& currents, const ChannelModels& models,
                      const PlantEnvironment& env, double dt) {
    if (!(dt > 0 && dt <= kPlantMaxStep + 1e-15)) {
        throw InvalidArgument("plant_step: dt must be in (0, 0.01] s");
    }
    CellArray i_tem;
    for (std::size_t k = 0; k < kCells; ++k) {
        if (!std::isfinite(currents[k]) || std::abs(currents[k]) > env.tem.i_max + 1e-12) {
            throw LimitViolation("plant_step: channel " + std::to_string(k) + " current " +
                                 std::to_string(currents[k]) + " A beyond i_max");
        }
        // Drive convention (positive heats) -> Peltier convention (positive cools).
        i_tem[k] = -currents[k];
    }

    const int substeps = std::max(1, static_cast<int>(std::ceil(dt / kPlantInternalStep - 1e-9)));
    const double h = dt / substeps;

    PlantState next = state;
    try {
        for (int s = 0; s < substeps; ++s) {
            const CellArray& y = next.t_cold;
            const CellArray k1 = cold_derivative(y, i_tem, models, env);
            const CellArray k2 = cold_derivative(axpy(y, 0.5 * h, k1), i_tem, models, env);
            const CellArray k3 = cold_derivative(axpy(y, 0.5 * h, k2), i_tem, models, env);
            const CellArray k4 = cold_derivative(axpy(y, h, k3), i_tem, models, env);
            for (std::size_t k = 0; k < kCells; ++k) {
                next.t_cold[k] = y[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
                const double tau = models[k].sensor_lag_tau;
                const double blend = tau > 0 ? -std::expm1(-h / tau) : 1.0;
                next.t_sensor[k] += blend * (next.t_cold[k] - next.t_sensor[k]);
            }
        }
    } catch (const LimitViolation& e) {
        throw SimulationDiverged(std::string("plant_step: ") + e.what());
    }

    const SinkSolution sink = solve_sink(next.t_cold, i_tem, models, env);
    next.t_hot = sink.t_hot;
    next.t_coolant = sink.t_coolant;
    next.sim_time = state.sim_time + dt;
    check_envelope(next);
    return next;
}

CellArray cold_face_rate(const CellArray& t_cold, const CellArray& currents, const ChannelModels& models,
                         const PlantEnvironment& env) {
    CellArray i_tem;
    for (std::size_t k = 0; k < kCells; ++k) i_tem[k] = -currents[k];
    return cold_derivative(t_cold, i_tem, models, env);
}

double coolant_load(const PlantState& state, const ChannelModels& models) {
    double q = 0.0;
    for (std::size_t k = 0; k < kCells; ++k) q += models[k].g_sink * (state.t_hot[k] - state.t_coolant);
    return q;
}

double SensorReader::read(const PlantState& state, const ChannelModels& models, std::size_t channel) {
    if (channel >= kCells) throw InvalidArgument("sensor channel out of range");
    const double sigma = models[channel].sensor_noise_sigma;
    const double noise = normal_(rng_);
    return state.t_sensor[channel] + sigma * noise;
}

CellArray SensorReader::read_all(const PlantState& state, const ChannelModels& models) {
    CellArray out;
    for (std::size_t k = 0; k < kCells; ++k) out[k] = read(state, models, k);
    return out;
}

TimedTemperatureProfile TimedTemperatureProfile::constant(double temp_c, double duration_s) {
    TimedTemperatureProfile p;
    for (std::size_t k = 0; k < kCells; ++k) p.cells.push_back(k);
    p.times_s = {0.0, duration_s};
    p.temps_c = {std::vector<double>(kCells, temp_c), std::vector<double>(kCells, temp_c)};
    return p;
}

void TimedTemperatureProfile::validate() const {
    if (cells.empty()) throw SchemaError("cells", "at least one cell required");
    std::array<bool, kCells> seen{};
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] >= kCells) {
            throw SchemaError("cells[" + std::to_string(i) + "]", "cell index must be in [0, 9)");
        }
        if (seen[cells[i]]) throw SchemaError("cells[" + std::to_string(i) + "]", "duplicate cell");
        seen[cells[i]] = true;
    }
    if (times_s.empty()) throw SchemaError("times_s", "at least one knot required");
    for (std::size_t i = 1; i < times_s.size(); ++i) {
        if (!(times_s[i] > times_s[i - 1])) {
            throw SchemaError("times_s[" + std::to_string(i) + "]", "times must be strictly increasing");
        }
    }
    if (temps_c.size() != times_s.size()) {
        throw SchemaError("temps_c", "need one entry per knot in times_s");
    }
    for (std::size_t i = 0; i < temps_c.size(); ++i) {
        if (temps_c[i].size() != cells.size()) {
            throw SchemaError("temps_c[" + std::to_string(i) + "]", "need one value per listed cell");
        }
        for (double v : temps_c[i]) {
            if (!std::isfinite(v)) throw SchemaError("temps_c[" + std::to_string(i) + "]", "non-finite value");
        }
    }
}

CellArray external_surface_source(const TimedTemperatureProfile& profile, double t) {
    const auto& ts = profile.times_s;
    const double eps = 1e-12;
    if (ts.empty() || t < ts.front() - eps || t > ts.back() + eps) {
        throw InvalidArgument("external_surface_source: t=" + std::to_string(t) +
                              " s outside the profile domain");
    }
    CellArray out = filled(profile.untouched_c);
    std::size_t hi = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
    if (hi == 0) hi = 1;
    std::vector<double> values;
    if (hi >= ts.size()) {
        values = profile.temps_c.back();
    } else {
        const std::size_t lo = hi - 1;
        const double w = (t - ts[lo]) / (ts[hi] - ts[lo]);
        values.resize(profile.cells.size());
        for (std::size_t j = 0; j < values.size(); ++j) {
            values[j] = profile.temps_c[lo][j] + w * (profile.temps_c[hi][j] - profile.temps_c[lo][j]);
        }
    }
    for (std::size_t j = 0; j < profile.cells.size(); ++j) out[profile.cells[j]] = values[j];
    return out;
}

TimedTemperatureProfile load_profile_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("", std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("", "profile must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "cells" && key != "times_s" && key != "temps_c" && key != "untouched_c" &&
            key != "schema") {
            throw SchemaError(key, "unknown field");
        }
    }
    TimedTemperatureProfile p;
    try {
        for (const auto& c : j.at("cells")) {
            if (!c.is_number_integer() || c.get<long long>() < 0) {
                throw SchemaError("cells", "cell indices must be non-negative integers");
            }
            p.cells.push_back(c.get<std::size_t>());
        }
        p.times_s = j.at("times_s").get<std::vector<double>>();
        for (const auto& row : j.at("temps_c")) {
            if (row.is_number()) {
                p.temps_c.emplace_back(p.cells.size(), row.get<double>());
            } else {
                p.temps_c.push_back(row.get<std::vector<double>>());
            }
        }
        if (j.contains("untouched_c")) p.untouched_c = j.at("untouched_c").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("", std::string("profile field error: ") + e.what());
    }
    p.validate();
    return p;
}

TimedTemperatureProfile load_profile_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open profile file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_profile_json(ss.str());
}

std::string plant_model_to_json(const ChannelThermalModel& m, const std::string& fit_json) {
    nlohmann::ordered_json j;
    j["schema"] = 1;
    j["kind"] = "plant_model";
    j["heat_capacity"] = m.heat_capacity;
    j["g_skin"] = m.g_skin;
    j["g_sink"] = m.g_sink;
    j["skin_core_temp"] = m.skin_core_temp;
    j["sensor_lag_tau"] = m.sensor_lag_tau;
    j["sensor_noise_sigma"] = m.sensor_noise_sigma;
    if (!fit_json.empty()) j["fit"] = nlohmann::ordered_json::parse(fit_json);
    return j.dump(2) + "\n";
}

ChannelThermalModel plant_model_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("", std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("", "plant model must be a JSON object");
    static const char* allowed[] = {"schema", "kind", "heat_capacity", "g_skin", "g_sink", "skin_core_temp",
                                    "sensor_lag_tau", "sensor_noise_sigma", "fit"};
    for (const auto& [key, _] : j.items())
        if (std::none_of(std::begin(allowed), std::end(allowed), [&](const char* a) { return key == a; }))
            throw SchemaError(key, "unknown field");
    if (j.value("schema", 0) != 1) throw SchemaError("schema", "expected 1");
    if (j.value("kind", std::string()) != "plant_model") throw SchemaError("kind", "expected \"plant_model\"");
    ChannelThermalModel m;
    auto num = [&](const char* f, double& out) {
        if (!j.contains(f)) return;
        if (!j[f].is_number()) throw SchemaError(f, "must be a number");
        out = j[f].get<double>();
    };
    num("heat_capacity", m.heat_capacity);
    num("g_skin", m.g_skin);
    num("g_sink", m.g_sink);
    num("skin_core_temp", m.skin_core_temp);
    num("sensor_lag_tau", m.sensor_lag_tau);
    num("sensor_noise_sigma", m.sensor_noise_sigma);
    try {
        m.validate();
    } catch (const InvalidArgument& e) {
        throw SchemaError("", e.what());
    }
    return m;
}

ChannelThermalModel load_plant_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open plant model file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return plant_model_from_json(ss.str());
}

void save_plant_model_file(const std::string& path, const ChannelThermalModel& m, const std::string& fit_json) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write plant model file " + path);
    out << plant_model_to_json(m, fit_json);
}

}  // namespace thermopalm
