#include "thermopalm/thermo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "thermopalm/errors.hpp"

namespace thermopalm {

namespace {

constexpr double kMinTemperatureK = 250.0;
constexpr double kMaxTemperatureK = 400.0;
constexpr double kCurrentSlack = 1e-12;

void check_current(const TemParams& p, double current) {
    if (!std::isfinite(current) || std::abs(current) > p.i_max + kCurrentSlack) {
        throw LimitViolation("current " + std::to_string(current) + " A exceeds i_max " +
                             std::to_string(p.i_max) + " A");
    }
}

void check_temperature(Kelvin t, const char* which) {
    if (!(t.value >= kMinTemperatureK && t.value <= kMaxTemperatureK)) {
        throw LimitViolation(std::string(which) + " temperature " + std::to_string(t.value) +
                             " K outside [250, 400] K");
    }
}

}  // namespace

TemParams TemParams::device_default() {
    constexpr double q_max = 1.7;
    constexpr double i_max = 0.7;
    return TemParams{
        .seebeck_alpha = q_max / (kReferenceTemperature.value * i_max),
        .r_thermal = 100.0,
        .r_electrical = 4.17,
        .i_max = i_max,
        .q_max = q_max,
        .n_modules = 9,
    };
}

void TemParams::validate() const {
    if (!(seebeck_alpha > 0 && r_thermal > 0 && r_electrical > 0 && i_max > 0 && q_max > 0)) {
        throw InvalidArgument("TemParams: all physical constants must be strictly positive");
    }
    if (n_modules < 1) throw InvalidArgument("TemParams: n_modules must be >= 1");
    if (i_max > 2.0) throw InvalidArgument("TemParams: i_max above the 2 A sanity bound");
    const double implied = seebeck_alpha * kReferenceTemperature.value * i_max;
    if (std::abs(implied - q_max) > 0.2 * q_max) {
        throw InvalidArgument("TemParams: q_max " + std::to_string(q_max) +
                              " W inconsistent with alpha*T_ref*i_max = " + std::to_string(implied) +
                              " W");
    }
}

CoolantParams CoolantParams::device_default() {
    return CoolantParams{
        .density = 1000.0,
        .flow_rate = 2.25e-6,
        .specific_heat = 4184.0,
        .reservoir_temp = 30.0,
    };
}

void CoolantParams::validate() const {
    if (!(density > 0 && flow_rate > 0 && specific_heat > 0)) {
        throw InvalidArgument("CoolantParams: density, flow rate and specific heat must be positive");
    }
    if (!(reservoir_temp >= 25.0 && reservoir_temp <= 36.0)) {
        throw InvalidArgument("CoolantParams: reservoir temperature outside 25..36 degC");
    }
}

double peltier_heat(const TemParams& p, Kelvin t_cold, double current) {
    check_current(p, current);
    check_temperature(t_cold, "cold-side");
    return -p.seebeck_alpha * t_cold.value * current;
}

double cold_side_flow(const TemParams& p, Kelvin t_cold, Kelvin t_hot, double current) {
    check_temperature(t_hot, "hot-side");
    return peltier_heat(p, t_cold, current) + (t_hot.value - t_cold.value) / p.r_thermal +
           0.5 * p.r_electrical * current * current;
}

double hot_side_flow(const TemParams& p, Kelvin t_cold, Kelvin t_hot, double current) {
    check_temperature(t_hot, "hot-side");
    return -peltier_heat(p, t_cold, current) + (t_cold.value - t_hot.value) / p.r_thermal +
           0.5 * p.r_electrical * current * current;
}

double array_heat_budget(const TemParams& p) {
    if (p.n_modules < 1) throw InvalidArgument("array_heat_budget: n_modules must be >= 1");
    return p.n_modules * (p.q_max + 0.5 * p.r_electrical * p.i_max * p.i_max);
}

double coolant_delta_t(double heat_load, const CoolantParams& c) {
    const double capacity_rate = c.density * c.flow_rate * c.specific_heat;
    if (!(c.flow_rate > 0) || !(capacity_rate > 0)) {
        throw InvalidArgument("coolant_delta_t: flow rate must be positive");
    }
    return heat_load / capacity_rate;
}

MaxDeltaT max_delta_t(const TemParams& p, Kelvin t_hot) {
    // Setting the cold-face flow to zero gives
    //   T_c(I) = (T_h/R_th + R_el I^2 / 2) / (alpha I + 1/R_th),
    // a ratio whose only stationary point on I > 0 is the root of
    //   (R_el/2) alpha I^2 + R_el I / R_th - alpha T_h / R_th = 0.
    const double a = t_hot.value / p.r_thermal;
    const double b = 0.5 * p.r_electrical;
    const double c = 1.0 / p.r_thermal;
    const double alpha = p.seebeck_alpha;
    if (!(alpha > 0) || !(p.i_max > 0)) return {0.0, 0.0};

    auto t_cold_at = [&](double i) { return (a + b * i * i) / (c + alpha * i); };

    double i_star = (-c + std::sqrt(c * c + alpha * alpha * a / b)) / alpha;
    i_star = std::clamp(i_star, 0.0, p.i_max);
    // Below the stationary point T_c(I) is decreasing, so clamping to i_max
    // is the constrained optimum.
    const double dt = t_hot.value - t_cold_at(i_star);
    if (!(dt > 0) || !(i_star > 0)) return {0.0, 0.0};
    return {dt, i_star};
}

}  // namespace thermopalm
