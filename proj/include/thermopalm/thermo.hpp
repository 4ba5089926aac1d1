#pragma once

// Thermoelectric module heat flows and the water-cooling budget.
//
// Current sign follows the Peltier convention: positive current pumps heat
// out of the "cold" (skin-contact) face. Heat-flow results are signed so that
// a negative value means heat leaving the face in question.

namespace thermopalm {

inline constexpr double kZeroCelsiusInKelvin = 273.15;

/// Absolute temperature. Peltier terms multiply absolute temperature, so the
/// thermo-core API takes kelvin explicitly.
struct Kelvin {
    double value;

    static constexpr Kelvin from_celsius(double c) { return Kelvin{c + kZeroCelsiusInKelvin}; }
    constexpr double celsius() const { return value - kZeroCelsiusInKelvin; }
};

/// Reference temperature used to back-solve the Seebeck coefficient.
inline constexpr Kelvin kReferenceTemperature{303.15};

/// Physical constants of one TEM plus the module count of the array.
struct TemParams {
    double seebeck_alpha;  // V/K
    double r_thermal;      // K/W, internal hot<->cold conduction
    double r_electrical;   // ohm
    double i_max;          // A
    double q_max;          // W
    int n_modules;

    /// CP076581-238P as fitted in the device: Q_max 1.7 W, I_max 0.7 A,
    /// R_el 4.17 ohm, alpha = Q_max / (T_ref * I_max).
    static TemParams device_default();

    /// Throws InvalidArgument unless every field is positive, i_max <= 2 A,
    /// and q_max agrees with alpha * T_ref * i_max within 20 %.
    void validate() const;
};

struct CoolantParams {
    double density;         // kg/m^3
    double flow_rate;       // m^3/s
    double specific_heat;   // J/(kg K)
    double reservoir_temp;  // degC

    /// Water at 2.25 ml/s held at 30 degC.
    static CoolantParams device_default();

    /// Positive fields, reservoir within the 25..36 degC skin band.
    void validate() const;
};

/// -alpha * T_c * I. Throws LimitViolation if |i| > i_max or T_c is outside
/// [250, 400] K.
double peltier_heat(const TemParams& p, Kelvin t_cold, double current);

/// Net heat into the cold face: Peltier + conduction back from the hot side
/// + half of the Joule heat.
double cold_side_flow(const TemParams& p, Kelvin t_cold, Kelvin t_hot, double current);

/// Net heat into the hot face. Uses alpha * T_c for the Peltier term, so
/// cold_side_flow + hot_side_flow == R_el * I^2 identically.
double hot_side_flow(const TemParams& p, Kelvin t_cold, Kelvin t_hot, double current);

/// Worst-case heat the coolant must remove: n * (Q_max + R_el I_max^2 / 2).
double array_heat_budget(const TemParams& p);

/// Coolant temperature rise for a heat load q. Throws InvalidArgument on
/// zero or negative flow.
double coolant_delta_t(double heat_load, const CoolantParams& c);

struct MaxDeltaT {
    double delta_t_max;  // K
    double i_opt;        // A
};

/// Largest steady-state T_h - T_c with no external load on the cold face,
/// searching currents in (0, i_max]. Returns {0, 0} when no positive
/// differential is achievable.
MaxDeltaT max_delta_t(const TemParams& p, Kelvin t_hot);

}  // namespace thermopalm
