#pragma once

#include <span>

namespace thermopalm {

/// Shared PID gains. Output is a drive current where positive heats the
/// contact face.
struct PidGains {
    double kp = 0.08;             // A/degC
    double ki = 0.01;             // A/(degC s)
    double kd = 0.01;             // A s/degC
    double output_limit = 0.7;    // A
    double integral_limit = 0.7;  // A

    /// Gains non-negative, limits positive, output_limit <= i_max.
    void validate(double i_max) const;
};

struct ControllerState {
    double integral = 0.0;       // A, accumulated ki * e * dt
    double prev_measured = 0.0;  // degC, for derivative on measurement
    bool primed = false;         // prev_measured valid
    double last_output = 0.0;    // A
};

struct PidStep {
    double current;
    ControllerState state;
};

/// Positional PID on error = setpoint - measured. The derivative acts on the
/// measurement, and the integral is held while the output is saturated.
PidStep pid_step(const PidGains& gains, const ControllerState& state, double setpoint,
                 double measured, double dt);

/// Filtered-DC drive. At control rates <= 1 kHz the 5 kHz output filter is
/// transparent, so the command passes through unchanged. Commands beyond
/// i_max are a contract violation upstream (LimitViolation).
double drive_model(double command, double i_max, double dt);

struct StepMetrics {
    double rise_time;      // s
    double overshoot_pct;  // % of step magnitude
    double settling_2pct;  // s, last entry into the +/-2 % band
};

/// Metrics of a uniformly sampled step trace. trace[0] is the baseline; the
/// final value is the mean of the last 5 % of samples. Crossing times use
/// the first sample at or beyond each fraction. Throws InvalidArgument when
/// no step is present.
StepMetrics step_response_metrics(std::span<const double> trace, double sample_period,
                                  double lo_frac = 0.1, double hi_frac = 0.9);

}  // namespace thermopalm
