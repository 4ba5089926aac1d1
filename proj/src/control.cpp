#include "thermopalm/control.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "thermopalm/errors.hpp"

namespace thermopalm {

void PidGains::validate(double i_max) const {
    if (kp < 0 || ki < 0 || kd < 0) throw InvalidArgument("PidGains: gains must be non-negative");
    if (!(output_limit > 0) || !(integral_limit > 0)) {
        throw InvalidArgument("PidGains: limits must be positive");
    }
    if (output_limit > i_max + 1e-12) {
        throw InvalidArgument("PidGains: output_limit " + std::to_string(output_limit) +
                              " A exceeds i_max " + std::to_string(i_max) + " A");
    }
}

PidStep pid_step(const PidGains& g, const ControllerState& st, double setpoint, double measured,
                 double dt) {
    if (!(dt > 0)) throw InvalidArgument("pid_step: dt must be positive");

    const double error = setpoint - measured;
    const double derivative = st.primed ? -(measured - st.prev_measured) / dt : 0.0;

    const double candidate_integral =
        std::clamp(st.integral + g.ki * error * dt, -g.integral_limit, g.integral_limit);
    const double unclamped = g.kp * error + candidate_integral + g.kd * derivative;

    ControllerState next = st;
    next.prev_measured = measured;
    next.primed = true;

    double output = unclamped;
    if (std::abs(unclamped) > g.output_limit) {
        // Saturated: keep the previous integral.
        output = std::clamp(g.kp * error + st.integral + g.kd * derivative, -g.output_limit,
                            g.output_limit);
    } else {
        next.integral = candidate_integral;
    }
    next.last_output = output;
    return {output, next};
}

double drive_model(double command, double i_max, double /*dt*/) {
    if (!std::isfinite(command) || std::abs(command) > i_max + 1e-12) {
        throw LimitViolation("drive_model: command " + std::to_string(command) +
                             " A beyond i_max");
    }
    return command;
}

StepMetrics step_response_metrics(std::span<const double> trace, double sample_period,
                                  double lo_frac, double hi_frac) {
    if (trace.size() < 3) throw InvalidArgument("step_response_metrics: trace too short");
    if (!(sample_period > 0)) throw InvalidArgument("step_response_metrics: bad sample period");
    if (!(lo_frac >= 0 && lo_frac < hi_frac && hi_frac <= 1)) {
        throw InvalidArgument("step_response_metrics: need 0 <= lo < hi <= 1");
    }

    const double baseline = trace.front();
    const std::size_t tail = std::max<std::size_t>(1, trace.size() / 20);
    double final_value = 0.0;
    for (std::size_t i = trace.size() - tail; i < trace.size(); ++i) final_value += trace[i];
    final_value /= static_cast<double>(tail);

    const double step = final_value - baseline;
    if (!(std::abs(step) > 1e-9)) throw InvalidArgument("step_response_metrics: no step detected");

    auto fraction = [&](std::size_t i) { return (trace[i] - baseline) / step; };

    std::size_t lo_idx = trace.size();
    std::size_t hi_idx = trace.size();
    double peak = 0.0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const double f = fraction(i);
        if (lo_idx == trace.size() && f >= lo_frac) lo_idx = i;
        if (hi_idx == trace.size() && f >= hi_frac) hi_idx = i;
        peak = std::max(peak, f);
    }
    if (hi_idx == trace.size()) {
        throw InvalidArgument("step_response_metrics: trace never reaches the upper fraction");
    }

    std::size_t last_outside = 0;
    bool ever_outside = false;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (std::abs(fraction(i) - 1.0) > 0.02) {
            last_outside = i;
            ever_outside = true;
        }
    }
    const double settling = ever_outside ? static_cast<double>(last_outside + 1) * sample_period : 0.0;

    return StepMetrics{
        .rise_time = static_cast<double>(hi_idx - lo_idx) * sample_period,
        .overshoot_pct = std::max(0.0, peak - 1.0) * 100.0,
        .settling_2pct = settling,
    };
}

}  // namespace thermopalm
