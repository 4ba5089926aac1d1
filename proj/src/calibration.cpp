#include "thermopalm/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "thermopalm/errors.hpp"

namespace thermopalm {

namespace {

StepTrace run_trace(const ChannelModels& models, const PlantEnvironment& env, const ClosedLoopOptions& opts,
                    const std::function<CellArray(const CellArray&, double)>& controller) {
    if (!(opts.tick_hz > 0) || !(opts.duration_s > 0)) {
        throw InvalidArgument("closed loop: tick_hz and duration must be positive");
    }
    const double dt = 1.0 / opts.tick_hz;
    const auto ticks = static_cast<std::size_t>(std::llround(opts.duration_s * opts.tick_hz));

    PlantState state = PlantState::uniform(opts.ambient_c);
    SensorReader sensors(opts.seed);
    StepTrace trace;
    trace.sample_period = dt;
    trace.mean_cold.reserve(ticks + 1);

    auto record = [&](const CellArray& currents) {
        double mean = 0.0;
        for (double t : state.t_cold) mean += t;
        trace.mean_cold.push_back(mean / kCells);
        trace.cold.push_back(state.t_cold);
        trace.currents.push_back(currents);
        trace.coolant.push_back(state.t_coolant);
    };

    record(CellArray{});
    for (std::size_t n = 0; n < ticks; ++n) {
        const CellArray measured = opts.sensor_noise ? sensors.read_all(state, models) : state.t_sensor;
        const CellArray currents = controller(measured, dt);
        state = plant_step(state, currents, models, env, dt);
        record(currents);
    }
    return trace;
}

}  // namespace

StepTrace simulate_closed_loop_step(const ChannelModels& models, const PlantEnvironment& env,
                                    const PidGains& gains, double step_c, const ClosedLoopOptions& opts) {
    std::array<ControllerState, kCells> states{};
    const double setpoint = opts.ambient_c + step_c;
    return run_trace(models, env, opts, [&](const CellArray& measured, double dt) {
        CellArray currents;
        for (std::size_t k = 0; k < kCells; ++k) {
            const PidStep out = pid_step(gains, states[k], setpoint, measured[k], dt);
            states[k] = out.state;
            currents[k] = drive_model(out.current, env.tem.i_max, dt);
        }
        return currents;
    });
}

StepTrace simulate_open_loop_step(const ChannelModels& models, const PlantEnvironment& env, double current,
                                  const ClosedLoopOptions& opts) {
    return run_trace(models, env, opts, [&](const CellArray&, double) { return filled(current); });
}

RiseTimes closed_loop_rise_times(const ChannelModels& models, const PlantEnvironment& env,
                                 const PidGains& gains, double step_c, const ClosedLoopOptions& opts) {
    const StepTrace warm = simulate_closed_loop_step(models, env, gains, +step_c, opts);
    const StepTrace cool = simulate_closed_loop_step(models, env, gains, -step_c, opts);
    return {step_response_metrics(warm.mean_cold, warm.sample_period).rise_time,
            step_response_metrics(cool.mean_cold, cool.sample_period).rise_time};
}

SteadyStateRange steady_state_range(const ChannelThermalModel& model, const PlantEnvironment& env) {
    const ChannelModels models = uniform_channel_models(model);
    // Net heat into one cold face with all channels at temperature t and
    // current i; decreasing in t, so bisection finds the balance point.
    auto balance = [&](double i_drive) {
        auto net = [&](double t) { return cold_face_rate(filled(t), filled(i_drive), models, env)[0]; };
        double lo = kPlantMinTemp + 1.0;
        double hi = kPlantMaxTemp - 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (net(mid) > 0) lo = mid; else hi = mid;
        }
        return 0.5 * (lo + hi);
    };
    SteadyStateRange range{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    constexpr int kGrid = 70;
    for (int g = 0; g <= kGrid; ++g) {
        const double i = env.tem.i_max * g / kGrid;
        range.coldest_c = std::min(range.coldest_c, balance(-i));
        range.warmest_c = std::max(range.warmest_c, balance(+i));
    }
    return range;
}

CalibrationReport calibrate_plant_report(double target_warm, double target_cool, const PidGains& gains,
                                         const PlantEnvironment& env, const ChannelThermalModel& base,
                                         const CalibrationOptions& opts) {
    if (!(target_warm > 0) || !(target_cool > 0)) {
        throw InvalidArgument("calibrate_plant: rise-time targets must be positive");
    }
    if (target_cool < target_warm) {
        throw InvalidArgument("calibrate_plant: cooling target must not be faster than warming");
    }
    gains.validate(env.tem.i_max);

    ClosedLoopOptions loop;
    loop.tick_hz = opts.tick_hz;
    loop.duration_s = opts.duration_s;
    loop.ambient_c = opts.ambient_c;

    const std::array<double, 3> lower = {std::log(opts.min_heat_capacity), std::log(opts.min_g_skin),
                                         std::log(opts.min_g_sink)};
    const std::array<double, 3> upper = {std::log(opts.max_heat_capacity), std::log(opts.max_g_skin),
                                         std::log(opts.max_g_sink)};

    auto model_at = [&](const std::array<double, 3>& x) {
        ChannelThermalModel m = base;
        m.heat_capacity = std::exp(x[0]);
        m.g_skin = std::exp(x[1]);
        m.g_sink = std::exp(x[2]);
        return m;
    };

    constexpr double kPenalty = 1e6;
    int evaluations = 0;
    struct Eval {
        double cost;
        double warm_err;
        double cool_err;
        RiseTimes rise;
    };
    auto evaluate = [&](const std::array<double, 3>& x) -> Eval {
        ++evaluations;
        const ChannelThermalModel m = model_at(x);
        const ChannelModels models = uniform_channel_models(m);
        const Eval infeasible{100 * kPenalty, 1e3, 1e3, {0, 0}};
        try {
            const StepTrace warm = simulate_closed_loop_step(models, env, gains, +opts.step_c, loop);
            const StepTrace cool = simulate_closed_loop_step(models, env, gains, -opts.step_c, loop);
            // Both steps must actually settle at the setpoint; a stalled
            // response would otherwise report a short rise time.
            // Infeasible candidates are ranked by their shortfall so the
            // search can walk back into the feasible region.
            constexpr double kSettleSlack = 0.5;
            const double miss = std::max(0.0, std::abs(warm.mean_cold.back() - (opts.ambient_c + opts.step_c)) -
                                                  kSettleSlack) +
                                std::max(0.0, std::abs(cool.mean_cold.back() - (opts.ambient_c - opts.step_c)) -
                                                  kSettleSlack);
            if (miss > 0) return {kPenalty * (1.0 + miss), 1e3, 1e3, {0, 0}};
            const RiseTimes r{step_response_metrics(warm.mean_cold, warm.sample_period).rise_time,
                              step_response_metrics(cool.mean_cold, cool.sample_period).rise_time};
            if (!(r.warm > 0) || !(r.cool > 0)) return infeasible;
            if (opts.required_range_c > 0) {
                const SteadyStateRange range = steady_state_range(m, env);
                const double short_c =
                    std::max(0.0, range.coldest_c - (opts.ambient_c - opts.required_range_c)) +
                    std::max(0.0, (opts.ambient_c + opts.required_range_c) - range.warmest_c);
                if (short_c > 0) return {kPenalty * (1.0 + short_c), 1e3, 1e3, {0, 0}};
            }
            const double lw = std::log(r.warm / target_warm);
            const double lc = std::log(r.cool / target_cool);
            return {lw * lw + lc * lc, std::abs(r.warm / target_warm - 1.0),
                    std::abs(r.cool / target_cool - 1.0), r};
        } catch (const SimulationDiverged&) {
            return infeasible;
        } catch (const InvalidArgument&) {
            return infeasible;
        }
    };
    auto within = [](const Eval& e, double tol) { return e.warm_err <= tol && e.cool_err <= tol; };

    std::mt19937_64 rng(opts.seed);
    auto uniform = [&](double a, double b) {
        return a + (b - a) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    };

    std::array<double, 3> best_x{};
    Eval best{std::numeric_limits<double>::infinity(), 1e3, 1e3, {0, 0}};

    for (int start = 0; start < std::max(1, opts.restarts); ++start) {
        std::array<double, 3> x;
        if (start == 0) {
            x = {std::log(std::clamp(base.heat_capacity, opts.min_heat_capacity, opts.max_heat_capacity)),
                 std::log(std::clamp(base.g_skin, opts.min_g_skin, opts.max_g_skin)),
                 std::log(std::clamp(base.g_sink, opts.min_g_sink, opts.max_g_sink))};
        } else {
            for (int d = 0; d < 3; ++d) x[d] = uniform(lower[d], upper[d]);
        }
        // Hooke-Jeeves: exploratory coordinate moves, then a pattern move
        // along the accumulated direction while it keeps helping.
        Eval current = evaluate(x);
        double step = 0.4;
        auto explore = [&](std::array<double, 3> base_x, Eval base_e) {
            for (int d = 0; d < 3; ++d) {
                for (double dir : {+1.0, -1.0}) {
                    std::array<double, 3> trial = base_x;
                    trial[d] = std::clamp(trial[d] + dir * step, lower[d], upper[d]);
                    if (trial[d] == base_x[d]) continue;
                    const Eval e = evaluate(trial);
                    if (e.cost < base_e.cost) {
                        base_x = trial;
                        base_e = e;
                        break;
                    }
                }
            }
            return std::pair{base_x, base_e};
        };
        while (step > 0.004 && !within(current, opts.goal)) {
            auto [nx, ne] = explore(x, current);
            if (!(ne.cost < current.cost)) {
                step *= 0.5;
                continue;
            }
            while (!within(ne, opts.goal)) {
                std::array<double, 3> jump;
                for (int d = 0; d < 3; ++d) jump[d] = std::clamp(2.0 * nx[d] - x[d], lower[d], upper[d]);
                x = nx;
                current = ne;
                auto [px, pe] = explore(jump, evaluate(jump));
                if (!(pe.cost < current.cost)) break;
                nx = px;
                ne = pe;
            }
            if (ne.cost < current.cost) {
                x = nx;
                current = ne;
            }
        }
        if (current.cost < best.cost) {
            best = current;
            best_x = x;
        }
        if (within(best, opts.goal)) break;
    }

    if (!within(best, opts.tolerance)) {
        throw CalibrationFailed("calibrate_plant: no model within tolerance (warm error " +
                                    std::to_string(best.warm_err) + ", cool error " +
                                    std::to_string(best.cool_err) + ")",
                                best.warm_err, best.cool_err);
    }
    CalibrationReport report;
    report.model = model_at(best_x);
    report.warm_rise_s = best.rise.warm;
    report.cool_rise_s = best.rise.cool;
    report.evaluations = evaluations;
    return report;
}

}  // namespace thermopalm
