#include "thermopalm/staircase.hpp"

#include <algorithm>
#include <cmath>

#include "thermopalm/errors.hpp"

namespace thermopalm {

std::string to_string(Polarity p) { return p == Polarity::warm ? "warm" : "cool"; }

Polarity polarity_from_string(const std::string& s) {
    if (s == "warm") return Polarity::warm;
    if (s == "cool") return Polarity::cool;
    throw InvalidArgument("polarity must be \"warm\" or \"cool\", got \"" + s + "\"");
}

std::string to_string(Response r) {
    switch (r) {
        case Response::same: return "same";
        case Response::different: return "different";
        case Response::none: break;
    }
    return "none";
}

Response response_from_string(const std::string& s) {
    if (s == "same") return Response::same;
    if (s == "different") return Response::different;
    throw InvalidArgument("response must be \"same\" or \"different\", got \"" + s + "\"");
}

void StaircaseConfig::validate() const {
    if (!(down_factor > 0 && down_factor < 1)) throw InvalidArgument("staircase: need 0 < down_factor < 1");
    if (!(up_factor > 1)) throw InvalidArgument("staircase: need up_factor > 1");
    if (reversals_to_stop < 1) throw InvalidArgument("staircase: reversals_to_stop must be >= 1");
    if (reversals_averaged < 1 || reversals_averaged > reversals_to_stop)
        throw InvalidArgument("staircase: need 1 <= reversals_averaged <= reversals_to_stop");
    if (!(step_floor_c > 0)) throw InvalidArgument("staircase: step floor must be positive");
    if (!(step_ceiling_c >= step_floor_c)) throw InvalidArgument("staircase: step ceiling below floor");
    if (!(initial_step_c >= step_floor_c && initial_step_c <= step_ceiling_c))
        throw InvalidArgument("staircase: initial step outside [floor, ceiling]");
    if (!(reference_offset_c >= 0)) throw InvalidArgument("staircase: reference offset must be >= 0");
    if (!(stimulus_duration_s > 0) || !(isi_s >= 0)) throw InvalidArgument("staircase: bad timing");
}

StaircaseState StaircaseState::start(const StaircaseConfig& cfg) {
    cfg.validate();
    StaircaseState st;
    st.current_step = cfg.initial_step_c;
    return st;
}

StimulusPair staircase_next_stimulus(const StaircaseConfig& cfg, const StaircaseState& st) {
    if (st.finished) throw InvalidArgument("staircase already finished");
    const double sign = polarity_sign(cfg.polarity);
    const double reference = cfg.ambient_c + sign * cfg.reference_offset_c;
    return {reference, reference + sign * st.current_step};
}

StaircaseState staircase_update(const StaircaseConfig& cfg, const StaircaseState& st, Response response) {
    if (st.finished) throw InvalidArgument("staircase already finished");
    if (response == Response::none) throw InvalidArgument("staircase: response required");
    StaircaseState next = st;
    ++next.trial_count;
    if (st.last_response != Response::none && response != st.last_response) {
        next.reversal_steps.push_back(st.current_step);
        if (next.reversals() >= cfg.reversals_to_stop) next.finished = true;
    }
    const double factor = response == Response::different ? cfg.down_factor : cfg.up_factor;
    next.current_step = std::clamp(st.current_step * factor, cfg.step_floor_c, cfg.step_ceiling_c);
    next.last_response = response;
    return next;
}

double jnd_estimate(const StaircaseConfig& cfg, const StaircaseState& st) {
    if (!st.finished) throw InvalidArgument("jnd_estimate: staircase not finished");
    const auto n = static_cast<std::size_t>(cfg.reversals_averaged);
    double sum = 0.0;
    for (std::size_t i = st.reversal_steps.size() - n; i < st.reversal_steps.size(); ++i) sum += st.reversal_steps[i];
    return sum / static_cast<double>(n);
}

double staircase_equilibrium(const StaircaseConfig& cfg) {
    const double up = std::log(cfg.up_factor);
    const double down = -std::log(cfg.down_factor);
    return up / (up + down);
}

}  // namespace thermopalm
