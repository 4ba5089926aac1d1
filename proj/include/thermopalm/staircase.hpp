#pragma once

#include <string>
#include <vector>

namespace thermopalm {

enum class Polarity { warm, cool };
enum class Response { none, same, different };

std::string to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);
std::string to_string(Response r);
Response response_from_string(const std::string& s);

inline double polarity_sign(Polarity p) { return p == Polarity::warm ? 1.0 : -1.0; }

/// Weighted one-up/one-down staircase. "different" shrinks the step,
/// "same" grows it.
struct StaircaseConfig {
    double ambient_c = 30.0;
    double reference_offset_c = 4.0;
    double initial_step_c = 4.0;
    double down_factor = 0.9;
    double up_factor = 1.3;
    int reversals_to_stop = 10;
    int reversals_averaged = 8;
    double stimulus_duration_s = 3.5;
    double isi_s = 0.0;
    std::string pattern = "line";
    Polarity polarity = Polarity::warm;
    double step_floor_c = 0.1;
    double step_ceiling_c = 11.0;  // envelope minus reference offset

    void validate() const;
};

struct StaircaseState {
    double current_step = 0.0;
    int trial_count = 0;
    Response last_response = Response::none;
    std::vector<double> reversal_steps;
    bool finished = false;

    static StaircaseState start(const StaircaseConfig& cfg);
    int reversals() const { return static_cast<int>(reversal_steps.size()); }
};

struct StimulusPair {
    double reference_c;
    double test_c;
    double delta_c() const { return test_c - reference_c; }
};

/// Throws InvalidArgument on a finished staircase.
StimulusPair staircase_next_stimulus(const StaircaseConfig& cfg, const StaircaseState& st);

/// One response. A reversal is a change of response relative to the
/// previous trial; it records the step that was presented.
StaircaseState staircase_update(const StaircaseConfig& cfg, const StaircaseState& st, Response response);

/// Mean of the last reversals_averaged reversal steps. Throws
/// InvalidArgument if the staircase has not finished.
double jnd_estimate(const StaircaseConfig& cfg, const StaircaseState& st);

/// Probability at which the multiplicative up/down rule is at equilibrium:
/// p * ln(down) + (1 - p) * ln(up) = 0.
double staircase_equilibrium(const StaircaseConfig& cfg);

}  // namespace thermopalm
