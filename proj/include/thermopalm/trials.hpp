#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "thermopalm/staircase.hpp"

namespace thermopalm {

/// Seeded Fisher-Yates; the same seed gives the same order on every
/// platform.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do x = rng();
        while (x >= limit);
        std::swap(items[i - 1], items[static_cast<std::size_t>(x % bound)]);
    }
}

enum class Comparison { real_vs_virtual, bare_vs_device };
std::string to_string(Comparison c);
Comparison comparison_from_string(const std::string& s);

struct Exp2Config {
    int repetitions = 10;                         // per condition cell
    double base_offset_c = 8.0;                   // object temperature vs ambient
    std::vector<double> different_deltas_c{2.0, 4.0};  // cycled over "different" trials
    double contact_s = 3.0;                       // per object

    void validate() const;
};

struct Exp2Trial {
    int index;
    Comparison comparison;
    Polarity polarity;
    double first_c;   // real object (or bare-hand touch)
    double second_c;  // virtual replica (or device touch)
    bool equal;
};

/// Four condition cells (comparison x polarity), each with `repetitions`
/// trials split evenly between equal and different objects, shuffled.
std::vector<Exp2Trial> exp2_trial_table(const Exp2Config& cfg, double ambient_c, std::uint64_t seed);

struct Exp3Config {
    int catch_trials_per_polarity = 6;
    double offset_c = 8.0;
    double hold_s = 3.0;

    void validate() const;
};

struct Exp3Trial {
    int index;
    Polarity polarity;
    std::string first;
    std::string second;
    bool changed;
};

/// The 30 ordered pairs of distinct Exp-3 patterns plus catch (same-pattern)
/// trials, for each polarity, shuffled together.
std::vector<Exp3Trial> exp3_pair_table(const Exp3Config& cfg, std::uint64_t seed);

/// The six row/column pattern names used by Exp 3.
const std::vector<std::string>& exp3_pattern_names();

/// One line of trials.jsonl.
struct TrialRecord {
    static constexpr int kSchema = 1;
    std::string session_id;
    std::string participant_id;
    std::string experiment;
    std::uint64_t seed = 0;
    int trial_index = 0;
    nlohmann::ordered_json condition = nlohmann::ordered_json::object();
    nlohmann::ordered_json stimulus = nlohmann::ordered_json::object();
    std::string response = "none";
    std::optional<bool> ground_truth_different;
    std::optional<bool> correct;
    double response_time_s = 0.0;
    double session_time_s = 0.0;       // monotonic session clock
    std::optional<std::string> wall_clock;  // kept apart so replays compare equal

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

nlohmann::ordered_json to_json(const TrialRecord& r);
TrialRecord trial_record_from_json(const nlohmann::ordered_json& j);

}  // namespace thermopalm
