#include "thermopalm/trials.hpp"

#include <cmath>

#include "thermopalm/errors.hpp"

namespace thermopalm {

std::string to_string(Comparison c) { return c == Comparison::real_vs_virtual ? "real_vs_virtual" : "bare_vs_device"; }

Comparison comparison_from_string(const std::string& s) {
    if (s == "real_vs_virtual") return Comparison::real_vs_virtual;
    if (s == "bare_vs_device") return Comparison::bare_vs_device;
    throw InvalidArgument("unknown comparison \"" + s + "\"");
}

void Exp2Config::validate() const {
    if (repetitions < 2) throw InvalidArgument("exp2: repetitions must be >= 2");
    if (!(base_offset_c > 0)) throw InvalidArgument("exp2: base_offset_c must be positive");
    if (different_deltas_c.empty()) throw InvalidArgument("exp2: need at least one delta");
    for (double d : different_deltas_c)
        if (!(d > 0)) throw InvalidArgument("exp2: deltas must be positive");
    if (!(contact_s > 0)) throw InvalidArgument("exp2: contact_s must be positive");
}

std::vector<Exp2Trial> exp2_trial_table(const Exp2Config& cfg, double ambient_c, std::uint64_t seed) {
    cfg.validate();
    std::vector<Exp2Trial> trials;
    int cell = 0;
    std::size_t delta_idx = 0;
    for (Comparison c : {Comparison::real_vs_virtual, Comparison::bare_vs_device}) {
        for (Polarity p : {Polarity::warm, Polarity::cool}) {
            // Odd repetitions alternate the extra trial between cells.
            const int equal = cfg.repetitions / 2 + ((cfg.repetitions % 2 == 1 && cell % 2 == 1) ? 1 : 0);
            const double first = ambient_c + polarity_sign(p) * cfg.base_offset_c;
            for (int r = 0; r < cfg.repetitions; ++r) {
                Exp2Trial t{0, c, p, first, first, r < equal};
                if (!t.equal) {
                    const double delta = cfg.different_deltas_c[delta_idx++ % cfg.different_deltas_c.size()];
                    // Alternate closer to / farther from ambient.
                    t.second_c = first + (r % 2 == 0 ? delta : -delta) * polarity_sign(p);
                }
                trials.push_back(t);
            }
            ++cell;
        }
    }
    std::mt19937_64 rng(seed);
    seeded_shuffle(trials, rng);
    for (std::size_t i = 0; i < trials.size(); ++i) trials[i].index = static_cast<int>(i);
    return trials;
}

const std::vector<std::string>& exp3_pattern_names() {
    static const std::vector<std::string> names{"top_row",     "middle_row",    "bottom_row",
                                                "left_column", "middle_column", "right_column"};
    return names;
}

void Exp3Config::validate() const {
    if (catch_trials_per_polarity < 0) throw InvalidArgument("exp3: catch trials must be >= 0");
    if (!(std::abs(offset_c) > 0 && std::abs(offset_c) <= 15.0)) throw InvalidArgument("exp3: offset outside envelope");
    if (!(hold_s > 0)) throw InvalidArgument("exp3: hold_s must be positive");
}

std::vector<Exp3Trial> exp3_pair_table(const Exp3Config& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto& names = exp3_pattern_names();
    std::vector<Exp3Trial> trials;
    for (Polarity p : {Polarity::warm, Polarity::cool}) {
        for (const auto& a : names)
            for (const auto& b : names)
                if (a != b) trials.push_back({0, p, a, b, true});
        for (int c = 0; c < cfg.catch_trials_per_polarity; ++c) {
            const auto& n = names[static_cast<std::size_t>(c) % names.size()];
            trials.push_back({0, p, n, n, false});
        }
    }
    std::mt19937_64 rng(seed);
    seeded_shuffle(trials, rng);
    for (std::size_t i = 0; i < trials.size(); ++i) trials[i].index = static_cast<int>(i);
    return trials;
}

nlohmann::ordered_json to_json(const TrialRecord& r) {
    nlohmann::ordered_json j;
    j["schema"] = TrialRecord::kSchema;
    j["session_id"] = r.session_id;
    j["participant_id"] = r.participant_id;
    j["experiment"] = r.experiment;
    j["seed"] = r.seed;
    j["trial_index"] = r.trial_index;
    j["condition"] = r.condition;
    j["stimulus"] = r.stimulus;
    j["response"] = r.response;
    j["ground_truth_different"] = r.ground_truth_different ? nlohmann::ordered_json(*r.ground_truth_different) : nullptr;
    j["correct"] = r.correct ? nlohmann::ordered_json(*r.correct) : nullptr;
    j["response_time_s"] = r.response_time_s;
    j["session_time_us"] = static_cast<std::int64_t>(std::llround(r.session_time_s * 1e6));
    j["wall_clock"] = r.wall_clock ? nlohmann::ordered_json(*r.wall_clock) : nullptr;
    return j;
}

TrialRecord trial_record_from_json(const nlohmann::ordered_json& j) {
    try {
        if (j.at("schema").get<int>() != TrialRecord::kSchema) throw SchemaError("schema", "unsupported schema version");
        TrialRecord r;
        r.session_id = j.at("session_id").get<std::string>();
        r.participant_id = j.at("participant_id").get<std::string>();
        r.experiment = j.at("experiment").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.trial_index = j.at("trial_index").get<int>();
        r.condition = j.at("condition");
        r.stimulus = j.at("stimulus");
        r.response = j.at("response").get<std::string>();
        if (!j.at("ground_truth_different").is_null()) r.ground_truth_different = j["ground_truth_different"].get<bool>();
        if (!j.at("correct").is_null()) r.correct = j["correct"].get<bool>();
        r.response_time_s = j.at("response_time_s").get<double>();
        r.session_time_s = j.at("session_time_us").get<std::int64_t>() / 1e6;
        if (j.contains("wall_clock") && !j["wall_clock"].is_null()) r.wall_clock = j["wall_clock"].get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("", std::string("trial record: ") + e.what());
    }
}

}  // namespace thermopalm
