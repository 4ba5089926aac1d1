#include "thermopalm/session.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "thermopalm/errors.hpp"
#include "thermopalm/pattern.hpp"
#include "thermopalm/stats.hpp"

namespace thermopalm {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

double round3(double v) { return std::isfinite(v) ? std::round(v * 1000.0) / 1000.0 : v; }

ojson cells_json(const CellArray& a) {
    ojson arr = ojson::array();
    for (double v : a) {
        if (std::isfinite(v))
            arr.push_back(round3(v));
        else
            arr.push_back(nullptr);
    }
    return arr;
}

std::int64_t to_us(double t_s) { return std::llround(t_s * 1e6); }

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// ------------------------------------------------------------ config parsing

class Reader {
public:
    std::vector<std::string> errors;

    void only(const ojson& obj, const std::string& path, std::initializer_list<const char*> keys) {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool known = false;
            for (const char* k : keys) known = known || it.key() == k;
            if (!known) errors.push_back(join(path, it.key()) + ": unknown key");
        }
    }

    const ojson* object(const ojson& obj, const std::string& path, const char* key) {
        if (!obj.contains(key)) return nullptr;
        const auto& v = obj.at(key);
        if (!v.is_object()) {
            errors.push_back(join(path, key) + ": expected an object");
            return nullptr;
        }
        return &v;
    }

    void number(const ojson& obj, const std::string& path, const char* key, double& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj.at(key);
        if (!v.is_number())
            errors.push_back(join(path, key) + ": expected a number");
        else
            out = v.get<double>();
    }

    template <typename Int>
    void integer(const ojson& obj, const std::string& path, const char* key, Int& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj.at(key);
        if (!v.is_number_integer() || (std::is_unsigned_v<Int> && v.is_number_integer() && !v.is_number_unsigned() &&
                                       v.get<std::int64_t>() < 0))
            errors.push_back(join(path, key) + ": expected a non-negative integer");
        else
            out = v.get<Int>();
    }

    void string(const ojson& obj, const std::string& path, const char* key, std::string& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj.at(key);
        if (!v.is_string())
            errors.push_back(join(path, key) + ": expected a string");
        else
            out = v.get<std::string>();
    }

    void boolean(const ojson& obj, const std::string& path, const char* key, bool& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj.at(key);
        if (!v.is_boolean())
            errors.push_back(join(path, key) + ": expected true or false");
        else
            out = v.get<bool>();
    }

    template <typename F>
    void guarded(const std::string& what, F&& f) {
        try {
            f();
        } catch (const ValidationErrors& e) {
            for (const auto& p : e.problems()) errors.push_back(p);
        } catch (const Error& e) {
            std::string msg = e.what();
            if (msg.rfind(what + ": ", 0) == 0) msg.erase(0, what.size() + 2);
            const auto line = what + ": " + msg;
            if (std::find(errors.begin(), errors.end(), line) == errors.end()) errors.push_back(line);
        }
    }

    // Validate one field at a time against defaults so every bad field is reported.
    template <typename T, typename... Set>
    void per_field(const std::string& what, Set&&... set) {
        (guarded(what, [&] {
             T probe{};
             set(probe);
             probe.validate();
         }),
         ...);
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }
};

void parse_device(Reader& r, const ojson& j, DeviceConfig& d) {
    r.only(j, "device", {"ambient_c", "safety_envelope_c", "backend", "telemetry_hz", "tick_hz", "passthrough_tau_s"});
    r.number(j, "device", "ambient_c", d.ambient_c);
    r.number(j, "device", "safety_envelope_c", d.safety_envelope_c);
    r.number(j, "device", "telemetry_hz", d.telemetry_hz);
    r.number(j, "device", "tick_hz", d.tick_hz);
    r.number(j, "device", "passthrough_tau_s", d.passthrough_tau_s);
    std::string backend = to_string(d.backend);
    r.string(j, "device", "backend", backend);
    r.guarded("device.backend", [&] { d.backend = backend_kind_from_string(backend); });
}

void parse_gains(Reader& r, const ojson& j, PidGains& g) {
    r.only(j, "gains", {"kp", "ki", "kd", "output_limit_a", "integral_limit_a"});
    r.number(j, "gains", "kp", g.kp);
    r.number(j, "gains", "ki", g.ki);
    r.number(j, "gains", "kd", g.kd);
    r.number(j, "gains", "output_limit_a", g.output_limit);
    r.number(j, "gains", "integral_limit_a", g.integral_limit);
}

void parse_observer(Reader& r, const ojson& j, ObserverModel& m) {
    r.only(j, "observer", {"threshold_mu", "slope_sigma", "lapse_rate", "guess_rate"});
    r.number(j, "observer", "threshold_mu", m.threshold_mu);
    r.number(j, "observer", "slope_sigma", m.slope_sigma);
    r.number(j, "observer", "lapse_rate", m.lapse_rate);
    r.number(j, "observer", "guess_rate", m.guess_rate);
}

void parse_exp1(Reader& r, const ojson& j, Exp1Params& p) {
    const std::string path = "exp1";
    r.only(j, path,
           {"conditions", "reference_offset_c", "initial_step_c", "down_factor", "up_factor", "reversals_to_stop",
            "reversals_averaged", "stimulus_duration_s", "isi_s", "step_floor_c", "step_ceiling_c", "rest_s",
            "max_trials"});
    if (j.contains("conditions")) {
        const auto& c = j.at("conditions");
        if (!c.is_array() || c.empty()) {
            r.errors.push_back("exp1.conditions: expected a non-empty array");
        } else {
            p.conditions.clear();
            for (std::size_t i = 0; i < c.size(); ++i) {
                const std::string cp = "exp1.conditions[" + std::to_string(i) + "]";
                if (!c[i].is_object()) {
                    r.errors.push_back(cp + ": expected an object");
                    continue;
                }
                r.only(c[i], cp, {"pattern", "polarity"});
                Exp1Condition cond{"line", Polarity::warm};
                std::string pol = "warm";
                r.string(c[i], cp, "pattern", cond.pattern);
                r.string(c[i], cp, "polarity", pol);
                r.guarded(cp + ".polarity", [&] { cond.polarity = polarity_from_string(pol); });
                p.conditions.push_back(cond);
            }
        }
    }
    auto& s = p.staircase;
    r.number(j, path, "reference_offset_c", s.reference_offset_c);
    r.number(j, path, "initial_step_c", s.initial_step_c);
    r.number(j, path, "down_factor", s.down_factor);
    r.number(j, path, "up_factor", s.up_factor);
    r.integer(j, path, "reversals_to_stop", s.reversals_to_stop);
    r.integer(j, path, "reversals_averaged", s.reversals_averaged);
    r.number(j, path, "stimulus_duration_s", s.stimulus_duration_s);
    r.number(j, path, "isi_s", s.isi_s);
    r.number(j, path, "step_floor_c", s.step_floor_c);
    r.number(j, path, "step_ceiling_c", s.step_ceiling_c);
    r.number(j, path, "rest_s", p.rest_s);
    r.integer(j, path, "max_trials", p.max_trials);
}

void parse_exp2(Reader& r, const ojson& j, Exp2Params& p) {
    r.only(j, "exp2", {"repetitions", "base_offset_c", "different_deltas_c", "contact_s", "rest_s"});
    r.integer(j, "exp2", "repetitions", p.table.repetitions);
    r.number(j, "exp2", "base_offset_c", p.table.base_offset_c);
    r.number(j, "exp2", "contact_s", p.table.contact_s);
    r.number(j, "exp2", "rest_s", p.rest_s);
    if (j.contains("different_deltas_c")) {
        const auto& d = j.at("different_deltas_c");
        if (!d.is_array()) {
            r.errors.push_back("exp2.different_deltas_c: expected an array of numbers");
        } else {
            p.table.different_deltas_c.clear();
            for (const auto& v : d) {
                if (!v.is_number()) {
                    r.errors.push_back("exp2.different_deltas_c: expected an array of numbers");
                    break;
                }
                p.table.different_deltas_c.push_back(v.get<double>());
            }
        }
    }
}

void parse_exp3(Reader& r, const ojson& j, Exp3Params& p) {
    r.only(j, "exp3", {"catch_trials_per_polarity", "offset_c", "hold_s", "rest_s"});
    r.integer(j, "exp3", "catch_trials_per_polarity", p.table.catch_trials_per_polarity);
    r.number(j, "exp3", "offset_c", p.table.offset_c);
    r.number(j, "exp3", "hold_s", p.table.hold_s);
    r.number(j, "exp3", "rest_s", p.rest_s);
}

void parse_exp4(Reader& r, const ojson& j, Exp4Params& p) {
    r.only(j, "exp4", {"velocity_m_s", "offset_c", "row", "dwell_factor", "reverse", "repetitions", "window_s"});
    r.number(j, "exp4", "velocity_m_s", p.velocity_m_s);
    r.number(j, "exp4", "offset_c", p.offset_c);
    r.integer(j, "exp4", "row", p.row);
    r.number(j, "exp4", "dwell_factor", p.dwell_factor);
    r.boolean(j, "exp4", "reverse", p.reverse);
    r.integer(j, "exp4", "repetitions", p.repetitions);
    r.number(j, "exp4", "window_s", p.window_s);
}

std::vector<std::string> semantic_problems(const SessionConfig& c) {
    Reader r;
    if (c.session_id.empty()) r.errors.push_back("session_id: must not be empty");
    if (c.participant_id.empty()) r.errors.push_back("participant_id: must not be empty");
    if (c.output_dir.empty()) r.errors.push_back("output_dir: must not be empty");
    const auto& dv = c.device;
    r.per_field<DeviceConfig>(
        "device", [&](DeviceConfig& d) { d.ambient_c = dv.ambient_c; },
        [&](DeviceConfig& d) { d.safety_envelope_c = dv.safety_envelope_c; },
        [&](DeviceConfig& d) { d.tick_hz = dv.tick_hz; d.telemetry_hz = std::min(d.telemetry_hz, dv.tick_hz); },
        [&](DeviceConfig& d) {
            if (dv.tick_hz > 0) d.tick_hz = dv.tick_hz;
            d.telemetry_hz = dv.telemetry_hz;
        },
        [&](DeviceConfig& d) { d.passthrough_tau_s = dv.passthrough_tau_s; });
    r.guarded("device", [&] { c.device.validate(); });
    r.guarded("gains", [&] { c.gains.validate(TemParams::device_default().i_max); });
    if (c.plant_model_file) {
        if (!fs::exists(*c.plant_model_file))
            r.errors.push_back("plant.model_file: " + *c.plant_model_file + " does not exist");
        else
            r.guarded("plant.model_file", [&] { load_plant_model_file(*c.plant_model_file); });
    }
    if (!(c.channel_spread >= 0.0 && c.channel_spread < 1.0))
        r.errors.push_back("plant.channel_spread: must be in [0, 1)");
    const auto& ob = c.observer;
    r.per_field<ObserverModel>(
        "observer", [&](ObserverModel& m) { m.threshold_mu = ob.threshold_mu; },
        [&](ObserverModel& m) { m.slope_sigma = ob.slope_sigma; },
        [&](ObserverModel& m) { m.lapse_rate = ob.lapse_rate; },
        [&](ObserverModel& m) { m.guess_rate = ob.guess_rate; });
    static const std::set<std::string> experiments{"exp1", "exp2", "exp3", "exp4"};
    if (!experiments.count(c.experiment))
        r.errors.push_back("experiment: must be one of exp1, exp2, exp3, exp4 (got \"" + c.experiment + "\")");

    const double env = c.device.safety_envelope_c;
    for (std::size_t i = 0; i < c.exp1.conditions.size(); ++i) {
        const auto& cond = c.exp1.conditions[i];
        if (!find_canonical_pattern(cond.pattern))
            r.errors.push_back("exp1.conditions[" + std::to_string(i) + "].pattern: unknown pattern \"" +
                               cond.pattern + "\"");
    }
    r.guarded("exp1", [&] { c.exp1.staircase.validate(); });
    if (c.exp1.staircase.reference_offset_c + c.exp1.staircase.step_ceiling_c > env + 1e-9)
        r.errors.push_back("exp1: reference_offset_c + step_ceiling_c exceeds the safety envelope");
    if (!(c.exp1.rest_s >= 0)) r.errors.push_back("exp1.rest_s: must be >= 0");
    if (c.exp1.max_trials < 1) r.errors.push_back("exp1.max_trials: must be >= 1");

    r.guarded("exp2", [&] { c.exp2.table.validate(); });
    if (!(c.exp2.rest_s >= 0)) r.errors.push_back("exp2.rest_s: must be >= 0");
    {
        double biggest = 0;
        for (double d : c.exp2.table.different_deltas_c) biggest = std::max(biggest, std::abs(d));
        if (c.exp2.table.base_offset_c + biggest > env + 1e-9)
            r.errors.push_back("exp2: base_offset_c plus the largest delta exceeds the safety envelope");
    }
    r.guarded("exp3", [&] { c.exp3.table.validate(); });
    if (c.exp3.table.offset_c > env) r.errors.push_back("exp3.offset_c: exceeds the safety envelope");
    if (!(c.exp3.rest_s >= 0)) r.errors.push_back("exp3.rest_s: must be >= 0");

    const auto& e4 = c.exp4;
    if (!(e4.velocity_m_s > 0)) r.errors.push_back("exp4.velocity_m_s: must be positive");
    if (!(std::abs(e4.offset_c) <= env)) r.errors.push_back("exp4.offset_c: exceeds the safety envelope");
    if (e4.row >= kRows) r.errors.push_back("exp4.row: must be 0, 1 or 2");
    if (!(e4.dwell_factor > 0)) r.errors.push_back("exp4.dwell_factor: must be positive");
    if (e4.repetitions < 1) r.errors.push_back("exp4.repetitions: must be >= 1");
    if (!(e4.window_s > 0)) r.errors.push_back("exp4.window_s: must be positive");
    return r.errors;
}

}  // namespace

void SessionConfig::validate() const {
    auto problems = semantic_problems(*this);
    if (!problems.empty()) throw ValidationErrors(std::move(problems));
}

ChannelThermalModel SessionConfig::plant_model() const {
    ChannelThermalModel m = plant_model_file ? load_plant_model_file(*plant_model_file) : ChannelThermalModel{};
    m.skin_core_temp = device.ambient_c;
    return m;
}

SessionConfig session_config_from_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationErrors({std::string("config is not valid JSON: ") + e.what()});
    }
    if (!j.is_object()) throw ValidationErrors({"config: expected a JSON object"});

    SessionConfig c;
    Reader r;
    r.only(j, "",
           {"schema", "session_id", "participant_id", "seed", "output_dir", "device", "gains", "plant", "observer",
            "experiment", "exp1", "exp2", "exp3", "exp4"});
    if (!j.contains("schema"))
        r.errors.push_back("schema: missing (expected 1)");
    else if (!j.at("schema").is_number_integer() || j.at("schema").get<int>() != kArtifactSchema)
        r.errors.push_back("schema: unsupported version (expected 1)");
    r.string(j, "", "session_id", c.session_id);
    r.string(j, "", "participant_id", c.participant_id);
    r.integer(j, "", "seed", c.seed);
    r.string(j, "", "output_dir", c.output_dir);
    r.string(j, "", "experiment", c.experiment);
    if (auto* d = r.object(j, "", "device")) parse_device(r, *d, c.device);
    if (auto* g = r.object(j, "", "gains")) parse_gains(r, *g, c.gains);
    if (auto* p = r.object(j, "", "plant")) {
        r.only(*p, "plant", {"model_file", "channel_spread"});
        if (p->contains("model_file") && !p->at("model_file").is_null()) {
            std::string f;
            r.string(*p, "plant", "model_file", f);
            c.plant_model_file = f;
        }
        r.number(*p, "plant", "channel_spread", c.channel_spread);
    }
    if (auto* o = r.object(j, "", "observer")) parse_observer(r, *o, c.observer);
    if (auto* e = r.object(j, "", "exp1")) parse_exp1(r, *e, c.exp1);
    if (auto* e = r.object(j, "", "exp2")) parse_exp2(r, *e, c.exp2);
    if (auto* e = r.object(j, "", "exp3")) parse_exp3(r, *e, c.exp3);
    if (auto* e = r.object(j, "", "exp4")) parse_exp4(r, *e, c.exp4);

    auto problems = r.errors;
    for (auto& p : semantic_problems(c)) problems.push_back(std::move(p));
    if (!problems.empty()) throw ValidationErrors(std::move(problems));
    return c;
}

SessionConfig load_session_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationErrors({"config: cannot open " + path});
    std::stringstream ss;
    ss << in.rdbuf();
    return session_config_from_json(ss.str());
}

ojson to_json(const SessionConfig& c) {
    ojson j;
    j["schema"] = kArtifactSchema;
    j["session_id"] = c.session_id;
    j["participant_id"] = c.participant_id;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["experiment"] = c.experiment;
    j["device"] = {{"ambient_c", c.device.ambient_c},
                   {"safety_envelope_c", c.device.safety_envelope_c},
                   {"backend", to_string(c.device.backend)},
                   {"telemetry_hz", c.device.telemetry_hz},
                   {"tick_hz", c.device.tick_hz},
                   {"passthrough_tau_s", c.device.passthrough_tau_s}};
    j["gains"] = {{"kp", c.gains.kp},
                  {"ki", c.gains.ki},
                  {"kd", c.gains.kd},
                  {"output_limit_a", c.gains.output_limit},
                  {"integral_limit_a", c.gains.integral_limit}};
    j["plant"] = {{"model_file", c.plant_model_file ? ojson(*c.plant_model_file) : ojson(nullptr)},
                  {"channel_spread", c.channel_spread}};
    j["observer"] = {{"threshold_mu", c.observer.threshold_mu},
                     {"slope_sigma", c.observer.slope_sigma},
                     {"lapse_rate", c.observer.lapse_rate},
                     {"guess_rate", c.observer.guess_rate}};
    ojson conds = ojson::array();
    for (const auto& cond : c.exp1.conditions)
        conds.push_back({{"pattern", cond.pattern}, {"polarity", to_string(cond.polarity)}});
    const auto& s = c.exp1.staircase;
    j["exp1"] = {{"conditions", conds},
                 {"reference_offset_c", s.reference_offset_c},
                 {"initial_step_c", s.initial_step_c},
                 {"down_factor", s.down_factor},
                 {"up_factor", s.up_factor},
                 {"reversals_to_stop", s.reversals_to_stop},
                 {"reversals_averaged", s.reversals_averaged},
                 {"stimulus_duration_s", s.stimulus_duration_s},
                 {"isi_s", s.isi_s},
                 {"step_floor_c", s.step_floor_c},
                 {"step_ceiling_c", s.step_ceiling_c},
                 {"rest_s", c.exp1.rest_s},
                 {"max_trials", c.exp1.max_trials}};
    j["exp2"] = {{"repetitions", c.exp2.table.repetitions},
                 {"base_offset_c", c.exp2.table.base_offset_c},
                 {"different_deltas_c", c.exp2.table.different_deltas_c},
                 {"contact_s", c.exp2.table.contact_s},
                 {"rest_s", c.exp2.rest_s}};
    j["exp3"] = {{"catch_trials_per_polarity", c.exp3.table.catch_trials_per_polarity},
                 {"offset_c", c.exp3.table.offset_c},
                 {"hold_s", c.exp3.table.hold_s},
                 {"rest_s", c.exp3.rest_s}};
    j["exp4"] = {{"velocity_m_s", c.exp4.velocity_m_s}, {"offset_c", c.exp4.offset_c},
                 {"row", c.exp4.row},                   {"dwell_factor", c.exp4.dwell_factor},
                 {"reverse", c.exp4.reverse},           {"repetitions", c.exp4.repetitions},
                 {"window_s", c.exp4.window_s}};
    return j;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

ojson to_json(const ArrayFrame& f) {
    ojson j;
    j["tick"] = f.tick_index;
    j["mode"] = to_string(f.mode);
    j["setpoints"] = cells_json(f.setpoints);
    j["measured"] = cells_json(f.measured);
    j["currents"] = cells_json(f.currents);
    j["external"] = cells_json(f.external);
    ojson faults = ojson::array();
    for (std::size_t k = 0; k < kCells; ++k)
        if (f.channel_faults.test(k)) faults.push_back(k);
    j["channel_faults"] = faults;
    j["clamp_events"] = f.clamp_events;
    j["device_fault"] = f.device_fault;
    j["warnings"] = f.warnings;
    return j;
}

// ---------------------------------------------------------------- SessionLog

SessionLog::SessionLog(const std::string& directory, std::string session_id, std::uint64_t seed)
    : dir_(directory), session_id_(std::move(session_id)), seed_(seed) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error("cannot create session directory " + dir_ + ": " + ec.message());
    events_.open(fs::path(dir_) / "events.jsonl", std::ios::trunc);
    trials_.open(fs::path(dir_) / "trials.jsonl", std::ios::trunc);
    telemetry_.open(fs::path(dir_) / "telemetry.jsonl", std::ios::trunc);
    if (!events_ || !trials_ || !telemetry_) throw Error("cannot open log files in " + dir_);
}

void SessionLog::event(double t_s, const std::string& kind, const ojson& payload) {
    std::lock_guard lock(mu_);
    ojson j;
    j["schema"] = kArtifactSchema;
    j["seed"] = seed_;
    j["seq"] = seq_++;
    j["t_us"] = to_us(t_s);
    j["kind"] = kind;
    j["payload"] = payload;
    events_ << j.dump() << '\n';
}

void SessionLog::trial(const TrialRecord& r) {
    std::lock_guard lock(mu_);
    trials_ << to_json(r).dump() << '\n';
}

void SessionLog::telemetry(double t_s, const ArrayFrame& f) {
    ojson j;
    j["schema"] = kArtifactSchema;
    j["seed"] = seed_;
    j["t_us"] = to_us(t_s);
    const ojson frame = to_json(f);
    for (auto it = frame.begin(); it != frame.end(); ++it) j[it.key()] = *it;
    j.erase("warnings");
    std::lock_guard lock(mu_);
    telemetry_ << j.dump() << '\n';
}

void SessionLog::write_summary(const ojson& summary) {
    std::lock_guard lock(mu_);
    std::ofstream out(fs::path(dir_) / "summary.json", std::ios::trunc);
    out << summary.dump(2) << '\n';
    if (!out) throw Error("cannot write summary.json in " + dir_);
}

void SessionLog::flush() {
    std::lock_guard lock(mu_);
    events_.flush();
    trials_.flush();
    telemetry_.flush();
}

std::uint64_t SessionLog::events_written() const {
    std::lock_guard lock(mu_);
    return seq_;
}

// --------------------------------------------------------------- simulation

namespace {

/// Simulated device plus its session clock, telemetry decimation and
/// clamp/fault edge events.
class Rig {
public:
    Rig(const SessionConfig& cfg, SessionLog& log) : cfg_(cfg), log_(log) {
        const auto models = spread_channel_models(cfg.plant_model(), cfg.channel_spread, derive_seed(cfg.seed, 3));
        auto backend = make_sim_backend(cfg.device, models, derive_seed(cfg.seed, 2));
        sim_ = backend.get();
        device_ = std::make_unique<Device>(cfg.device, std::move(backend), cfg.gains);
        telemetry_every_ =
            std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(cfg.device.tick_hz / cfg.device.telemetry_hz)));
    }

    double now() const { return static_cast<double>(ticks_) / cfg_.device.tick_hz; }
    std::size_t ticks_for(double s) const { return static_cast<std::size_t>(std::llround(s * cfg_.device.tick_hz)); }
    Device& device() { return *device_; }
    SimBackend& sim() { return *sim_; }
    double ambient() const { return cfg_.device.ambient_c; }

    void event(const std::string& kind, const ojson& payload) { log_.event(now(), kind, payload); }

    const ArrayFrame& tick() {
        const double t = now();
        const ArrayFrame& f = (device_->tick(), device_->last_frame());
        if (ticks_ % telemetry_every_ == 0) log_.telemetry(t, f);
        if (f.clamp_events > 0 && !clamping_)
            log_.event(t, "clamp", {{"tick", f.tick_index}, {"cells_clamped", f.clamp_events}});
        clamping_ = f.clamp_events > 0;
        if (f.channel_faults != faults_) {
            ojson cells = ojson::array();
            for (std::size_t k = 0; k < kCells; ++k)
                if (f.channel_faults.test(k)) cells.push_back(k);
            log_.event(t, "fault", {{"tick", f.tick_index}, {"kind", "channel"}, {"channels", cells}});
            faults_ = f.channel_faults;
        }
        if (f.device_fault && !device_fault_) {
            log_.event(t, "fault", {{"tick", f.tick_index}, {"kind", "device"}, {"warnings", f.warnings}});
            device_fault_ = true;
        }
        ++ticks_;
        if (device_fault_) throw BackendFault("device fault during session");
        return f;
    }

    /// Run n ticks; returns each cell's contact temperature averaged over
    /// the last `tail` ticks (skin-side truth from the simulated plant).
    CellArray run(std::size_t n, std::size_t tail) {
        tail = std::min(tail, n);
        CellArray acc{};
        for (std::size_t i = 0; i < n; ++i) {
            tick();
            if (i + tail >= n)
                for (std::size_t k = 0; k < kCells; ++k) acc[k] += sim_->state().t_cold[k];
        }
        if (tail > 0)
            for (auto& v : acc) v /= static_cast<double>(tail);
        return acc;
    }

    void rest(double seconds) {
        device_->cancel_program();
        device_->set_mode(DeviceMode::idle);
        sim_->set_external_constant(ambient());
        run(ticks_for(seconds), 0);
    }

private:
    const SessionConfig& cfg_;
    SessionLog& log_;
    SimBackend* sim_ = nullptr;
    std::unique_ptr<Device> device_;
    std::uint64_t ticks_ = 0;
    std::uint64_t telemetry_every_ = 1;
    bool clamping_ = false;
    CellSet faults_;
    bool device_fault_ = false;
};

struct Context {
    const SessionConfig& cfg;
    SessionLog& log;
    Rig& rig;
    SimulatedObserver observer;
    std::mt19937_64 rt_rng;
    int trial_index = 0;

    /// Response latency, quantized to whole ticks and spent at rest.
    double response_delay() {
        const double u = static_cast<double>(rt_rng() >> 11) * 0x1.0p-53;
        const double rt = 0.4 + 0.6 * u;
        const std::size_t n = std::max<std::size_t>(1, rig.ticks_for(rt));
        rig.run(n, 0);
        return static_cast<double>(n) / cfg.device.tick_hz;
    }

    TrialRecord record(const std::string& experiment) {
        TrialRecord r;
        r.session_id = cfg.session_id;
        r.participant_id = cfg.participant_id;
        r.experiment = experiment;
        r.seed = cfg.seed;
        r.trial_index = trial_index++;
        return r;
    }
};

double tail_ticks(const Rig& rig) { return static_cast<double>(std::max<std::size_t>(1, rig.ticks_for(0.5))); }

double mean_over(const CellArray& a, const CellSet& cells) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < kCells; ++k)
        if (cells.test(k)) {
            s += a[k];
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

ojson cells_list(const CellSet& s) {
    ojson a = ojson::array();
    for (auto k : cells_of(s)) a.push_back(k);
    return a;
}

// ---------------------------------------------------------------- exp1

ojson run_exp1(Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto& rig = ctx.rig;
    const auto tail = static_cast<std::size_t>(tail_ticks(rig));
    const std::size_t stim_ticks = rig.ticks_for(cfg.exp1.staircase.stimulus_duration_s);
    ojson conditions = ojson::array();

    for (const auto& cond : cfg.exp1.conditions) {
        StaircaseConfig sc = cfg.exp1.staircase;
        sc.ambient_c = rig.ambient();
        sc.pattern = cond.pattern;
        sc.polarity = cond.polarity;
        const Pattern pattern = *find_canonical_pattern(cond.pattern);
        const CellSet cells = pattern.active_cells;
        const ojson condition = {{"pattern", cond.pattern}, {"polarity", to_string(cond.polarity)}};

        auto st = StaircaseState::start(sc);
        int trials = 0;
        while (!st.finished && trials < cfg.exp1.max_trials) {
            const auto pair = staircase_next_stimulus(sc, st);
            auto present = [&](const char* role, double temp) {
                CellArray sp = filled(rig.ambient());
                for (auto k : cells_of(cells)) sp[k] = temp;
                rig.device().set_mode(DeviceMode::direct);
                rig.device().set_direct_setpoints(sp);
                rig.event("stimulus-on", {{"trial", ctx.trial_index},
                                          {"role", role},
                                          {"setpoint_c", round3(temp)},
                                          {"cells", cells_list(cells)}});
                return mean_over(rig.run(stim_ticks, tail), cells);
            };
            const double achieved_ref = present("reference", pair.reference_c);
            if (sc.isi_s > 0) {
                rig.device().set_direct_setpoints(filled(rig.ambient()));
                rig.run(rig.ticks_for(sc.isi_s), 0);
            }
            const double achieved_test = present("test", pair.test_c);
            rig.device().set_mode(DeviceMode::idle);
            rig.event("stimulus-off", {{"trial", ctx.trial_index}});

            const Response resp = ctx.observer.respond(std::abs(achieved_test - achieved_ref));
            const double rt = ctx.response_delay();
            auto rec = ctx.record("exp1");
            rec.condition = condition;
            rec.stimulus = {{"reference_c", round3(pair.reference_c)},
                            {"test_c", round3(pair.test_c)},
                            {"step_c", round3(st.current_step)},
                            {"achieved_reference_c", round3(achieved_ref)},
                            {"achieved_test_c", round3(achieved_test)}};
            rec.response = to_string(resp);
            rec.ground_truth_different = true;
            rec.correct = resp == Response::different;
            rec.response_time_s = rt;
            rec.session_time_s = rig.now();
            rig.event("response", {{"trial", rec.trial_index}, {"response", rec.response}, {"rt_s", rt}});
            ctx.log.trial(rec);

            const int before = st.reversals();
            st = staircase_update(sc, st, resp);
            if (st.reversals() > before)
                rig.event("reversal", {{"condition", condition},
                                       {"reversal", st.reversals()},
                                       {"step_c", st.reversal_steps.back()}});
            ++trials;
            rig.rest(cfg.exp1.rest_s);
        }

        ojson c = condition;
        c["trials"] = trials;
        c["reversals"] = st.reversals();
        c["finished"] = st.finished;
        c["reversal_steps_c"] = st.reversal_steps;
        c["jnd_c"] = st.finished ? ojson(jnd_estimate(sc, st)) : ojson(nullptr);
        conditions.push_back(c);
    }
    return {{"conditions", conditions}, {"staircase_equilibrium_p", staircase_equilibrium(cfg.exp1.staircase)}};
}

// ---------------------------------------------------------------- exp2

ojson run_exp2(Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto& rig = ctx.rig;
    const auto table = exp2_trial_table(cfg.exp2.table, rig.ambient(), derive_seed(cfg.seed, 4));
    const auto tail = static_cast<std::size_t>(tail_ticks(rig));
    const std::size_t contact = rig.ticks_for(cfg.exp2.table.contact_s);
    const CellSet all = CellSet().set();

    struct Tally {
        int n = 0, correct = 0;
    };
    std::map<std::pair<Comparison, Polarity>, Tally> tally;
    Tally overall;

    for (const auto& t : table) {
        // first object: touched with the bare hand, perceived as is
        rig.event("stimulus-on", {{"trial", ctx.trial_index}, {"role", "bare"}, {"object_c", round3(t.first_c)}});
        rig.run(contact, 0);
        const double perceived_first = t.first_c;
        double achieved_second;
        if (t.comparison == Comparison::real_vs_virtual) {
            rig.device().set_mode(DeviceMode::direct);
            rig.device().set_direct_setpoints(filled(t.second_c));
            rig.event("stimulus-on", {{"trial", ctx.trial_index}, {"role", "virtual"}, {"setpoint_c", round3(t.second_c)}});
        } else {
            rig.sim().set_external_constant(t.second_c);
            rig.device().set_mode(DeviceMode::passthrough);
            rig.event("stimulus-on",
                      {{"trial", ctx.trial_index}, {"role", "passthrough"}, {"object_c", round3(t.second_c)}});
        }
        achieved_second = mean_over(rig.run(contact, tail), all);
        rig.device().set_mode(DeviceMode::idle);
        rig.sim().set_external_constant(rig.ambient());
        rig.event("stimulus-off", {{"trial", ctx.trial_index}});

        const Response resp = ctx.observer.respond(std::abs(achieved_second - perceived_first));
        const double rt = ctx.response_delay();
        auto rec = ctx.record("exp2");
        rec.condition = {{"comparison", to_string(t.comparison)}, {"polarity", to_string(t.polarity)}};
        rec.stimulus = {{"table_index", t.index},
                        {"first_c", round3(t.first_c)},
                        {"second_c", round3(t.second_c)},
                        {"achieved_second_c", round3(achieved_second)}};
        rec.response = to_string(resp);
        rec.ground_truth_different = !t.equal;
        rec.correct = (resp == Response::different) == !t.equal;
        rec.response_time_s = rt;
        rec.session_time_s = rig.now();
        rig.event("response", {{"trial", rec.trial_index}, {"response", rec.response}, {"rt_s", rt}});
        ctx.log.trial(rec);

        auto& cell = tally[{t.comparison, t.polarity}];
        ++cell.n;
        ++overall.n;
        if (*rec.correct) {
            ++cell.correct;
            ++overall.correct;
        }
        rig.rest(cfg.exp2.rest_s);
    }

    auto summarize = [](const Tally& t) {
        return ojson{{"n", t.n},
                     {"correct", t.correct},
                     {"accuracy", t.n ? static_cast<double>(t.correct) / t.n : 0.0},
                     {"binomial_p", binomial_test(t.correct, t.n, 0.5)}};
    };
    ojson cells = ojson::array();
    for (const auto& [key, t] : tally) {
        ojson c = {{"comparison", to_string(key.first)}, {"polarity", to_string(key.second)}};
        const ojson s = summarize(t);
        for (auto it = s.begin(); it != s.end(); ++it) c[it.key()] = *it;
        cells.push_back(c);
    }
    return {{"cells", cells}, {"overall", summarize(overall)}};
}

// ---------------------------------------------------------------- exp3

ojson run_exp3(Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto& rig = ctx.rig;
    const auto table = exp3_pair_table(cfg.exp3.table, derive_seed(cfg.seed, 4));
    const auto tail = static_cast<std::size_t>(tail_ticks(rig));
    const std::size_t hold = rig.ticks_for(cfg.exp3.table.hold_s);
    const double envelope = cfg.device.safety_envelope_c;

    struct Tally {
        int n = 0, correct = 0;
    };
    std::map<Polarity, std::map<std::string, std::map<std::string, Tally>>> matrix;
    std::map<Polarity, Tally> changed, catches;
    long max_timing_error = 0;

    for (const auto& t : table) {
        const double offset = polarity_sign(t.polarity) * cfg.exp3.table.offset_c;
        const Pattern a = *find_canonical_pattern(t.first, offset);
        const Pattern b = *find_canonical_pattern(t.second, offset);
        const auto program = transition_schedule(a, b, cfg.exp3.table.hold_s, offset, envelope);
        rig.device().play(program);
        rig.event("stimulus-on",
                  {{"trial", ctx.trial_index}, {"first", t.first}, {"second", t.second}, {"offset_c", offset}});

        // hold 1, then hold 2, watching for the first tick that shows pattern b
        CellArray first_map{}, second_map{};
        long switch_tick = -1;
        const std::uint64_t start_tick = rig.device().tick_index();
        auto watch = [&](std::size_t n, CellArray& out) {
            CellArray acc{};
            for (std::size_t i = 0; i < n; ++i) {
                const auto& f = rig.tick();
                if (switch_tick < 0 && t.changed) {
                    bool is_b = true;
                    for (std::size_t k = 0; k < kCells; ++k) {
                        const double want = rig.ambient() + (b.active_cells.test(k) ? offset : 0.0);
                        is_b = is_b && std::abs(f.setpoints[k] - want) < 1e-9;
                    }
                    if (is_b) switch_tick = static_cast<long>(f.tick_index - start_tick);
                }
                if (i + tail >= n)
                    for (std::size_t k = 0; k < kCells; ++k) acc[k] += rig.sim().state().t_cold[k];
            }
            for (auto& v : acc) v /= static_cast<double>(tail);
            out = acc;
        };
        watch(hold, first_map);
        watch(hold, second_map);
        rig.event("stimulus-off", {{"trial", ctx.trial_index}});
        if (t.changed) {
            const long err = switch_tick < 0 ? static_cast<long>(hold) : std::labs(switch_tick - static_cast<long>(hold));
            max_timing_error = std::max(max_timing_error, err);
        }

        double sq = 0;
        for (std::size_t k = 0; k < kCells; ++k) sq += (second_map[k] - first_map[k]) * (second_map[k] - first_map[k]);
        const double change = std::sqrt(sq / kCells);

        const Response resp = ctx.observer.respond(change);
        const double rt = ctx.response_delay();
        auto rec = ctx.record("exp3");
        rec.condition = {{"polarity", to_string(t.polarity)}, {"first", t.first}, {"second", t.second}};
        rec.stimulus = {{"table_index", t.index},
                        {"offset_c", offset},
                        {"hold_s", cfg.exp3.table.hold_s},
                        {"achieved_change_rms_c", round3(change)}};
        rec.response = to_string(resp);
        rec.ground_truth_different = t.changed;
        rec.correct = (resp == Response::different) == t.changed;
        rec.response_time_s = rt;
        rec.session_time_s = rig.now();
        rig.event("response", {{"trial", rec.trial_index}, {"response", rec.response}, {"rt_s", rt}});
        ctx.log.trial(rec);

        auto& cell = matrix[t.polarity][t.first][t.second];
        auto& group = t.changed ? changed[t.polarity] : catches[t.polarity];
        ++cell.n;
        ++group.n;
        if (*rec.correct) {
            ++cell.correct;
            ++group.correct;
        }
        rig.rest(cfg.exp3.rest_s);
    }

    auto acc = [](const auto& t) { return t.n ? ojson(static_cast<double>(t.correct) / t.n) : ojson(nullptr); };
    ojson pols = ojson::object();
    for (Polarity p : {Polarity::warm, Polarity::cool}) {
        ojson m = ojson::object();
        for (const auto& first : exp3_pattern_names()) {
            ojson row = ojson::object();
            for (const auto& second : exp3_pattern_names()) row[second] = acc(matrix[p][first][second]);
            m[first] = row;
        }
        pols[to_string(p)] = {{"accuracy_matrix", m},
                              {"changed_trials", changed[p].n},
                              {"changed_accuracy", acc(changed[p])},
                              {"catch_trials", catches[p].n},
                              {"catch_accuracy", acc(catches[p])},
                              {"binomial_p", binomial_test(changed[p].correct + catches[p].correct,
                                                           changed[p].n + catches[p].n, 0.5)}};
    }
    return {{"polarities", pols},
            {"hold_ticks", hold},
            {"timing_max_error_ticks", max_timing_error}};
}

// ---------------------------------------------------------------- exp4

ojson run_exp4(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto& e = cfg.exp4;
    auto& rig = ctx.rig;
    const ArrayGeometry geometry;
    const std::size_t window = rig.ticks_for(e.window_s);
    const double tick_hz = cfg.device.tick_hz;

    ojson polarities = ojson::object();
    for (Polarity p : {Polarity::warm, Polarity::cool}) {
        const double offset = polarity_sign(p) * e.offset_c;
        const auto brush = brush_schedule(geometry, e.velocity_m_s, offset, e.row, e.dwell_factor, e.reverse,
                                          cfg.device.safety_envelope_c);
        const auto program = brush.program();
        const auto frames = program.quantize(tick_hz);

        CellSet path;
        for (const auto& ev : brush.events) path.set(ev.cell);
        CellArray amplitude_sum{};
        bool outside_ambient = true;

        for (int rep = 0; rep < e.repetitions; ++rep) {
            rig.device().play(program);
            rig.event("stimulus-on", {{"trial", ctx.trial_index},
                                      {"brush_row", e.row},
                                      {"offset_c", offset},
                                      {"velocity_m_s", e.velocity_m_s}});
            CellArray peak{};
            for (std::size_t i = 0; i < window; ++i) {
                const auto& f = rig.tick();
                for (std::size_t k = 0; k < kCells; ++k) {
                    peak[k] = std::max(peak[k], std::abs(rig.sim().state().t_cold[k] - rig.ambient()));
                    if (!path.test(k) && std::abs(f.setpoints[k] - rig.ambient()) > 1e-9) outside_ambient = false;
                }
            }
            rig.event("stimulus-off", {{"trial", ctx.trial_index}});
            const double rt = ctx.response_delay();
            auto rec = ctx.record("exp4");
            rec.condition = {{"polarity", to_string(p)}, {"feedback", "thermal"}};
            rec.stimulus = {{"velocity_m_s", e.velocity_m_s},
                            {"offset_c", offset},
                            {"row", e.row},
                            {"repetition", rep},
                            {"peak_amplitude_c", cells_json(peak)}};
            rec.response = "none";
            rec.response_time_s = rt;
            rec.session_time_s = rig.now();
            ctx.log.trial(rec);
            for (std::size_t k = 0; k < kCells; ++k) amplitude_sum[k] += peak[k];
            rig.rest(1.0);
        }
        for (auto& v : amplitude_sum) v /= e.repetitions;

        ojson onsets = ojson::array(), onset_ticks = ojson::array();
        for (const auto& ev : brush.events) {
            onsets.push_back(ev.onset_s);
            onset_ticks.push_back(std::llround(ev.onset_s * tick_hz));
        }
        ojson quantized_active = ojson::array();
        for (std::size_t k : cells_of(path)) {
            long first = -1, count = 0;
            for (std::size_t i = 0; i < frames.size(); ++i)
                if (frames[i][k] != 0.0) {
                    if (first < 0) first = static_cast<long>(i);
                    ++count;
                }
            quantized_active.push_back({{"cell", k}, {"first_tick", first}, {"ticks_on", count}});
        }
        polarities[to_string(p)] = {{"commanded_offset_c", offset},
                                    {"path_cells", cells_list(path)},
                                    {"onsets_s", onsets},
                                    {"onset_ticks", onset_ticks},
                                    {"quantized", quantized_active},
                                    {"achieved_amplitude_c", cells_json(amplitude_sum)},
                                    {"cells_outside_path_at_ambient", outside_ambient}};
    }
    const Rational ioi = brush_onset(geometry, e.velocity_m_s, 1);
    return {{"velocity_m_s", e.velocity_m_s},
            {"pitch_mm", geometry.pitch_mm},
            {"inter_onset_ms", ioi.to_double() * 1000.0},
            {"inter_onset_exact_s", std::to_string(ioi.num()) + "/" + std::to_string(ioi.den())},
            {"tick_period_ms", 1000.0 / tick_hz},
            {"polarities", polarities}};
}

}  // namespace

SessionResult run_session(const SessionConfig& cfg) {
    cfg.validate();
    const auto wall_start = std::chrono::steady_clock::now();
    const std::string started = iso_now();

    SessionResult result;
    result.directory = cfg.output_dir;
    SessionLog log(cfg.output_dir, cfg.session_id, cfg.seed);
    Rig rig(cfg, log);
    ObserverModel om = cfg.observer;
    om.seed = derive_seed(cfg.seed, 1);
    Context ctx{cfg, log, rig, SimulatedObserver(om), std::mt19937_64(derive_seed(cfg.seed, 5))};

    ojson summary;
    summary["schema"] = kArtifactSchema;
    summary["seed"] = cfg.seed;
    summary["session_id"] = cfg.session_id;
    summary["participant_id"] = cfg.participant_id;
    summary["experiment"] = cfg.experiment;
    summary["status"] = "completed";
    summary["error"] = nullptr;
    summary["config"] = to_json(cfg);

    rig.event("session-start", {{"experiment", cfg.experiment}, {"participant_id", cfg.participant_id}});
    ojson results;
    try {
        if (cfg.experiment == "exp1")
            results = run_exp1(ctx);
        else if (cfg.experiment == "exp2")
            results = run_exp2(ctx);
        else if (cfg.experiment == "exp3")
            results = run_exp3(ctx);
        else
            results = run_exp4(ctx);
        rig.event("session-end", {{"status", "completed"}, {"trials", ctx.trial_index}});
    } catch (const Error& e) {
        result.aborted = true;
        summary["status"] = "aborted";
        summary["error"] = e.what();
        log.event(rig.now(), "session-end", {{"status", "aborted"}, {"error", e.what()}, {"trials", ctx.trial_index}});
    }
    summary["trials"] = ctx.trial_index;
    summary["session_time_s"] = rig.now();
    summary["results"] = results;
    summary["wall_clock"] = {
        {"started", started},
        {"finished", iso_now()},
        {"elapsed_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count()}};
    log.flush();
    log.write_summary(summary);
    result.summary = summary;
    return result;
}

// ---------------------------------------------------------------- csv

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string flatten(const ojson& obj) {
    std::string out;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!out.empty()) out += ';';
        out += it.key() + "=" + (it->is_string() ? it->get<std::string>() : it->dump());
    }
    return out;
}

}  // namespace

std::string trials_to_csv(std::istream& in) {
    std::string out = "participant,experiment,condition,stimulus,response,rt,ground_truth\n";
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        TrialRecord r;
        try {
            r = trial_record_from_json(ojson::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("trials.jsonl", e.what(), lineno);
        }
        std::ostringstream rt;
        rt << r.response_time_s;
        const std::string truth =
            r.ground_truth_different ? (*r.ground_truth_different ? "different" : "same") : "";
        out += csv_field(r.participant_id) + "," + csv_field(r.experiment) + "," + csv_field(flatten(r.condition)) +
               "," + csv_field(flatten(r.stimulus)) + "," + r.response + "," + rt.str() + "," + truth + "\n";
    }
    return out;
}

void export_csv(const std::string& trials_path, const std::string& csv_path) {
    std::ifstream in(trials_path);
    if (!in) throw Error("cannot open " + trials_path);
    const std::string csv = trials_to_csv(in);
    std::ofstream out(csv_path, std::ios::trunc);
    out << csv;
    if (!out) throw Error("cannot write " + csv_path);
}

}  // namespace thermopalm
