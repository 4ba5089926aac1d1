#pragma once

#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "thermopalm/control.hpp"
#include "thermopalm/device.hpp"
#include "thermopalm/observer.hpp"
#include "thermopalm/staircase.hpp"
#include "thermopalm/trials.hpp"

namespace thermopalm {

inline constexpr int kArtifactSchema = 1;

struct Exp1Condition {
    std::string pattern;
    Polarity polarity;
};

struct Exp1Params {
    std::vector<Exp1Condition> conditions{
        {"line", Polarity::warm}, {"line", Polarity::cool}, {"all", Polarity::warm}, {"all", Polarity::cool}};
    StaircaseConfig staircase;  // ambient, pattern and polarity come from the session
    double rest_s = 3.0;        // back at ambient between trials
    int max_trials = 500;
};

struct Exp2Params {
    Exp2Config table;
    double rest_s = 3.0;
};

struct Exp3Params {
    Exp3Config table;
    double rest_s = 3.0;
};

struct Exp4Params {
    double velocity_m_s = 3.5;
    double offset_c = 10.0;
    std::size_t row = 1;
    double dwell_factor = 1.0;
    bool reverse = false;
    int repetitions = 1;
    double window_s = 1.0;  // observation window for achieved amplitude
};

struct SessionConfig {
    std::string session_id = "session";
    std::string participant_id = "sim";
    std::uint64_t seed = 1;
    std::string output_dir = "session_out";
    DeviceConfig device;
    PidGains gains;
    std::optional<std::string> plant_model_file;
    double channel_spread = 0.3;
    ObserverModel observer;
    std::string experiment = "exp1";
    Exp1Params exp1;
    Exp2Params exp2;
    Exp3Params exp3;
    Exp4Params exp4;

    /// Collects every problem and throws ValidationErrors.
    void validate() const;
    ChannelThermalModel plant_model() const;
};

/// Parse and validate a session config; every problem is reported in one
/// ValidationErrors. Keys absent from the file keep their defaults.
SessionConfig session_config_from_json(const std::string& text);
SessionConfig load_session_config(const std::string& path);
nlohmann::ordered_json to_json(const SessionConfig& cfg);

/// Independent stream seed derived from the session seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

nlohmann::ordered_json to_json(const ArrayFrame& f);

/// Append-only writers for events.jsonl, trials.jsonl and telemetry.jsonl
/// plus summary.json. Every line carries the schema version and seed.
/// Thread-safe.
class SessionLog {
public:
    SessionLog(const std::string& directory, std::string session_id, std::uint64_t seed);

    /// Session time in seconds since start (monotonic).
    void event(double t_s, const std::string& kind, const nlohmann::ordered_json& payload);
    void trial(const TrialRecord& r);
    void telemetry(double t_s, const ArrayFrame& f);
    void write_summary(const nlohmann::ordered_json& summary);
    void flush();

    const std::string& directory() const { return dir_; }
    std::uint64_t events_written() const;

private:
    std::string dir_;
    std::string session_id_;
    std::uint64_t seed_;
    std::uint64_t seq_ = 0;
    mutable std::mutex mu_;
    std::ofstream events_, trials_, telemetry_;
};

struct SessionResult {
    std::string directory;
    nlohmann::ordered_json summary;
    bool aborted = false;
};

/// Run one experiment end to end with the simulated observer and device.
/// Deterministic under a fixed seed; wall-clock time only appears in the
/// summary's "wall_clock" block. Runtime faults mark the summary aborted.
SessionResult run_session(const SessionConfig& cfg);

/// Flatten trials.jsonl into CSV with columns participant, experiment,
/// condition, stimulus, response, rt, ground_truth.
std::string trials_to_csv(std::istream& trials_jsonl);
void export_csv(const std::string& trials_path, const std::string& csv_path);

}  // namespace thermopalm
