#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "thermopalm/cells.hpp"
#include "thermopalm/control.hpp"
#include "thermopalm/pattern.hpp"
#include "thermopalm/plant.hpp"
#include "thermopalm/serial_codec.hpp"

namespace thermopalm {

enum class DeviceMode { idle, direct, passthrough, pattern };
enum class BackendKind { sim, serial };

std::string to_string(DeviceMode mode);
DeviceMode device_mode_from_string(const std::string& s);
std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& s);

struct DeviceConfig {
    double ambient_c = 30.0;
    double safety_envelope_c = 15.0;
    BackendKind backend = BackendKind::sim;
    double telemetry_hz = 20.0;
    double tick_hz = 100.0;
    double passthrough_tau_s = 0.0;

    /// Ambient within the 25..36 degC skin band, positive rates.
    void validate() const;
    double lower_limit() const { return ambient_c - safety_envelope_c; }
    double upper_limit() const { return ambient_c + safety_envelope_c; }
};

/// Snapshot of one control tick.
struct ArrayFrame {
    std::uint64_t tick_index = 0;
    double time_s = 0.0;
    CellArray setpoints{};
    CellArray measured{};
    CellArray currents{};
    CellArray external{};
    DeviceMode mode = DeviceMode::idle;
    CellSet channel_faults;
    int clamp_events = 0;
    bool device_fault = false;
    std::vector<std::string> warnings;
};

struct ClampResult {
    CellArray setpoints;
    int clamped = 0;
};

/// Clamp every cell into [ambient - envelope, ambient + envelope]. NaN maps to
/// ambient and counts as a clamp.
ClampResult clamp_setpoints(const CellArray& raw, const DeviceConfig& cfg);

struct PassthroughResult {
    CellArray setpoints;  // smoothed then clamped
    CellArray smoothed;   // filter state to feed back as `prev`
    CellSet fallbacks;    // channels whose reading was not finite
    int clamped = 0;
};

/// One-to-one external-thermistor -> actuator mapping through an optional
/// first-order smoother (exact discretisation, tau = 0 is identity). A
/// non-finite reading drops that channel to ambient.
PassthroughResult passthrough_map(const CellArray& external, const DeviceConfig& cfg, double smoothing_tau,
                                  double dt, const CellArray& prev);

struct SensorSample {
    CellArray measured;  // contact thermistors, NaN when a channel is faulted
    CellArray external;  // outward-facing thermistors, NaN when unavailable
};

struct ArrayCommand {
    std::uint32_t tick = 0;
    CellArray setpoints{};
    CellArray currents{};
};

/// Hardware or simulated device behind the control loop. Implementations
/// throw BackendFault on link failures.
class DeviceBackend {
public:
    virtual ~DeviceBackend() = default;
    virtual SensorSample read() = 0;
    virtual void apply(const ArrayCommand& command, double dt) = 0;
    virtual std::string name() const = 0;
};

/// Simulated plant in contact with a palm, plus a simulated external surface.
class SimBackend final : public DeviceBackend {
public:
    SimBackend(PlantEnvironment env, ChannelModels models, double initial_temp_c, std::uint64_t seed);

    SensorSample read() override;
    void apply(const ArrayCommand& command, double dt) override;
    std::string name() const override { return "sim"; }

    /// External surface playback. After the profile ends its last value is held.
    void set_external_profile(std::optional<TimedTemperatureProfile> profile);
    void set_external_constant(double temp_c);
    void inject_sensor_fault(std::size_t channel, bool faulted);

    const PlantState& state() const { return state_; }
    const ChannelModels& models() const { return models_; }
    const PlantEnvironment& environment() const { return env_; }

private:
    PlantEnvironment env_;
    ChannelModels models_;
    PlantState state_;
    SensorReader sensors_;
    std::optional<TimedTemperatureProfile> profile_;
    double external_constant_c_;
    CellSet sensor_faults_;
};

/// Byte transport to a microcontroller.
class ByteLink {
public:
    virtual ~ByteLink() = default;
    virtual void write(std::span<const std::uint8_t> bytes) = 0;
    virtual std::optional<std::vector<std::uint8_t>> read(std::chrono::milliseconds timeout) = 0;
};

/// In-process stand-in for the firmware: decodes command frames, drives a
/// simulated plant for one tick per command and answers with a telemetry
/// frame. Emits a hello frame (tick 0) on construction.
class LoopbackFirmware final : public ByteLink {
public:
    LoopbackFirmware(std::unique_ptr<SimBackend> plant, double tick_hz);

    void write(std::span<const std::uint8_t> bytes) override;
    std::optional<std::vector<std::uint8_t>> read(std::chrono::milliseconds timeout) override;

    void disconnect() { connected_ = false; }
    void corrupt_next_reply() { corrupt_next_ = true; }
    std::size_t rejected_frames() const { return rejected_; }
    SimBackend& plant() { return *plant_; }

private:
    void queue_telemetry(std::uint32_t tick, const CellArray& setpoints, const CellArray& currents);

    std::unique_ptr<SimBackend> plant_;
    double dt_;
    std::deque<std::vector<std::uint8_t>> outbox_;
    bool connected_ = true;
    bool corrupt_next_ = false;
    std::size_t rejected_ = 0;
};

/// Device backend speaking the binary frame protocol over a ByteLink. The
/// frame has no external-thermistor fields, so passthrough is unavailable
/// (external reads NaN).
class SerialBackend final : public DeviceBackend {
public:
    explicit SerialBackend(std::unique_ptr<ByteLink> link,
                           std::chrono::milliseconds timeout = std::chrono::milliseconds(50));

    SensorSample read() override;
    void apply(const ArrayCommand& command, double dt) override;
    std::string name() const override { return "serial"; }

    ByteLink& link() { return *link_; }

private:
    SerialFrame exchange_reply();

    std::unique_ptr<ByteLink> link_;
    std::chrono::milliseconds timeout_;
    CellArray measured_;
};

/// The 3x3 device: mode logic, safety clamping, nine PID loops, backend.
/// Single owner; not thread-safe.
class Device {
public:
    Device(DeviceConfig cfg, std::unique_ptr<DeviceBackend> backend, PidGains gains);

    void set_mode(DeviceMode mode);
    void set_direct_setpoints(const CellArray& absolute_c);
    /// Start a pattern program on the next tick.
    void play(const StimulusProgram& program);
    void cancel_program();
    /// Per-channel gain override; nullopt restores the shared gains.
    void set_channel_gains(std::size_t channel, std::optional<PidGains> gains);

    /// read sensors -> derive setpoints -> PID -> drive -> advance backend.
    ArrayFrame tick();

    DeviceMode mode() const { return mode_; }
    bool faulted() const { return device_fault_; }
    /// Operator acknowledgement; the loop restarts from idle.
    void clear_fault() { device_fault_ = false; }
    bool program_active() const { return mode_ == DeviceMode::pattern; }
    std::uint64_t tick_index() const { return tick_; }
    const DeviceConfig& config() const { return cfg_; }
    const PidGains& gains() const { return gains_; }
    DeviceBackend& backend() { return *backend_; }
    const ArrayFrame& last_frame() const { return last_; }

private:
    const PidGains& gains_for(std::size_t k) const;

    DeviceConfig cfg_;
    std::unique_ptr<DeviceBackend> backend_;
    PidGains gains_;
    std::array<std::optional<PidGains>, kCells> overrides_{};
    std::array<ControllerState, kCells> controllers_{};
    DeviceMode mode_ = DeviceMode::idle;
    CellArray direct_{};
    CellArray passthrough_state_{};
    std::vector<CellArray> program_;
    std::uint64_t program_start_ = 0;
    bool program_pending_ = false;
    std::uint64_t tick_ = 0;
    bool device_fault_ = false;
    ArrayFrame last_;
};

/// Simulated device with a plant model and sensors seeded from `seed`.
std::unique_ptr<SimBackend> make_sim_backend(const DeviceConfig& cfg, const ChannelModels& models,
                                             std::uint64_t seed, PlantEnvironment env = {});

}  // namespace thermopalm
