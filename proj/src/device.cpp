#include "thermopalm/device.hpp"

#include <algorithm>
#include <cmath>

#include "thermopalm/errors.hpp"

namespace thermopalm {

std::string to_string(DeviceMode mode) {
    switch (mode) {
        case DeviceMode::idle: return "idle";
        case DeviceMode::direct: return "direct";
        case DeviceMode::passthrough: return "passthrough";
        case DeviceMode::pattern: return "pattern";
    }
    return "idle";
}

DeviceMode device_mode_from_string(const std::string& s) {
    if (s == "idle") return DeviceMode::idle;
    if (s == "direct") return DeviceMode::direct;
    if (s == "passthrough") return DeviceMode::passthrough;
    if (s == "pattern") return DeviceMode::pattern;
    throw InvalidArgument("unknown device mode '" + s + "'");
}

std::string to_string(BackendKind kind) { return kind == BackendKind::sim ? "sim" : "serial"; }

BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "sim") return BackendKind::sim;
    if (s == "serial") return BackendKind::serial;
    throw InvalidArgument("unknown backend '" + s + "'");
}

void DeviceConfig::validate() const {
    if (!(ambient_c >= 25.0 && ambient_c <= 36.0))
        throw InvalidArgument("ambient_c must be within [25, 36] degC");
    if (!(safety_envelope_c > 0.0 && safety_envelope_c <= 15.0))
        throw InvalidArgument("safety_envelope_c must be within (0, 15] degC");
    if (!(tick_hz > 0.0 && tick_hz <= 1000.0)) throw InvalidArgument("tick_hz must be within (0, 1000]");
    if (!(telemetry_hz > 0.0 && telemetry_hz <= tick_hz))
        throw InvalidArgument("telemetry_hz must be within (0, tick_hz]");
    if (!(passthrough_tau_s >= 0.0) || !std::isfinite(passthrough_tau_s))
        throw InvalidArgument("passthrough_tau_s must be >= 0");
}

ClampResult clamp_setpoints(const CellArray& raw, const DeviceConfig& cfg) {
    ClampResult r;
    const double lo = cfg.lower_limit();
    const double hi = cfg.upper_limit();
    for (std::size_t k = 0; k < kCells; ++k) {
        const double v = raw[k];
        if (!std::isfinite(v)) {
            r.setpoints[k] = cfg.ambient_c;
            ++r.clamped;
        } else if (v < lo || v > hi) {
            r.setpoints[k] = std::clamp(v, lo, hi);
            ++r.clamped;
        } else {
            r.setpoints[k] = v;
        }
    }
    return r;
}

PassthroughResult passthrough_map(const CellArray& external, const DeviceConfig& cfg, double smoothing_tau,
                                  double dt, const CellArray& prev) {
    if (!(smoothing_tau >= 0.0)) throw InvalidArgument("passthrough: smoothing_tau must be >= 0");
    if (!(dt > 0.0)) throw InvalidArgument("passthrough: dt must be positive");
    PassthroughResult r;
    const double a = smoothing_tau > 0.0 ? 1.0 - std::exp(-dt / smoothing_tau) : 1.0;
    CellArray raw{};
    for (std::size_t k = 0; k < kCells; ++k) {
        if (!std::isfinite(external[k])) {
            r.fallbacks.set(k);
            r.smoothed[k] = cfg.ambient_c;
            raw[k] = cfg.ambient_c;
            continue;
        }
        const double p = std::isfinite(prev[k]) ? prev[k] : cfg.ambient_c;
        r.smoothed[k] = p + a * (external[k] - p);
        raw[k] = r.smoothed[k];
    }
    auto c = clamp_setpoints(raw, cfg);
    r.setpoints = c.setpoints;
    r.clamped = c.clamped;
    return r;
}

// ---------------------------------------------------------------- SimBackend

SimBackend::SimBackend(PlantEnvironment env, ChannelModels models, double initial_temp_c, std::uint64_t seed)
    : env_(env),
      models_(models),
      state_(PlantState::uniform(initial_temp_c)),
      sensors_(seed),
      external_constant_c_(initial_temp_c) {
    for (const auto& m : models_) m.validate();
    env_.tem.validate();
    env_.coolant.validate();
}

SensorSample SimBackend::read() {
    SensorSample s;
    s.measured = sensors_.read_all(state_, models_);
    for (std::size_t k = 0; k < kCells; ++k)
        if (sensor_faults_.test(k)) s.measured[k] = std::nan("");
    if (profile_) {
        const double t = std::clamp(state_.sim_time, profile_->start(), profile_->end());
        s.external = external_surface_source(*profile_, t);
    } else {
        s.external = filled(external_constant_c_);
    }
    return s;
}

void SimBackend::apply(const ArrayCommand& command, double dt) {
    try {
        state_ = plant_step(state_, command.currents, models_, env_, dt);
    } catch (const SimulationDiverged& e) {
        throw BackendFault(std::string("simulated plant: ") + e.what());
    }
}

void SimBackend::set_external_profile(std::optional<TimedTemperatureProfile> profile) {
    if (profile) profile->validate();
    profile_ = std::move(profile);
}

void SimBackend::set_external_constant(double temp_c) {
    profile_.reset();
    external_constant_c_ = temp_c;
}

void SimBackend::inject_sensor_fault(std::size_t channel, bool faulted) {
    if (channel >= kCells) throw InvalidArgument("inject_sensor_fault: channel out of range");
    sensor_faults_.set(channel, faulted);
}

std::unique_ptr<SimBackend> make_sim_backend(const DeviceConfig& cfg, const ChannelModels& models,
                                             std::uint64_t seed, PlantEnvironment env) {
    return std::make_unique<SimBackend>(env, models, cfg.ambient_c, seed);
}

// ---------------------------------------------------------- LoopbackFirmware

LoopbackFirmware::LoopbackFirmware(std::unique_ptr<SimBackend> plant, double tick_hz)
    : plant_(std::move(plant)), dt_(1.0 / tick_hz) {
    if (!plant_) throw InvalidArgument("LoopbackFirmware: null plant");
    if (!(tick_hz > 0)) throw InvalidArgument("LoopbackFirmware: tick_hz must be positive");
    queue_telemetry(0, CellArray{}, CellArray{});
}

void LoopbackFirmware::queue_telemetry(std::uint32_t tick, const CellArray& setpoints, const CellArray& currents) {
    SerialFrame f;
    f.tick = tick;
    const auto sample = plant_->read();
    for (std::size_t k = 0; k < kCells; ++k) {
        f.setpoint_cdeg[k] = to_centidegrees(setpoints[k]);
        // A dead thermistor reads as the s16 minimum.
        f.measured_cdeg[k] = std::isfinite(sample.measured[k]) ? to_centidegrees(sample.measured[k]) : INT16_MIN;
        f.current_ma[k] = to_milliamps(currents[k]);
    }
    auto bytes = serial_frame_encode(f);
    if (corrupt_next_) {
        bytes[20] ^= 0x5A;
        corrupt_next_ = false;
    }
    outbox_.push_back(std::move(bytes));
}

void LoopbackFirmware::write(std::span<const std::uint8_t> bytes) {
    if (!connected_) return;
    SerialFrame cmd;
    try {
        cmd = serial_frame_decode(bytes);
    } catch (const FrameRejected&) {
        ++rejected_;
        return;
    }
    const double i_max = plant_->environment().tem.i_max;
    CellArray setpoints{}, currents{};
    ArrayCommand applied;
    applied.tick = cmd.tick;
    for (std::size_t k = 0; k < kCells; ++k) {
        setpoints[k] = from_centidegrees(cmd.setpoint_cdeg[k]);
        // Firmware-side current limit.
        currents[k] = std::clamp(from_milliamps(cmd.current_ma[k]), -i_max, i_max);
    }
    applied.setpoints = setpoints;
    applied.currents = currents;
    try {
        plant_->apply(applied, dt_);
    } catch (const BackendFault&) {
        connected_ = false;
        return;
    }
    queue_telemetry(cmd.tick, setpoints, currents);
}

std::optional<std::vector<std::uint8_t>> LoopbackFirmware::read(std::chrono::milliseconds) {
    if (!connected_ || outbox_.empty()) return std::nullopt;
    auto f = std::move(outbox_.front());
    outbox_.pop_front();
    return f;
}

// ------------------------------------------------------------- SerialBackend

SerialBackend::SerialBackend(std::unique_ptr<ByteLink> link, std::chrono::milliseconds timeout)
    : link_(std::move(link)), timeout_(timeout) {
    if (!link_) throw InvalidArgument("SerialBackend: null link");
    measured_ = filled(std::nan(""));
    const auto hello = exchange_reply();
    for (std::size_t k = 0; k < kCells; ++k)
        measured_[k] = hello.measured_cdeg[k] == INT16_MIN ? std::nan("") : from_centidegrees(hello.measured_cdeg[k]);
}

SerialFrame SerialBackend::exchange_reply() {
    auto reply = link_->read(timeout_);
    if (!reply) throw BackendFault("serial link: no telemetry within timeout");
    try {
        return serial_frame_decode(*reply);
    } catch (const FrameRejected& e) {
        throw BackendFault(std::string("serial link: ") + e.what());
    }
}

SensorSample SerialBackend::read() {
    SensorSample s;
    s.measured = measured_;
    s.external = filled(std::nan(""));
    return s;
}

void SerialBackend::apply(const ArrayCommand& command, double) {
    SerialFrame f;
    f.tick = command.tick;
    for (std::size_t k = 0; k < kCells; ++k) {
        f.setpoint_cdeg[k] = to_centidegrees(command.setpoints[k]);
        f.measured_cdeg[k] = std::isfinite(measured_[k]) ? to_centidegrees(measured_[k]) : INT16_MIN;
        f.current_ma[k] = to_milliamps(command.currents[k]);
    }
    const auto bytes = serial_frame_encode(f);
    link_->write(bytes);
    const auto reply = exchange_reply();
    if (reply.tick != command.tick) throw BackendFault("serial link: telemetry tick mismatch");
    for (std::size_t k = 0; k < kCells; ++k)
        measured_[k] = reply.measured_cdeg[k] == INT16_MIN ? std::nan("") : from_centidegrees(reply.measured_cdeg[k]);
}

// -------------------------------------------------------------------- Device

Device::Device(DeviceConfig cfg, std::unique_ptr<DeviceBackend> backend, PidGains gains)
    : cfg_(cfg), backend_(std::move(backend)), gains_(gains) {
    cfg_.validate();
    if (!backend_) throw InvalidArgument("Device: null backend");
    gains_.validate(TemParams::device_default().i_max);
    direct_ = filled(cfg_.ambient_c);
    passthrough_state_ = filled(cfg_.ambient_c);
    last_.setpoints = filled(cfg_.ambient_c);
}

void Device::set_mode(DeviceMode mode) {
    if (mode == DeviceMode::pattern && program_.empty())
        throw InvalidArgument("pattern mode requires a program; use play()");
    if (mode == DeviceMode::passthrough) passthrough_state_ = last_.measured;
    if (mode == DeviceMode::passthrough)
        for (auto& v : passthrough_state_)
            if (!std::isfinite(v)) v = cfg_.ambient_c;
    mode_ = mode;
    if (mode != DeviceMode::pattern) {
        program_.clear();
        program_pending_ = false;
    }
}

void Device::set_direct_setpoints(const CellArray& absolute_c) { direct_ = absolute_c; }

void Device::play(const StimulusProgram& program) {
    auto frames = program.quantize(cfg_.tick_hz);
    if (frames.empty()) throw InvalidArgument("play: program has zero duration");
    program_ = std::move(frames);
    program_pending_ = true;
    mode_ = DeviceMode::pattern;
}

void Device::cancel_program() {
    program_.clear();
    program_pending_ = false;
    if (mode_ == DeviceMode::pattern) mode_ = DeviceMode::idle;
}

void Device::set_channel_gains(std::size_t channel, std::optional<PidGains> gains) {
    if (channel >= kCells) throw InvalidArgument("set_channel_gains: channel out of range");
    if (gains) gains->validate(TemParams::device_default().i_max);
    overrides_[channel] = gains;
}

const PidGains& Device::gains_for(std::size_t k) const { return overrides_[k] ? *overrides_[k] : gains_; }

ArrayFrame Device::tick() {
    const double dt = 1.0 / cfg_.tick_hz;
    ArrayFrame f;
    f.tick_index = tick_;
    f.time_s = static_cast<double>(tick_) * dt;
    f.mode = mode_;

    SensorSample sample;
    bool backend_ok = true;
    try {
        sample = backend_->read();
    } catch (const BackendFault& e) {
        backend_ok = false;
        f.warnings.emplace_back(std::string("backend fault: ") + e.what());
        sample.measured = filled(std::nan(""));
        sample.external = filled(std::nan(""));
    }
    f.measured = sample.measured;
    f.external = sample.external;

    CellArray raw = filled(cfg_.ambient_c);
    switch (mode_) {
        case DeviceMode::idle: break;
        case DeviceMode::direct: raw = direct_; break;
        case DeviceMode::passthrough: {
            auto p = passthrough_map(sample.external, cfg_, cfg_.passthrough_tau_s, dt, passthrough_state_);
            passthrough_state_ = p.smoothed;
            raw = p.smoothed;
            for (std::size_t k = 0; k < kCells; ++k)
                if (p.fallbacks.test(k))
                    f.warnings.push_back("external sensor " + std::to_string(k) + " unavailable, holding ambient");
            break;
        }
        case DeviceMode::pattern: {
            if (program_pending_) {
                program_start_ = tick_;
                program_pending_ = false;
            }
            const auto idx = static_cast<std::size_t>(tick_ - program_start_);
            if (idx < program_.size())
                for (std::size_t k = 0; k < kCells; ++k) raw[k] = cfg_.ambient_c + program_[idx][k];
            break;
        }
    }
    auto clamped = clamp_setpoints(raw, cfg_);
    f.setpoints = clamped.setpoints;
    f.clamp_events = clamped.clamped;
    if (clamped.clamped > 0)
        f.warnings.push_back(std::to_string(clamped.clamped) + " setpoint(s) clamped to the safety envelope");

    if (!backend_ok || device_fault_) {
        if (backend_ok && device_fault_) f.warnings.emplace_back("device faulted; outputs held at zero");
        device_fault_ = true;
        mode_ = DeviceMode::idle;
        program_.clear();
        f.device_fault = true;
        f.setpoints = filled(cfg_.ambient_c);
        f.currents = CellArray{};
        for (auto& c : controllers_) c = ControllerState{};
        ++tick_;
        last_ = f;
        return f;
    }

    const double i_max = TemParams::device_default().i_max;
    for (std::size_t k = 0; k < kCells; ++k) {
        if (!std::isfinite(sample.measured[k])) {
            f.channel_faults.set(k);
            f.setpoints[k] = cfg_.ambient_c;
            f.currents[k] = 0.0;
            controllers_[k] = ControllerState{};
            f.warnings.push_back("sensor fault on channel " + std::to_string(k));
            continue;
        }
        const auto step = pid_step(gains_for(k), controllers_[k], f.setpoints[k], sample.measured[k], dt);
        controllers_[k] = step.state;
        f.currents[k] = drive_model(step.current, i_max, dt);
    }

    ArrayCommand cmd;
    cmd.tick = static_cast<std::uint32_t>(tick_);
    cmd.setpoints = f.setpoints;
    cmd.currents = f.currents;
    try {
        backend_->apply(cmd, dt);
    } catch (const BackendFault& e) {
        f.warnings.emplace_back(std::string("backend fault: ") + e.what());
        f.device_fault = true;
        device_fault_ = true;
        mode_ = DeviceMode::idle;
        program_.clear();
        for (auto& c : controllers_) c = ControllerState{};
    }

    if (mode_ == DeviceMode::pattern && !program_pending_ && tick_ + 1 - program_start_ >= program_.size()) {
        program_.clear();
        mode_ = DeviceMode::idle;
    }
    ++tick_;
    last_ = f;
    return f;
}

}  // namespace thermopalm
