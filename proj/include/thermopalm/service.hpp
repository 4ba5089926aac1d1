#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "thermopalm/device.hpp"
#include "thermopalm/session.hpp"
#include "thermopalm/telemetry.hpp"

namespace thermopalm {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    unsigned short port = 8765;  // 0 picks a free port
    SessionConfig session;       // device, gains, observer, exp1 defaults, output_dir, seed
    std::string patterns_dir;    // empty: canonical patterns only
    std::size_t stream_queue = 64;
    std::size_t jitter_window = 1 << 16;  // most recent ticks kept for percentiles
};

struct LoopStats {
    std::uint64_t ticks = 0;
    std::uint64_t overruns = 0;  // ticks that started a full period late
    double p50_jitter_us = 0;
    double p99_jitter_us = 0;
    double max_jitter_us = 0;
    double period_us = 0;
    bool realtime = false;  // control thread got SCHED_FIFO
};

/// One message on /stream; serialized by the socket thread.
struct StreamMessage {
    std::shared_ptr<const nlohmann::ordered_json> body;
};

struct HttpReply {
    int status = 200;
    nlohmann::ordered_json body;
};

struct Net;

/// Single-process bench service: periodic control thread, serialized command
/// queue, HTTP/JSON routes and the /stream WebSocket on one port.
///
/// Only the control thread touches the Device and the live session. Other
/// threads post commands and wait for the reply.
class Service {
public:
    explicit Service(ServiceOptions opts);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Bind the port and start the control, log and accept threads.
    void start();
    /// Idempotent.
    void stop();
    bool running() const { return running_; }
    unsigned short port() const { return port_; }

    /// Route dispatch without the socket layer.
    HttpReply handle(const std::string& method, const std::string& target, const std::string& body);

    LoopStats loop_stats() const;
    Broadcaster<StreamMessage>& stream() { return stream_; }
    std::size_t stream_dropped() const;

private:
    struct Live;
    using Command = std::function<HttpReply()>;

    HttpReply submit(Command cmd, std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));

    HttpReply get_state();
    HttpReply post_session(const nlohmann::ordered_json& body);
    HttpReply post_response(const nlohmann::ordered_json& body);
    HttpReply get_patterns();
    HttpReply post_play(const nlohmann::ordered_json& body);

    // control thread
    void control_loop();
    void advance_session(const ArrayFrame& f);
    void emit(const std::string& kind, const nlohmann::ordered_json& payload);
    nlohmann::ordered_json session_json() const;
    void finish_session(const std::string& status, const std::string& error);
    HttpReply accept_response(const std::string& response, const std::string& source);

    // log thread
    void post_log(std::function<void(SessionLog&)> job);
    void log_loop();

    double clock_s() const;

    ServiceOptions opts_;
    std::atomic<bool> running_{false};
    std::atomic<bool> realtime_{false};
    unsigned short port_ = 0;
    std::chrono::steady_clock::time_point t0_;

    std::unique_ptr<Device> device_;
    SimBackend* sim_ = nullptr;
    std::unique_ptr<Live> live_;
    std::optional<SessionConfig> configured_;
    std::string last_status_ = "idle";
    nlohmann::ordered_json last_summary_;

    std::mutex cmd_mu_;
    std::deque<std::pair<Command, std::shared_ptr<std::promise<HttpReply>>>> commands_;

    mutable std::mutex stats_mu_;
    std::vector<double> jitter_us_;
    std::size_t jitter_next_ = 0;
    std::uint64_t ticks_ = 0;
    std::uint64_t overruns_ = 0;
    double max_jitter_us_ = 0;

    Broadcaster<StreamMessage> stream_;
    std::atomic<std::size_t> stream_dropped_{0};

    std::unique_ptr<SessionLog> log_;
    std::mutex log_mu_;
    std::condition_variable log_cv_;
    std::deque<std::function<void(SessionLog&)>> log_jobs_;
    bool log_stop_ = false;

    friend struct Net;
    std::unique_ptr<Net> net_;

    std::thread control_thread_, log_thread_;
};

}  // namespace thermopalm
