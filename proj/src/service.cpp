#include "thermopalm/service.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <sys/socket.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <pthread.h>
#include <sched.h>

#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "thermopalm/errors.hpp"
#include "thermopalm/pattern.hpp"

namespace thermopalm {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

HttpReply error_reply(int status, const std::string& code, const std::string& message,
                      const std::vector<std::string>& details = {}) {
    ojson err = {{"code", code}, {"message", message}};
    if (!details.empty()) err["details"] = details;
    return {status, {{"error", err}}};
}

std::int64_t to_us(double t_s) { return std::llround(t_s * 1e6); }

std::unique_ptr<Device> make_device(const SessionConfig& cfg, SimBackend** sim_out) {
    const auto models = spread_channel_models(cfg.plant_model(), cfg.channel_spread, derive_seed(cfg.seed, 3));
    auto sim = make_sim_backend(cfg.device, models, derive_seed(cfg.seed, 2));
    *sim_out = sim.get();
    std::unique_ptr<DeviceBackend> backend;
    if (cfg.device.backend == BackendKind::serial)
        backend = std::make_unique<SerialBackend>(std::make_unique<LoopbackFirmware>(std::move(sim), cfg.device.tick_hz));
    else
        backend = std::move(sim);
    return std::make_unique<Device>(cfg.device, std::move(backend), cfg.gains);
}

std::optional<PatternDocument> find_pattern(const std::string& dir, const std::string& name, double envelope) {
    if (!dir.empty()) {
        const auto p = fs::path(dir) / (name + ".json");
        if (fs::exists(p)) return pattern_file_load(p.string(), envelope);
    }
    if (auto c = find_canonical_pattern(name)) return PatternDocument(*c);
    return std::nullopt;
}

StimulusProgram hold_program(const Pattern& p, double hold_s) {
    StimulusProgram prog;
    prog.duration_s = hold_s;
    for (auto k : cells_of(p.active_cells)) prog.events.push_back({0.0, hold_s, k, p.offset_c});
    return prog;
}

}  // namespace

// ------------------------------------------------------------- live session

struct Service::Live {
    enum class Phase { rest, reference, isi, test, awaiting };

    SessionConfig cfg;
    std::string responder = "console";
    std::optional<SimulatedObserver> observer;
    std::mt19937_64 rt_rng;
    std::size_t condition = 0;
    StaircaseConfig sc;
    StaircaseState st;
    CellSet cells;
    StimulusPair pair{0, 0};
    Phase phase = Phase::rest;
    std::uint64_t left = 0;
    std::uint64_t stim_ticks = 0, tail_ticks = 0;
    double acc = 0, achieved_ref = 0, achieved_test = 0;
    int acc_n = 0;
    int trial_index = 0;
    int trials_in_condition = 0;
    double off_time = 0;
    std::int64_t auto_in = -1;
    double started = 0;
    ojson conditions = ojson::array();

    static const char* name(Phase p) {
        switch (p) {
            case Phase::rest: return "rest";
            case Phase::reference: return "reference";
            case Phase::isi: return "isi";
            case Phase::test: return "test";
            case Phase::awaiting: return "awaiting_response";
        }
        return "?";
    }

    std::uint64_t ticks(double s) const {
        return static_cast<std::uint64_t>(std::llround(s * cfg.device.tick_hz));
    }

    void begin_condition() {
        const auto& c = cfg.exp1.conditions[condition];
        sc = cfg.exp1.staircase;
        sc.ambient_c = cfg.device.ambient_c;
        sc.pattern = c.pattern;
        sc.polarity = c.polarity;
        cells = find_canonical_pattern(c.pattern)->active_cells;
        st = StaircaseState::start(sc);
        trials_in_condition = 0;
        phase = Phase::rest;
        left = ticks(cfg.exp1.rest_s);
    }

    ojson condition_json() const {
        const auto& c = cfg.exp1.conditions[condition];
        return {{"pattern", c.pattern}, {"polarity", to_string(c.polarity)}};
    }
};

// -------------------------------------------------------------- networking

struct Net {
    Service* svc;
    asio::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread accept_thread;
    std::mutex mu;
    std::map<int, std::shared_ptr<tcp::socket>> sockets;
    std::vector<std::pair<std::thread, std::shared_ptr<std::atomic<bool>>>> workers;
    int next_id = 0;

    void accept_loop() {
        while (svc->running_) {
            auto sock = std::make_shared<tcp::socket>(ioc);
            beast::error_code ec;
            acceptor.accept(*sock, ec);
            if (ec || !svc->running_) break;
            std::lock_guard lock(mu);
            // reap finished workers
            for (auto it = workers.begin(); it != workers.end();) {
                if (*it->second) {
                    it->first.join();
                    it = workers.erase(it);
                } else {
                    ++it;
                }
            }
            const int id = next_id++;
            sockets[id] = sock;
            auto done = std::make_shared<std::atomic<bool>>(false);
            workers.emplace_back(std::thread([this, id, sock, done] {
                serve(*sock);
                {
                    std::lock_guard l(mu);
                    sockets.erase(id);
                }
                *done = true;
            }),
                                 done);
        }
    }

    void serve(tcp::socket& sock) {
        beast::flat_buffer buffer;
        for (;;) {
            http::request<http::string_body> req;
            beast::error_code ec;
            http::read(sock, buffer, req, ec);
            if (ec) return;
            std::string target(req.target());
            if (auto q = target.find('?'); q != std::string::npos) target.resize(q);
            if (websocket::is_upgrade(req)) {
                if (target == "/stream") {
                    stream(std::move(sock), req);
                    return;
                }
                respond(sock, req, error_reply(404, "not_found", "websocket endpoint is /stream"));
                return;
            }
            HttpReply reply;
            try {
                reply = svc->handle(std::string(req.method_string()), target, req.body());
            } catch (const std::exception& e) {
                reply = error_reply(500, "internal", e.what());
            }
            if (!respond(sock, req, reply) || !req.keep_alive()) break;
        }
        beast::error_code ec;
        sock.shutdown(tcp::socket::shutdown_send, ec);
    }

    static bool respond(tcp::socket& sock, const http::request<http::string_body>& req, const HttpReply& reply) {
        http::response<http::string_body> res{static_cast<http::status>(reply.status), req.version()};
        res.set(http::field::server, "thermopalm");
        res.set(http::field::content_type, "application/json");
        res.set(http::field::access_control_allow_origin, "*");
        res.keep_alive(req.keep_alive());
        res.body() = reply.body.dump();
        res.prepare_payload();
        beast::error_code ec;
        http::write(sock, res, ec);
        return !ec;
    }

    void stream(tcp::socket sock, const http::request<http::string_body>& req) {
        websocket::stream<tcp::socket> ws(std::move(sock));
        beast::error_code ec;
        ws.accept(req, ec);
        if (ec) return;
        auto sub = svc->stream_.subscribe(svc->opts_.stream_queue);
        auto send = [&](const ojson& j) {
            ws.text(true);
            ws.write(asio::buffer(j.dump()), ec);
            return !ec;
        };
        const ojson hello = {{"type", "hello"},
                             {"telemetry_hz", svc->opts_.session.device.telemetry_hz},
                             {"ambient_c", svc->opts_.session.device.ambient_c},
                             {"envelope_c", svc->opts_.session.device.safety_envelope_c}};
        bool ok = send(hello);
        while (ok && svc->running_) {
            if (auto msg = sub->pop_for(std::chrono::milliseconds(50))) ok = send(*msg->body);
            if (!ok) break;
            while (ok && ws.next_layer().available() > 0) {
                beast::flat_buffer in;
                ws.read(in, ec);
                if (ec) {
                    ok = false;
                    break;
                }
                ok = send(client_message(beast::buffers_to_string(in.data())));
            }
        }
        svc->stream_.unsubscribe(sub);
        svc->stream_dropped_ += sub->dropped();
        if (ws.is_open()) ws.close(websocket::close_code::normal, ec);
    }

    ojson client_message(const std::string& text) {
        ojson msg;
        try {
            msg = ojson::parse(text);
        } catch (const nlohmann::json::exception&) {
            return {{"type", "reply"}, {"status", 400}, {"body", error_reply(400, "malformed", "not JSON").body}};
        }
        const std::string type = msg.value("type", "");
        if (type == "ping") return {{"type", "pong"}};
        if (type == "response") {
            ojson body = msg;
            body.erase("type");
            auto r = svc->handle("POST", "/response", body.dump());
            return {{"type", "reply"}, {"status", r.status}, {"body", r.body}};
        }
        return {{"type", "reply"},
                {"status", 400},
                {"body", error_reply(400, "unknown_type", "expected type ping or response").body}};
    }

    void stop() {
        beast::error_code ec;
        // unblock accept() with a throwaway connection
        {
            tcp::socket poke(ioc);
            poke.connect(acceptor.local_endpoint(ec), ec);
        }
        if (accept_thread.joinable()) accept_thread.join();
        acceptor.close(ec);
        std::vector<std::pair<std::thread, std::shared_ptr<std::atomic<bool>>>> w;
        {
            std::lock_guard lock(mu);
            for (auto& [id, s] : sockets) ::shutdown(s->native_handle(), SHUT_RDWR);
            w.swap(workers);
        }
        for (auto& [t, done] : w) t.join();
    }
};

// ----------------------------------------------------------------- service

Service::Service(ServiceOptions opts) : opts_(std::move(opts)) {
    opts_.session.validate();
    device_ = make_device(opts_.session, &sim_);
    jitter_us_.reserve(opts_.jitter_window);
}

Service::~Service() { stop(); }

double Service::clock_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
}

void Service::start() {
    if (running_) return;
    log_ = std::make_unique<SessionLog>(opts_.session.output_dir, opts_.session.session_id, opts_.session.seed);
    net_ = std::make_unique<Net>();
    net_->svc = this;
    beast::error_code ec;
    const tcp::endpoint ep(asio::ip::make_address(opts_.host, ec), opts_.port);
    if (ec) throw InvalidArgument("bad host address: " + opts_.host);
    net_->acceptor.open(ep.protocol(), ec);
    if (!ec) net_->acceptor.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) net_->acceptor.bind(ep, ec);
    if (!ec) net_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw Error("cannot listen on " + opts_.host + ":" + std::to_string(opts_.port) + ": " + ec.message());
    port_ = net_->acceptor.local_endpoint().port();

    t0_ = std::chrono::steady_clock::now();
    running_ = true;
    log_stop_ = false;
    log_thread_ = std::thread([this] { log_loop(); });
    control_thread_ = std::thread([this] { control_loop(); });
    net_->accept_thread = std::thread([this] { net_->accept_loop(); });
    emit("service-start", {{"port", port_}, {"tick_hz", device_->config().tick_hz}});
}

void Service::stop() {
    if (!running_.exchange(false)) return;
    if (net_) net_->stop();
    if (control_thread_.joinable()) control_thread_.join();
    {
        std::lock_guard lock(cmd_mu_);
        for (auto& [cmd, prom] : commands_) prom->set_value(error_reply(503, "stopping", "service is stopping"));
        commands_.clear();
    }
    if (live_) finish_session("aborted", "service stopped");
    emit("service-stop", ojson::object());
    stream_.close_all();
    {
        std::lock_guard lock(log_mu_);
        log_stop_ = true;
    }
    log_cv_.notify_all();
    if (log_thread_.joinable()) log_thread_.join();
    log_->flush();
    net_.reset();
}

// ------------------------------------------------------------------ logging

void Service::post_log(std::function<void(SessionLog&)> job) {
    {
        std::lock_guard lock(log_mu_);
        log_jobs_.push_back(std::move(job));
    }
    log_cv_.notify_one();
}

void Service::log_loop() {
    for (;;) {
        std::deque<std::function<void(SessionLog&)>> batch;
        {
            std::unique_lock lock(log_mu_);
            log_cv_.wait(lock, [&] { return log_stop_ || !log_jobs_.empty(); });
            batch.swap(log_jobs_);
            if (batch.empty() && log_stop_) return;
        }
        for (auto& job : batch) job(*log_);
        log_->flush();
    }
}

void Service::emit(const std::string& kind, const ojson& payload) {
    const double t = clock_s();
    post_log([t, kind, payload](SessionLog& l) { l.event(t, kind, payload); });
    auto body = std::make_shared<ojson>(ojson{{"type", "event"}, {"t_us", to_us(t)}, {"kind", kind}, {"payload", payload}});
    stream_.publish(StreamMessage{std::move(body)});
}

// ------------------------------------------------------------- control loop

HttpReply Service::submit(Command cmd, std::chrono::milliseconds timeout) {
    if (!running_) {
        // not started: run inline (single-threaded use, tests)
        return cmd();
    }
    auto prom = std::make_shared<std::promise<HttpReply>>();
    auto fut = prom->get_future();
    {
        std::lock_guard lock(cmd_mu_);
        commands_.emplace_back(std::move(cmd), prom);
    }
    if (fut.wait_for(timeout) != std::future_status::ready)
        return error_reply(503, "timeout", "control loop did not answer in time");
    return fut.get();
}

void Service::control_loop() {
    using clock = std::chrono::steady_clock;
    sched_param sp{};
    sp.sched_priority = std::max(1, sched_get_priority_max(SCHED_FIFO) / 2);
    realtime_ = pthread_setschedparam(pthread_self(), SCHED_FIFO, &sp) == 0;
    auto next = clock::now();
    std::uint64_t telemetry_count = 0;
    bool clamping = false, faulted = false;
    CellSet faults;
    while (running_) {
        const auto period = std::chrono::duration_cast<clock::duration>(
            std::chrono::duration<double>(1.0 / device_->config().tick_hz));
        next += period;
        std::this_thread::sleep_until(next);
        const auto woke = clock::now();
        const double jitter = std::chrono::duration<double, std::micro>(woke - next).count();
        {
            std::lock_guard lock(stats_mu_);
            if (jitter_us_.size() < opts_.jitter_window)
                jitter_us_.push_back(jitter);
            else
                jitter_us_[jitter_next_] = jitter;
            jitter_next_ = (jitter_next_ + 1) % opts_.jitter_window;
            max_jitter_us_ = std::max(max_jitter_us_, jitter);
            ++ticks_;
            if (woke - next >= period) ++overruns_;
        }
        if (woke - next >= period) next = woke;

        std::deque<std::pair<Command, std::shared_ptr<std::promise<HttpReply>>>> batch;
        {
            std::lock_guard lock(cmd_mu_);
            batch.swap(commands_);
        }
        for (auto& [cmd, prom] : batch) {
            try {
                prom->set_value(cmd());
            } catch (const ValidationErrors& e) {
                prom->set_value(error_reply(422, "validation", "invalid request", e.problems()));
            } catch (const std::exception& e) {
                prom->set_value(error_reply(409, "rejected", e.what()));
            }
        }

        const ArrayFrame& f = (device_->tick(), device_->last_frame());
        if (f.clamp_events > 0 && !clamping) emit("clamp", {{"tick", f.tick_index}, {"cells_clamped", f.clamp_events}});
        clamping = f.clamp_events > 0;
        if (f.channel_faults != faults) {
            ojson cells = ojson::array();
            for (auto k : cells_of(f.channel_faults)) cells.push_back(k);
            emit("fault", {{"tick", f.tick_index}, {"kind", "channel"}, {"channels", cells}});
            faults = f.channel_faults;
        }
        if (f.device_fault && !faulted) {
            emit("fault", {{"tick", f.tick_index}, {"kind", "device"}, {"warnings", f.warnings}});
            if (live_) finish_session("aborted", "device fault");
        }
        faulted = f.device_fault || device_->faulted();

        advance_session(f);

        const auto every = std::max<std::uint64_t>(
            1, static_cast<std::uint64_t>(std::llround(device_->config().tick_hz / device_->config().telemetry_hz)));
        if (telemetry_count++ % every == 0) {
            const double t = clock_s();
            auto body = std::make_shared<ojson>(ojson{{"type", "telemetry"}, {"t_us", to_us(t)}});
            (*body)["frame"] = to_json(f);
            stream_.publish(StreamMessage{body});
            ArrayFrame copy = f;
            post_log([t, copy = std::move(copy)](SessionLog& l) { l.telemetry(t, copy); });
        }
    }
}

void Service::advance_session(const ArrayFrame& f) {
    if (!live_) return;
    auto& L = *live_;
    using P = Live::Phase;
    const double ambient = device_->config().ambient_c;

    auto accumulate = [&] {
        if (L.left <= L.tail_ticks) {
            double s = 0;
            int n = 0;
            for (auto k : cells_of(L.cells))
                if (std::isfinite(f.measured[k])) {
                    s += f.measured[k];
                    ++n;
                }
            if (n) {
                L.acc += s / n;
                ++L.acc_n;
            }
        }
    };
    auto present = [&](const char* role, double temp, P phase) {
        CellArray sp = filled(ambient);
        for (auto k : cells_of(L.cells)) sp[k] = temp;
        device_->set_direct_setpoints(sp);
        device_->set_mode(DeviceMode::direct);
        L.phase = phase;
        L.left = L.stim_ticks;
        L.acc = 0;
        L.acc_n = 0;
        ojson cells = ojson::array();
        for (auto k : cells_of(L.cells)) cells.push_back(k);
        emit("stimulus-on", {{"trial", L.trial_index}, {"role", role}, {"setpoint_c", temp}, {"cells", cells}});
    };
    auto achieved = [&] { return L.acc_n ? L.acc / L.acc_n : std::nan(""); };

    switch (L.phase) {
        case P::rest:
            if (L.left > 0) --L.left;
            if (L.left == 0) {
                L.pair = staircase_next_stimulus(L.sc, L.st);
                present("reference", L.pair.reference_c, P::reference);
            }
            break;
        case P::reference:
            accumulate();
            if (--L.left == 0) {
                L.achieved_ref = achieved();
                if (L.sc.isi_s > 0) {
                    device_->set_direct_setpoints(filled(ambient));
                    L.phase = P::isi;
                    L.left = L.ticks(L.sc.isi_s);
                } else {
                    present("test", L.pair.test_c, P::test);
                }
            }
            break;
        case P::isi:
            if (--L.left == 0) present("test", L.pair.test_c, P::test);
            break;
        case P::test:
            accumulate();
            if (--L.left == 0) {
                L.achieved_test = achieved();
                device_->set_mode(DeviceMode::idle);
                L.phase = P::awaiting;
                L.off_time = clock_s();
                emit("stimulus-off", {{"trial", L.trial_index}, {"awaiting_response", true}});
                if (L.observer) {
                    const double u = static_cast<double>(L.rt_rng() >> 11) * 0x1.0p-53;
                    L.auto_in = static_cast<std::int64_t>(std::max<std::uint64_t>(1, L.ticks(0.4 + 0.6 * u)));
                }
            }
            break;
        case P::awaiting:
            if (L.observer && L.auto_in > 0 && --L.auto_in == 0) {
                const double d = std::abs(L.achieved_test - L.achieved_ref);
                const Response r = L.observer->respond(std::isfinite(d) ? d : 0.0);
                accept_response(to_string(r), "observer");
            }
            break;
    }
}

HttpReply Service::accept_response(const std::string& response, const std::string& source) {
    if (!live_) return error_reply(409, "no_session", "no session is running");
    auto& L = *live_;
    if (L.phase != Live::Phase::awaiting) {
        const std::string why = L.phase == Live::Phase::rest
                                    ? "no trial awaiting a response (between trials)"
                                    : std::string("stimulus still playing (") + Live::name(L.phase) + ")";
        return error_reply(409, "outside_response_window", why);
    }
    Response r;
    try {
        r = response_from_string(response);
    } catch (const Error&) {
        return error_reply(400, "bad_response", "response must be \"same\" or \"different\"");
    }
    if (r == Response::none) return error_reply(400, "bad_response", "response must be \"same\" or \"different\"");

    const double now = clock_s();
    TrialRecord rec;
    rec.session_id = L.cfg.session_id;
    rec.participant_id = L.cfg.participant_id;
    rec.experiment = "exp1";
    rec.seed = L.cfg.seed;
    rec.trial_index = L.trial_index;
    rec.condition = L.condition_json();
    rec.stimulus = {{"reference_c", L.pair.reference_c},
                    {"test_c", L.pair.test_c},
                    {"step_c", L.st.current_step},
                    {"achieved_reference_c", std::isfinite(L.achieved_ref) ? ojson(L.achieved_ref) : ojson(nullptr)},
                    {"achieved_test_c", std::isfinite(L.achieved_test) ? ojson(L.achieved_test) : ojson(nullptr)}};
    rec.response = to_string(r);
    rec.ground_truth_different = true;
    rec.correct = r == Response::different;
    rec.response_time_s = now - L.off_time;
    rec.session_time_s = now - L.started;
    post_log([rec](SessionLog& l) { l.trial(rec); });
    emit("response", {{"trial", L.trial_index}, {"response", rec.response}, {"source", source},
                      {"rt_s", rec.response_time_s}});

    const int before = L.st.reversals();
    L.st = staircase_update(L.sc, L.st, r);
    if (L.st.reversals() > before)
        emit("reversal", {{"condition", L.condition_json()}, {"reversal", L.st.reversals()},
                          {"step_c", L.st.reversal_steps.back()}});
    ++L.trial_index;
    ++L.trials_in_condition;
    const ojson staircase = {{"step_c", L.st.current_step},
                             {"trial_count", L.st.trial_count},
                             {"reversals", L.st.reversals()},
                             {"finished", L.st.finished}};
    const int answered = rec.trial_index;

    if (L.st.finished || L.trials_in_condition >= L.cfg.exp1.max_trials) {
        ojson c = L.condition_json();
        c["trials"] = L.trials_in_condition;
        c["reversals"] = L.st.reversals();
        c["finished"] = L.st.finished;
        c["reversal_steps_c"] = L.st.reversal_steps;
        c["jnd_c"] = L.st.finished ? ojson(jnd_estimate(L.sc, L.st)) : ojson(nullptr);
        L.conditions.push_back(c);
        emit("condition-end", c);
        if (++L.condition >= L.cfg.exp1.conditions.size()) {
            finish_session("completed", "");
            return {200, {{"accepted", true}, {"trial", answered}, {"staircase", staircase}, {"session", "completed"}}};
        }
        L.begin_condition();
    } else {
        L.phase = Live::Phase::rest;
        L.left = L.ticks(L.cfg.exp1.rest_s);
    }
    return {200, {{"accepted", true}, {"trial", answered}, {"staircase", staircase}, {"next_trial", L.trial_index}}};
}

void Service::finish_session(const std::string& status, const std::string& error) {
    if (!live_) return;
    auto& L = *live_;
    device_->cancel_program();
    device_->set_mode(DeviceMode::idle);
    ojson summary;
    summary["schema"] = kArtifactSchema;
    summary["seed"] = L.cfg.seed;
    summary["session_id"] = L.cfg.session_id;
    summary["participant_id"] = L.cfg.participant_id;
    summary["experiment"] = "exp1";
    summary["status"] = status;
    summary["error"] = error.empty() ? ojson(nullptr) : ojson(error);
    summary["trials"] = L.trial_index;
    summary["responder"] = L.responder;
    summary["config"] = to_json(L.cfg);
    summary["results"] = {{"conditions", L.conditions},
                          {"staircase_equilibrium_p", staircase_equilibrium(L.cfg.exp1.staircase)}};
    summary["wall_clock"] = {{"session_time_s", clock_s() - L.started}};
    emit("session-end", {{"status", status}, {"error", summary["error"]}, {"trials", L.trial_index}});
    post_log([summary](SessionLog& l) { l.write_summary(summary); });
    last_status_ = status;
    last_summary_ = summary;
    live_.reset();
}

ojson Service::session_json() const {
    if (!live_) {
        ojson j = {{"status", last_status_}};
        if (!last_summary_.is_null()) j["last_summary"] = last_summary_["results"];
        return j;
    }
    const auto& L = *live_;
    return {{"status", "running"},
            {"session_id", L.cfg.session_id},
            {"participant_id", L.cfg.participant_id},
            {"experiment", "exp1"},
            {"responder", L.responder},
            {"condition_index", L.condition},
            {"condition", L.condition_json()},
            {"trial", L.trial_index},
            {"phase", Live::name(L.phase)},
            {"awaiting_response", L.phase == Live::Phase::awaiting},
            {"staircase",
             {{"step_c", L.st.current_step}, {"trial_count", L.st.trial_count}, {"reversals", L.st.reversals()}}}};
}

LoopStats Service::loop_stats() const {
    std::lock_guard lock(stats_mu_);
    LoopStats s;
    s.ticks = ticks_;
    s.overruns = overruns_;
    s.max_jitter_us = max_jitter_us_;
    s.period_us = 1e6 / device_->config().tick_hz;
    s.realtime = realtime_;
    if (!jitter_us_.empty()) {
        std::vector<double> v = jitter_us_;
        auto pct = [&](double q) {
            const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
            std::nth_element(v.begin(), v.begin() + static_cast<long>(idx), v.end());
            return v[idx];
        };
        s.p50_jitter_us = pct(0.50);
        s.p99_jitter_us = pct(0.99);
    }
    return s;
}

std::size_t Service::stream_dropped() const { return stream_dropped_ + stream_.dropped(); }

// ------------------------------------------------------------------ routes

HttpReply Service::handle(const std::string& method, const std::string& target, const std::string& body) {
    ojson j;
    if (method == "POST") {
        try {
            j = body.empty() ? ojson::object() : ojson::parse(body);
        } catch (const nlohmann::json::parse_error& e) {
            return error_reply(400, "malformed", std::string("request body is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) return error_reply(400, "malformed", "request body must be a JSON object");
    }
    struct Route {
        const char* method;
        const char* path;
    };
    static const Route routes[] = {{"GET", "/state"},     {"POST", "/session"},       {"POST", "/response"},
                                   {"GET", "/patterns"},  {"POST", "/patterns/play"}};
    bool path_known = false;
    for (const auto& r : routes) path_known = path_known || target == r.path;
    if (!path_known && target != "/stream") return error_reply(404, "not_found", "no route " + target);

    if (target == "/state" && method == "GET") return get_state();
    if (target == "/session" && method == "POST") return post_session(j);
    if (target == "/response" && method == "POST") return post_response(j);
    if (target == "/patterns" && method == "GET") return get_patterns();
    if (target == "/patterns/play" && method == "POST") return post_play(j);
    if (target == "/stream") return error_reply(426, "upgrade_required", "/stream is a WebSocket endpoint");
    return error_reply(405, "method_not_allowed", method + " not allowed on " + target);
}

HttpReply Service::get_state() {
    return submit([this]() -> HttpReply {
        const auto stats = loop_stats();
        ojson frame = device_->tick_index() == 0 ? ojson(nullptr) : to_json(device_->last_frame());
        if (frame.is_null()) {
            ArrayFrame idle;
            idle.setpoints = filled(device_->config().ambient_c);
            idle.measured = filled(device_->config().ambient_c);
            idle.external = filled(device_->config().ambient_c);
            frame = to_json(idle);
        }
        return {200,
                {{"schema", kArtifactSchema},
                 {"device",
                  {{"mode", to_string(device_->mode())},
                   {"faulted", device_->faulted()},
                   {"backend", device_->backend().name()},
                   {"ambient_c", device_->config().ambient_c},
                   {"envelope_c", device_->config().safety_envelope_c}}},
                 {"frame", frame},
                 {"session", session_json()},
                 {"loop",
                  {{"tick_hz", device_->config().tick_hz},
                   {"ticks", stats.ticks},
                   {"overruns", stats.overruns},
                   {"jitter_p50_us", stats.p50_jitter_us},
                   {"jitter_p99_us", stats.p99_jitter_us},
                   {"jitter_max_us", stats.max_jitter_us},
                   {"realtime", stats.realtime}}},
                 {"stream", {{"subscribers", stream_.subscribers()}, {"dropped", stream_dropped()}}}}};
    });
}

HttpReply Service::post_session(const ojson& body) {
    const std::string action = body.value("action", "");
    if (action != "start" && action != "stop" && action != "configure" && action != "clear_fault")
        return error_reply(400, "bad_action", "action must be one of start, stop, configure, clear_fault");

    std::optional<SessionConfig> cfg;
    if (body.contains("config")) {
        ojson c = body.at("config");
        if (!c.is_object()) return error_reply(400, "malformed", "config must be an object");
        if (!c.contains("schema")) c["schema"] = kArtifactSchema;
        if (!c.contains("output_dir")) c["output_dir"] = opts_.session.output_dir;
        try {
            cfg = session_config_from_json(c.dump());
        } catch (const ValidationErrors& e) {
            return error_reply(422, "validation", "invalid session config", e.problems());
        }
        if (cfg->experiment != "exp1")
            return error_reply(422, "validation", "live sessions run the exp1 staircase",
                               {"experiment: use the run subcommand for exp2..exp4"});
    }
    const std::string responder = body.value("responder", "console");
    if (responder != "console" && responder != "observer")
        return error_reply(400, "bad_responder", "responder must be console or observer");

    return submit([this, action, cfg, responder]() -> HttpReply {
        if (action == "configure") {
            if (!cfg) return error_reply(400, "malformed", "configure needs a config object");
            if (live_) return error_reply(409, "busy", "a session is running");
            configured_ = cfg;
            emit("configure", {{"session_id", cfg->session_id}, {"participant_id", cfg->participant_id}});
            return {200, {{"configured", true}, {"config", to_json(*cfg)}}};
        }
        if (action == "stop") {
            if (!live_) return error_reply(409, "no_session", "no session is running");
            finish_session("aborted", "stopped by operator");
            return {200, {{"stopped", true}, {"summary", last_summary_}}};
        }
        if (action == "clear_fault") {
            device_->clear_fault();
            emit("clear-fault", ojson::object());
            return {200, {{"faulted", device_->faulted()}}};
        }
        if (live_) return error_reply(409, "busy", "a session is already running");
        if (device_->faulted()) return error_reply(409, "faulted", "device fault latched; clear it first");
        SessionConfig c = cfg ? *cfg : configured_ ? *configured_ : opts_.session;
        auto live = std::make_unique<Live>();
        live->cfg = c;
        live->responder = responder;
        if (responder == "observer") {
            ObserverModel om = c.observer;
            om.seed = derive_seed(c.seed, 1);
            live->observer.emplace(om);
        }
        live->rt_rng.seed(derive_seed(c.seed, 5));
        live->stim_ticks = live->ticks(c.exp1.staircase.stimulus_duration_s);
        live->tail_ticks = std::max<std::uint64_t>(1, live->ticks(0.5));
        live->started = clock_s();
        live->begin_condition();
        if (device_->config().ambient_c != c.device.ambient_c ||
            device_->config().safety_envelope_c != c.device.safety_envelope_c)
            return error_reply(409, "device_mismatch",
                               "session device settings differ from the running device; restart serve with that config");
        device_->cancel_program();
        device_->set_mode(DeviceMode::idle);
        live_ = std::move(live);
        last_status_ = "running";
        emit("session-start", {{"session_id", c.session_id},
                               {"participant_id", c.participant_id},
                               {"experiment", "exp1"},
                               {"responder", responder},
                               {"seed", c.seed}});
        return {200, {{"started", true}, {"session", session_json()}}};
    });
}

HttpReply Service::post_response(const ojson& body) {
    if (body.contains("questionnaire")) {
        const auto& q = body.at("questionnaire");
        if (!q.is_object() || q.empty()) return error_reply(400, "malformed", "questionnaire must be a non-empty object");
        for (auto it = q.begin(); it != q.end(); ++it)
            if (!it->is_number_integer() || it->get<int>() < 1 || it->get<int>() > 7)
                return error_reply(422, "validation", "questionnaire items are Likert scores 1..7",
                                   {"questionnaire." + it.key() + ": expected an integer 1..7"});
        return submit([this, q]() -> HttpReply {
            emit("questionnaire", {{"items", q}, {"session_id", live_ ? live_->cfg.session_id : ""}});
            return {200, {{"accepted", true}, {"kind", "questionnaire"}}};
        });
    }
    if (!body.contains("response") || !body.at("response").is_string())
        return error_reply(400, "malformed", "expected {\"response\": \"same\"|\"different\"} or a questionnaire");
    const std::string response = body.at("response").get<std::string>();
    return submit([this, response] { return accept_response(response, "console"); });
}

HttpReply Service::get_patterns() {
    ojson list = ojson::array();
    std::set<std::string> names;
    const double env = opts_.session.device.safety_envelope_c;
    if (!opts_.patterns_dir.empty() && fs::is_directory(opts_.patterns_dir)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(opts_.patterns_dir))
            if (e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ojson entry = {{"name", f.stem().string()}, {"source", f.filename().string()}};
            try {
                entry["document"] = ojson::parse(pattern_to_json(pattern_file_load(f.string(), env)));
            } catch (const Error& e) {
                entry["error"] = e.what();
            }
            names.insert(f.stem().string());
            list.push_back(entry);
        }
    }
    for (const auto& p : canonical_patterns()) {
        if (names.count(p.name)) continue;
        list.push_back({{"name", p.name},
                        {"source", "builtin"},
                        {"document", ojson::parse(pattern_to_json(PatternDocument(p)))}});
    }
    return {200, {{"patterns", list}}};
}

HttpReply Service::post_play(const ojson& body) {
    const double env = opts_.session.device.safety_envelope_c;
    std::optional<PatternDocument> doc;
    try {
        if (body.contains("document")) {
            doc = pattern_from_json(body.at("document").dump(), env);
        } else if (body.contains("name") && body.at("name").is_string()) {
            doc = find_pattern(opts_.patterns_dir, body.at("name").get<std::string>(), env);
            if (!doc) return error_reply(404, "unknown_pattern", "no pattern named " + body.at("name").get<std::string>());
        } else {
            return error_reply(400, "malformed", "expected \"name\" or \"document\"");
        }
    } catch (const SchemaError& e) {
        return error_reply(422, "validation", "pattern rejected", {e.what()});
    } catch (const Error& e) {
        return error_reply(422, "validation", "pattern rejected", {e.what()});
    }
    double hold_s = 3.0;
    if (body.contains("hold_s")) {
        if (!body.at("hold_s").is_number() || body.at("hold_s").get<double>() <= 0)
            return error_reply(422, "validation", "hold_s must be a positive number");
        hold_s = body.at("hold_s").get<double>();
    }
    StimulusProgram program;
    std::string name, kind;
    if (const auto* p = std::get_if<Pattern>(&*doc)) {
        Pattern pat = *p;
        if (body.contains("offset_c")) {
            if (!body.at("offset_c").is_number()) return error_reply(422, "validation", "offset_c must be a number");
            pat.offset_c = body.at("offset_c").get<double>();
            if (std::abs(pat.offset_c) > env)
                return error_reply(422, "validation", "offset_c exceeds the safety envelope");
        }
        program = hold_program(pat, hold_s);
        name = pat.name;
        kind = "pattern";
    } else {
        const auto& b = std::get<BrushSchedule>(*doc);
        program = b.program();
        name = "brush";
        kind = "brush";
    }
    return submit([this, program, name, kind]() -> HttpReply {
        if (live_) return error_reply(409, "busy", "a session is running");
        if (device_->faulted()) return error_reply(409, "faulted", "device fault latched");
        device_->play(program);
        emit("pattern-play", {{"name", name}, {"kind", kind}, {"duration_s", program.duration_s}});
        return {200, {{"playing", name}, {"kind", kind}, {"duration_s", program.duration_s}}};
    });
}

}  // namespace thermopalm
