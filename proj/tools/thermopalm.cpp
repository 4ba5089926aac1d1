// thermopalm: command-line front end for the bench library and service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "thermopalm/calibration.hpp"
#include "thermopalm/errors.hpp"
#include "thermopalm/observer.hpp"
#include "thermopalm/pattern.hpp"
#include "thermopalm/service.hpp"
#include "thermopalm/session.hpp"
#include "thermopalm/staircase.hpp"
#include "thermopalm/thermo.hpp"

using namespace thermopalm;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
};

SessionConfig load_config(const Globals& g) {
    SessionConfig c = g.config.empty() ? SessionConfig{} : load_session_config(g.config);
    if (g.seed) c.seed = *g.seed;
    return c;
}

std::string patterns_dir() {
    if (const char* env = std::getenv("THERMOPALM_PATTERNS")) return env;
    if (fs::is_directory("data/patterns")) return "data/patterns";
    return std::string(THERMOPALM_DATA_DIR) + "/patterns";
}

/// Writes to the file named by `path`, or stdout when empty or "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
            file_.open(path, std::ios::trunc);
            if (!file_) throw Error("cannot write " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

// key=value,key=value
std::map<std::string, double> parse_kv(const std::string& text) {
    std::map<std::string, double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw InvalidArgument("expected key=value, got \"" + item + "\"");
        try {
            std::size_t used = 0;
            const std::string v = item.substr(eq + 1);
            out[item.substr(0, eq)] = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
        } catch (const std::logic_error&) {
            throw InvalidArgument("not a number in \"" + item + "\"");
        }
    }
    return out;
}

// ------------------------------------------------------------------ budget

int cmd_budget(const Globals& g) {
    const auto tem = TemParams::device_default();
    const auto coolant = CoolantParams::device_default();
    const double per_module = tem.q_max + 0.5 * tem.r_electrical * tem.i_max * tem.i_max;
    const double array = array_heat_budget(tem);
    const double dt = coolant_delta_t(array, coolant);
    const auto mdt = max_delta_t(tem, Kelvin::from_celsius(30.0));
    Output out(g.out);
    auto& os = out.stream();
    os << std::fixed;
    os << "quantity                          value      unit\n";
    os << "Q_max per module                  " << std::setw(8) << std::setprecision(3) << tem.q_max << "   W\n";
    os << "I_max                             " << std::setw(8) << tem.i_max << "   A\n";
    os << "R_el                              " << std::setw(8) << tem.r_electrical << "   ohm\n";
    os << "Joule share R_el*I_max^2/2        " << std::setw(8) << 0.5 * tem.r_electrical * tem.i_max * tem.i_max
       << "   W\n";
    os << "heat per module                   " << std::setw(8) << per_module << "   W\n";
    os << "modules                           " << std::setw(8) << tem.n_modules << "\n";
    os << "Q_max_Array                       " << std::setw(8) << std::setprecision(2) << array << "   W\n";
    os << "coolant flow                      " << std::setw(8) << coolant.flow_rate * 1e6 << "   ml/s\n";
    os << "coolant dT at Q_max_Array         " << std::setw(8) << dt << "   K\n";
    os << "max dT (no load, T_h 30 C)        " << std::setw(8) << std::setprecision(1) << mdt.delta_t_max
       << "   K at " << std::setprecision(3) << mdt.i_opt << " A\n";
    return kOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    double step = 10.0;
    std::string mode;
    bool open_loop = false;
    double current = 0.35;
    double duration = 10.0;
    bool noise = false;
    std::string model;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
    SessionConfig cfg = load_config(g);
    if (!a.model.empty()) cfg.plant_model_file = a.model;
    cfg.validate();
    double step = a.step;
    if (!a.mode.empty()) {
        if (a.mode != "warm" && a.mode != "cool") throw InvalidArgument("--mode must be warm or cool");
        const double sign = a.mode == "warm" ? 1.0 : -1.0;
        if (step * sign < 0) throw InvalidArgument("--step sign contradicts --mode " + a.mode);
        step = sign * std::abs(step);
    }
    if (std::abs(step) > cfg.device.safety_envelope_c) throw InvalidArgument("--step exceeds the safety envelope");
    const auto models = uniform_channel_models(cfg.plant_model());
    ClosedLoopOptions opts;
    opts.tick_hz = cfg.device.tick_hz;
    opts.duration_s = a.duration;
    opts.ambient_c = cfg.device.ambient_c;
    opts.sensor_noise = a.noise;
    opts.seed = cfg.seed;
    const StepTrace trace = a.open_loop ? simulate_open_loop_step(models, {}, a.current, opts)
                                        : simulate_closed_loop_step(models, {}, cfg.gains, step, opts);
    Output out(g.out);
    auto& os = out.stream();
    os << "t_s,mean_cold_c";
    for (std::size_t k = 0; k < kCells; ++k) os << ",cold" << k << "_c";
    for (std::size_t k = 0; k < kCells; ++k) os << ",current" << k << "_a";
    os << ",coolant_c\n";
    os << std::setprecision(6);
    for (std::size_t i = 0; i < trace.mean_cold.size(); ++i) {
        os << i * trace.sample_period << ',' << trace.mean_cold[i];
        for (double v : trace.cold[i]) os << ',' << v;
        for (double v : trace.currents[i]) os << ',' << v;
        os << ',' << trace.coolant[i] << '\n';
    }
    try {
        const auto m = step_response_metrics(trace.mean_cold, trace.sample_period);
        std::cerr << std::fixed << std::setprecision(3) << "rise_time_s " << m.rise_time << "  overshoot_pct "
                  << m.overshoot_pct << "  settling_2pct_s " << m.settling_2pct << "\n";
    } catch (const InvalidArgument&) {
        std::cerr << "no step in trace\n";
    }
    return kOk;
}

// --------------------------------------------------------------- calibrate

int cmd_calibrate(const Globals& g, double warm, double cool) {
    const SessionConfig cfg = load_config(g);
    CalibrationOptions opts;
    opts.tick_hz = cfg.device.tick_hz;
    opts.ambient_c = cfg.device.ambient_c;
    opts.seed = cfg.seed;
    ChannelThermalModel base;
    base.skin_core_temp = cfg.device.ambient_c;
    const auto report = calibrate_plant_report(warm, cool, cfg.gains, {}, base, opts);
    const ojson fit = {{"target_warm_rise_s", warm},
                       {"target_cool_rise_s", cool},
                       {"warm_rise_s", report.warm_rise_s},
                       {"cool_rise_s", report.cool_rise_s},
                       {"evaluations", report.evaluations},
                       {"seed", cfg.seed},
                       {"gains", {{"kp", cfg.gains.kp}, {"ki", cfg.gains.ki}, {"kd", cfg.gains.kd}}}};
    const std::string path = g.out.empty() ? "plant_model.json" : g.out;
    save_plant_model_file(path, report.model, fit.dump());
    std::cout << std::fixed << std::setprecision(4) << "heat_capacity " << report.model.heat_capacity
              << " J/K  g_skin " << report.model.g_skin << " W/K  g_sink " << report.model.g_sink << " W/K\n"
              << std::setprecision(3) << "warm rise " << report.warm_rise_s << " s  cool rise " << report.cool_rise_s
              << " s  (" << report.evaluations << " evaluations)\nwrote " << path << "\n";
    return kOk;
}

// --------------------------------------------------------------- staircase

struct StaircaseArgs {
    std::string observer = "mu=2.5,sigma=0.8";
    int runs = 100;
    std::string pattern = "line";
    std::string polarity = "warm";
    bool session = false;
};

int cmd_staircase(const Globals& g, const StaircaseArgs& a) {
    SessionConfig cfg = load_config(g);
    for (const auto& [k, v] : parse_kv(a.observer)) {
        if (k == "mu")
            cfg.observer.threshold_mu = v;
        else if (k == "sigma")
            cfg.observer.slope_sigma = v;
        else if (k == "lapse")
            cfg.observer.lapse_rate = v;
        else if (k == "guess")
            cfg.observer.guess_rate = v;
        else
            throw InvalidArgument("--observer: unknown key " + k + " (mu, sigma, lapse, guess)");
    }
    if (a.runs < 1) throw InvalidArgument("--runs must be >= 1");
    if (a.session) {
        cfg.experiment = "exp1";
        if (!g.out.empty()) cfg.output_dir = g.out;
        const auto r = run_session(cfg);
        for (const auto& c : r.summary["results"]["conditions"])
            std::cout << c["pattern"].get<std::string>() << " " << c["polarity"].get<std::string>() << "  jnd "
                      << (c["jnd_c"].is_number() ? std::to_string(c["jnd_c"].get<double>()) : "unfinished") << " C  ("
                      << c["trials"] << " trials)\n";
        std::cout << "session written to " << r.directory << "\n";
        return r.aborted ? kRuntime : kOk;
    }

    StaircaseConfig sc = cfg.exp1.staircase;
    sc.ambient_c = cfg.device.ambient_c;
    sc.pattern = a.pattern;
    sc.polarity = polarity_from_string(a.polarity);
    sc.validate();
    cfg.observer.validate();
    const double p_eq = staircase_equilibrium(sc);
    std::vector<double> jnds;
    int unfinished = 0;
    int total_trials = 0;
    for (int run = 0; run < a.runs; ++run) {
        ObserverModel om = cfg.observer;
        om.seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(run));
        SimulatedObserver obs(om);
        auto st = StaircaseState::start(sc);
        while (!st.finished && st.trial_count < cfg.exp1.max_trials) {
            const auto s = staircase_next_stimulus(sc, st);
            st = staircase_update(sc, st, obs.respond(std::abs(s.delta_c())));
        }
        total_trials += st.trial_count;
        if (st.finished)
            jnds.push_back(jnd_estimate(sc, st));
        else
            ++unfinished;
    }
    double mean = 0, sd = 0;
    for (double v : jnds) mean += v;
    if (!jnds.empty()) mean /= static_cast<double>(jnds.size());
    for (double v : jnds) sd += (v - mean) * (v - mean);
    if (jnds.size() > 1) sd = std::sqrt(sd / static_cast<double>(jnds.size() - 1));

    ojson report = {{"runs", a.runs},
                    {"finished", jnds.size()},
                    {"unfinished", unfinished},
                    {"mean_trials", static_cast<double>(total_trials) / a.runs},
                    {"mean_jnd_c", mean},
                    {"sd_jnd_c", sd},
                    {"equilibrium_p", p_eq},
                    {"oracle_delta_c", cfg.observer.slope_sigma > 0 ? ojson(delta_at_probability(cfg.observer, p_eq))
                                                                     : ojson(cfg.observer.threshold_mu)},
                    {"observer",
                     {{"mu", cfg.observer.threshold_mu},
                      {"sigma", cfg.observer.slope_sigma},
                      {"lapse", cfg.observer.lapse_rate},
                      {"guess", cfg.observer.guess_rate}}},
                    {"seed", cfg.seed}};
    Output out(g.out);
    out.stream() << report.dump(2) << "\n";
    return kOk;
}

// ---------------------------------------------------------------- patterns

std::optional<PatternDocument> lookup(const std::string& name, double envelope) {
    const auto file = fs::path(patterns_dir()) / (name + ".json");
    if (fs::exists(file)) return pattern_file_load(file.string(), envelope);
    if (fs::exists(name)) return pattern_file_load(name, envelope);
    if (auto c = find_canonical_pattern(name)) return PatternDocument(*c);
    return std::nullopt;
}

int cmd_patterns_list(const Globals& g) {
    std::set<std::string> seen;
    Output out(g.out);
    auto& os = out.stream();
    const auto dir = patterns_dir();
    if (fs::is_directory(dir)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto doc = pattern_file_load(f.string());
            seen.insert(f.stem().string());
            if (const auto* p = std::get_if<Pattern>(&doc)) {
                os << std::left << std::setw(16) << f.stem().string() << "pattern  cells";
                for (auto k : cells_of(p->active_cells)) os << ' ' << k;
                os << "  offset " << p->offset_c << " C\n";
            } else {
                const auto& b = std::get<BrushSchedule>(doc);
                os << std::left << std::setw(16) << f.stem().string() << "brush    row " << b.row << "  "
                   << b.velocity_m_s << " m/s  offset " << b.offset_c << " C\n";
            }
        }
    }
    for (const auto& p : canonical_patterns()) {
        if (seen.count(p.name)) continue;
        os << std::left << std::setw(16) << p.name << "pattern  cells";
        for (auto k : cells_of(p.active_cells)) os << ' ' << k;
        os << "  offset " << p.offset_c << " C (builtin)\n";
    }
    return kOk;
}

int cmd_patterns_show(const Globals& g, const std::string& name) {
    const auto doc = lookup(name, 15.0);
    if (!doc) throw InvalidArgument("unknown pattern " + name);
    Output out(g.out);
    auto& os = out.stream();
    os << pattern_to_json(*doc) << "\n";
    if (const auto* p = std::get_if<Pattern>(&*doc)) {
        for (std::size_t r = 0; r < kRows; ++r) {
            for (std::size_t c = 0; c < kCols; ++c) os << (p->active_cells.test(r * kCols + c) ? " #" : " .");
            os << "\n";
        }
    } else {
        const auto& b = std::get<BrushSchedule>(*doc);
        os << "inter-onset " << b.inter_onset_s.num() << "/" << b.inter_onset_s.den() << " s = " << std::setprecision(4)
           << b.inter_onset_s.to_double() * 1000.0 << " ms\n";
    }
    return kOk;
}

ojson http_post(const std::string& url, const std::string& target, const ojson& body) {
    namespace beast = boost::beast;
    namespace http = beast::http;
    using tcp = boost::asio::ip::tcp;
    std::string rest = url;
    if (rest.rfind("http://", 0) == 0) rest = rest.substr(7);
    if (!rest.empty() && rest.back() == '/') rest.pop_back();
    const auto colon = rest.find(':');
    const std::string host = rest.substr(0, colon);
    const std::string port = colon == std::string::npos ? "80" : rest.substr(colon + 1);
    boost::asio::io_context ioc;
    tcp::resolver resolver(ioc);
    beast::tcp_stream stream(ioc);
    beast::error_code ec;
    const auto results = resolver.resolve(host, port, ec);
    if (!ec) stream.connect(results, ec);
    if (ec) throw BackendFault("cannot reach " + url + ": " + ec.message());
    http::request<http::string_body> req{http::verb::post, target, 11};
    req.set(http::field::host, host);
    req.set(http::field::content_type, "application/json");
    req.body() = body.dump();
    req.prepare_payload();
    http::write(stream, req, ec);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    if (!ec) http::read(stream, buf, res, ec);
    if (ec) throw BackendFault("request to " + url + " failed: " + ec.message());
    ojson j = ojson::parse(res.body(), nullptr, false);
    if (res.result_int() >= 400)
        throw InvalidArgument("service rejected the request (" + std::to_string(res.result_int()) + "): " + j.dump());
    return j;
}

int cmd_patterns_play(const Globals& g, const std::string& name, double hold_s, const std::string& url) {
    if (!url.empty()) {
        std::cout << http_post(url, "/patterns/play", {{"name", name}, {"hold_s", hold_s}}).dump(2) << "\n";
        return kOk;
    }
    SessionConfig cfg = load_config(g);
    const auto doc = lookup(name, cfg.device.safety_envelope_c);
    if (!doc) throw InvalidArgument("unknown pattern " + name);
    StimulusProgram program;
    if (const auto* p = std::get_if<Pattern>(&*doc)) {
        program.duration_s = hold_s;
        for (auto k : cells_of(p->active_cells)) program.events.push_back({0.0, hold_s, k, p->offset_c});
    } else {
        program = std::get<BrushSchedule>(*doc).program();
    }
    const auto models = spread_channel_models(cfg.plant_model(), cfg.channel_spread, derive_seed(cfg.seed, 3));
    auto backend = make_sim_backend(cfg.device, models, derive_seed(cfg.seed, 2));
    SimBackend* sim = backend.get();
    Device dev(cfg.device, std::move(backend), cfg.gains);
    dev.play(program);
    const auto ticks = static_cast<std::size_t>(std::llround((program.duration_s + 1.0) * cfg.device.tick_hz));
    Output out(g.out);
    auto& os = out.stream();
    os << "t_s";
    for (std::size_t k = 0; k < kCells; ++k) os << ",setpoint" << k << "_c";
    for (std::size_t k = 0; k < kCells; ++k) os << ",contact" << k << "_c";
    os << "\n" << std::setprecision(6);
    CellArray peak{};
    for (std::size_t i = 0; i < ticks; ++i) {
        const auto f = dev.tick();
        os << static_cast<double>(i) / cfg.device.tick_hz;
        for (double v : f.setpoints) os << ',' << v;
        for (std::size_t k = 0; k < kCells; ++k) {
            const double t = sim->state().t_cold[k];
            os << ',' << t;
            peak[k] = std::max(peak[k], std::abs(t - cfg.device.ambient_c));
        }
        os << "\n";
    }
    std::cerr << "peak |contact - ambient| per cell (C):";
    for (double v : peak) std::cerr << ' ' << std::fixed << std::setprecision(2) << v;
    std::cerr << "\n";
    return kOk;
}

// ------------------------------------------------------------------- serve

int cmd_serve(const Globals& g, const std::string& host, unsigned short port, double duration_s) {
    ServiceOptions opts;
    opts.host = host;
    opts.port = port;
    opts.session = load_config(g);
    if (!g.out.empty()) opts.session.output_dir = g.out;
    opts.patterns_dir = patterns_dir();

    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Service svc(opts);
    svc.start();
    std::cout << "listening on http://" << host << ":" << svc.port() << "  (logs in " << opts.session.output_dir
              << ")" << std::endl;
    if (duration_s > 0) {
        timespec ts{static_cast<time_t>(duration_s), static_cast<long>((duration_s - std::floor(duration_s)) * 1e9)};
        siginfo_t info;
        sigtimedwait(&set, &info, &ts);
    } else {
        int sig = 0;
        sigwait(&set, &sig);
    }
    const auto stats = svc.loop_stats();
    svc.stop();
    std::cout << std::fixed << std::setprecision(1) << "stopped after " << stats.ticks << " ticks; jitter p50 "
              << stats.p50_jitter_us << " us, p99 " << stats.p99_jitter_us << " us, max " << stats.max_jitter_us
              << " us; overruns " << stats.overruns << std::endl;
    return kOk;
}

// --------------------------------------------------------------------- run

int cmd_run(const Globals& g, const std::string& experiment) {
    SessionConfig cfg = load_config(g);
    if (!experiment.empty()) cfg.experiment = experiment;
    if (!g.out.empty()) cfg.output_dir = g.out;
    cfg.validate();
    const auto r = run_session(cfg);
    std::cout << "session " << cfg.session_id << " (" << cfg.experiment << ", seed " << cfg.seed << "): "
              << r.summary["status"].get<std::string>() << ", " << r.summary["trials"] << " trials\n"
              << "artifacts in " << r.directory << "\n";
    if (r.aborted) {
        std::cerr << "aborted: " << r.summary["error"].get<std::string>() << "\n";
        return kRuntime;
    }
    return kOk;
}

int cmd_export_csv(const Globals& g, const std::string& trials) {
    std::string path = trials;
    if (fs::is_directory(path)) path = (fs::path(path) / "trials.jsonl").string();
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    const std::string csv = trials_to_csv(in);
    Output out(g.out);
    out.stream() << csv;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thermopalm: 3x3 thermal palm display bench tools"};
    app.require_subcommand(1);
    app.fallthrough();
    app.failure_message(CLI::FailureMessage::help);
    Globals g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed (overrides the config)");
    app.add_option("--config", g.config, "session config JSON")->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "output file or directory (per subcommand)");

    auto* budget = app.add_subcommand("budget", "print the array heat budget and coolant temperature rise");

    SimulateArgs sim_args;
    auto* simulate = app.add_subcommand("simulate", "closed- or open-loop step trace as CSV");
    simulate->add_option("--step", sim_args.step, "setpoint step, degC (signed)");
    simulate->add_option("--mode", sim_args.mode, "warm or cool");
    simulate->add_flag("--open-loop", sim_args.open_loop, "constant current instead of PID");
    simulate->add_option("--current", sim_args.current, "open-loop drive current, A (positive heats)");
    simulate->add_option("--duration", sim_args.duration, "seconds")->check(CLI::PositiveNumber);
    simulate->add_flag("--noise", sim_args.noise, "enable sensor noise");
    simulate->add_option("--model", sim_args.model, "plant model file")->check(CLI::ExistingFile);

    double warm_rise = 1.4, cool_rise = 2.4;
    auto* calibrate = app.add_subcommand("calibrate", "fit the plant model to closed-loop rise times");
    calibrate->add_option("--warm-rise", warm_rise, "target 10-90% rise, warming step, s")->check(CLI::PositiveNumber);
    calibrate->add_option("--cool-rise", cool_rise, "target 10-90% rise, cooling step, s")->check(CLI::PositiveNumber);

    StaircaseArgs sc_args;
    auto* staircase = app.add_subcommand("staircase", "Exp 1 staircase against a simulated observer");
    staircase->add_option("--observer", sc_args.observer, "mu=..,sigma=..[,lapse=..,guess=..]");
    staircase->add_option("--runs", sc_args.runs, "independent staircases (engine only)");
    staircase->add_option("--pattern", sc_args.pattern, "line or all (engine only)");
    staircase->add_option("--polarity", sc_args.polarity, "warm or cool (engine only)");
    staircase->add_flag("--session", sc_args.session, "full simulated session with device and plant");

    auto* patterns = app.add_subcommand("patterns", "list, show or play stimulus patterns");
    patterns->require_subcommand(1);
    auto* p_list = patterns->add_subcommand("list", "list pattern files and builtins");
    std::string p_name;
    auto* p_show = patterns->add_subcommand("show", "print a pattern document");
    p_show->add_option("name", p_name, "pattern name or file")->required();
    double hold_s = 3.0;
    std::string url;
    auto* p_play = patterns->add_subcommand("play", "play on the simulated device (CSV) or a running service");
    p_play->add_option("name", p_name, "pattern name or file")->required();
    p_play->add_option("--hold", hold_s, "hold time for static patterns, s")->check(CLI::PositiveNumber);
    p_play->add_option("--url", url, "service base URL, e.g. http://127.0.0.1:8765");

    std::string host = "127.0.0.1";
    unsigned short port = 8765;
    double serve_for = 0;
    auto* serve = app.add_subcommand("serve", "HTTP/WebSocket service with the live control loop");
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "TCP port (0 picks one)");
    serve->add_option("--duration", serve_for, "stop after this many seconds (0: until SIGINT)");

    std::string experiment;
    auto* run = app.add_subcommand("run", "run one experiment end to end with the simulated observer");
    run->add_option("--experiment", experiment, "exp1, exp2, exp3 or exp4 (overrides the config)");

    std::string trials_path;
    auto* export_csv_cmd = app.add_subcommand("export-csv", "flatten trials.jsonl to CSV");
    export_csv_cmd->add_option("trials", trials_path, "trials.jsonl or a session directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }
    if (*seed_opt) g.seed = seed;

    try {
        if (*budget) return cmd_budget(g);
        if (*simulate) return cmd_simulate(g, sim_args);
        if (*calibrate) return cmd_calibrate(g, warm_rise, cool_rise);
        if (*staircase) return cmd_staircase(g, sc_args);
        if (*p_list) return cmd_patterns_list(g);
        if (*p_show) return cmd_patterns_show(g, p_name);
        if (*p_play) return cmd_patterns_play(g, p_name, hold_s, url);
        if (*serve) return cmd_serve(g, host, port, serve_for);
        if (*run) return cmd_run(g, experiment);
        if (*export_csv_cmd) return cmd_export_csv(g, trials_path);
    } catch (const ValidationErrors& e) {
        std::cerr << e.what() << "\n";
        return kValidation;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const LimitViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "fault: " << e.what() << "\n";
        return kRuntime;
    }
    return kOk;
}
