#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "thermopalm/errors.hpp"
#include "thermopalm/observer.hpp"
#include "thermopalm/pattern.hpp"
#include "thermopalm/serial_codec.hpp"
#include "thermopalm/session.hpp"
#include "thermopalm/staircase.hpp"
#include "thermopalm/stats.hpp"
#include "thermopalm/thermo.hpp"
#include "thermopalm/trials.hpp"

namespace py = pybind11;
using namespace thermopalm;

namespace {

SerialFrame frame_from(std::uint32_t tick, const std::vector<int>& sp, const std::vector<int>& meas,
                       const std::vector<int>& cur) {
    if (sp.size() != kCells || meas.size() != kCells || cur.size() != kCells)
        throw InvalidArgument("serial frame fields need 9 values each");
    SerialFrame f;
    f.tick = tick;
    for (std::size_t k = 0; k < kCells; ++k) {
        f.setpoint_cdeg[k] = static_cast<std::int16_t>(sp[k]);
        f.measured_cdeg[k] = static_cast<std::int16_t>(meas[k]);
        f.current_ma[k] = static_cast<std::int16_t>(cur[k]);
    }
    return f;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "thermopalm core: thermoelectric budget, staircase engine, statistics, sessions";

    auto base = py::register_exception<Error>(m, "ThermopalmError");
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
    py::register_exception<LimitViolation>(m, "LimitViolation", base.ptr());
    py::register_exception<ValidationErrors>(m, "ValidationErrors", base.ptr());
    py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
    py::register_exception<FrameRejected>(m, "FrameRejected", base.ptr());

    // thermo
    m.def("array_heat_budget", [] { return array_heat_budget(TemParams::device_default()); },
          "Worst-case array heat load for the device TEMs, W.");
    m.def("coolant_delta_t", [](double q) { return coolant_delta_t(q, CoolantParams::device_default()); },
          py::arg("heat_load_w"), "Coolant temperature rise at the device flow rate, K.");
    m.def(
        "cold_side_flow",
        [](double tc, double th, double i) {
            return cold_side_flow(TemParams::device_default(), Kelvin{tc}, Kelvin{th}, i);
        },
        py::arg("t_cold_k"), py::arg("t_hot_k"), py::arg("current_a"));
    m.def(
        "hot_side_flow",
        [](double tc, double th, double i) {
            return hot_side_flow(TemParams::device_default(), Kelvin{tc}, Kelvin{th}, i);
        },
        py::arg("t_cold_k"), py::arg("t_hot_k"), py::arg("current_a"));
    m.def("r_electrical", [] { return TemParams::device_default().r_electrical; });

    // staircase
    py::enum_<Polarity>(m, "Polarity").value("warm", Polarity::warm).value("cool", Polarity::cool);
    py::enum_<Response>(m, "Response")
        .value("none", Response::none)
        .value("same", Response::same)
        .value("different", Response::different);

    py::class_<StaircaseConfig>(m, "StaircaseConfig")
        .def(py::init<>())
        .def_readwrite("ambient_c", &StaircaseConfig::ambient_c)
        .def_readwrite("reference_offset_c", &StaircaseConfig::reference_offset_c)
        .def_readwrite("initial_step_c", &StaircaseConfig::initial_step_c)
        .def_readwrite("down_factor", &StaircaseConfig::down_factor)
        .def_readwrite("up_factor", &StaircaseConfig::up_factor)
        .def_readwrite("reversals_to_stop", &StaircaseConfig::reversals_to_stop)
        .def_readwrite("reversals_averaged", &StaircaseConfig::reversals_averaged)
        .def_readwrite("polarity", &StaircaseConfig::polarity)
        .def_readwrite("step_floor_c", &StaircaseConfig::step_floor_c)
        .def_readwrite("step_ceiling_c", &StaircaseConfig::step_ceiling_c)
        .def("validate", &StaircaseConfig::validate);

    py::class_<StaircaseState>(m, "StaircaseState")
        .def_static("start", &StaircaseState::start)
        .def_readonly("current_step", &StaircaseState::current_step)
        .def_readonly("trial_count", &StaircaseState::trial_count)
        .def_readonly("last_response", &StaircaseState::last_response)
        .def_readonly("reversal_steps", &StaircaseState::reversal_steps)
        .def_readonly("finished", &StaircaseState::finished)
        .def("reversals", &StaircaseState::reversals);

    m.def(
        "staircase_next_stimulus",
        [](const StaircaseConfig& c, const StaircaseState& s) {
            const auto p = staircase_next_stimulus(c, s);
            return py::make_tuple(p.reference_c, p.test_c);
        },
        "(reference_c, test_c) for the next trial.");
    m.def("staircase_update", &staircase_update);
    m.def("jnd_estimate", &jnd_estimate);
    m.def("staircase_equilibrium", &staircase_equilibrium);

    py::class_<ObserverModel>(m, "ObserverModel")
        .def(py::init([](double mu, double sigma, double lapse, double guess, std::uint64_t seed) {
                 ObserverModel o{mu, sigma, lapse, guess, seed};
                 o.validate();
                 return o;
             }),
             py::arg("threshold_mu") = 2.5, py::arg("slope_sigma") = 0.8, py::arg("lapse_rate") = 0.0,
             py::arg("guess_rate") = 0.0, py::arg("seed") = 1)
        .def_readonly("threshold_mu", &ObserverModel::threshold_mu)
        .def_readonly("slope_sigma", &ObserverModel::slope_sigma);
    m.def("p_different", &p_different, py::arg("model"), py::arg("delta"));
    m.def("delta_at_probability", &delta_at_probability, py::arg("model"), py::arg("p"));
    py::class_<SimulatedObserver>(m, "SimulatedObserver")
        .def(py::init<const ObserverModel&>())
        .def("respond", &SimulatedObserver::respond, py::arg("delta"));

    // stats
    m.def("binomial_test", &binomial_test, py::arg("successes"), py::arg("n"), py::arg("p0") = 0.5,
          "Exact two-sided binomial p-value.");
    m.def(
        "wilcoxon_signed_rank",
        [](const std::vector<double>& d) {
            const auto r = wilcoxon_signed_rank(std::span<const double>(d));
            py::dict out;
            out["statistic"] = r.statistic;
            out["p_value"] = r.p_value;
            out["n"] = r.n;
            out["exact"] = r.exact;
            return out;
        },
        py::arg("differences"));

    // patterns and trial tables
    m.def(
        "brush_inter_onset",
        [](double velocity_m_s, double pitch_mm) {
            ArrayGeometry g;
            g.pitch_mm = pitch_mm;
            const auto r = brush_onset(g, velocity_m_s, 1);
            return py::make_tuple(r.num(), r.den());
        },
        py::arg("velocity_m_s") = 3.5, py::arg("pitch_mm") = 18.0, "Exact inter-onset as (num, den) seconds.");
    m.def(
        "exp3_pair_table",
        [](std::uint64_t seed, int catch_trials) {
            Exp3Config c;
            c.catch_trials_per_polarity = catch_trials;
            py::list out;
            for (const auto& t : exp3_pair_table(c, seed))
                out.append(py::make_tuple(to_string(t.polarity), t.first, t.second, t.changed));
            return out;
        },
        py::arg("seed"), py::arg("catch_trials_per_polarity") = 6);

    // serial codec
    m.def("crc16_ccitt_false", [](const py::bytes& b) {
        const std::string s = b;
        return crc16_ccitt_false(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    });
    m.def(
        "encode_frame",
        [](std::uint32_t tick, const std::vector<int>& sp, const std::vector<int>& meas, const std::vector<int>& cur) {
            const auto bytes = serial_frame_encode(frame_from(tick, sp, meas, cur));
            return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        },
        py::arg("tick"), py::arg("setpoint_cdeg"), py::arg("measured_cdeg"), py::arg("current_ma"));
    m.def("decode_frame", [](const py::bytes& b) {
        const std::string s = b;
        const auto f =
            serial_frame_decode(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
        py::dict out;
        out["tick"] = f.tick;
        out["setpoint_cdeg"] = std::vector<int>(f.setpoint_cdeg.begin(), f.setpoint_cdeg.end());
        out["measured_cdeg"] = std::vector<int>(f.measured_cdeg.begin(), f.measured_cdeg.end());
        out["current_ma"] = std::vector<int>(f.current_ma.begin(), f.current_ma.end());
        return out;
    });

    // sessions (JSON text in, JSON text out)
    m.def(
        "run_session_json",
        [](const std::string& config_json) {
            const auto cfg = session_config_from_json(config_json);
            py::gil_scoped_release release;
            return run_session(cfg).summary.dump();
        },
        py::arg("config_json"), "Run a simulated session; returns summary.json text.");
    m.def("validate_config_json", [](const std::string& text) { return to_json(session_config_from_json(text)).dump(); },
          "Validate a session config; returns it with defaults filled in.");
}
