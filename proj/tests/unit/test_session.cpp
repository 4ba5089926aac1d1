#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "thermopalm/errors.hpp"
#include "thermopalm/session.hpp"

using namespace thermopalm;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("thermopalm_session_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<ojson> lines(const fs::path& p) {
    std::vector<ojson> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(ojson::parse(line));
    return out;
}

SessionConfig quick(const std::string& experiment, const fs::path& dir, std::uint64_t seed = 11) {
    SessionConfig c;
    c.experiment = experiment;
    c.output_dir = dir.string();
    c.seed = seed;
    return c;
}

}  // namespace

TEST(SessionConfig, DefaultsAreValid) { EXPECT_NO_THROW(SessionConfig{}.validate()); }

TEST(SessionConfig, ReportsEveryProblemAtOnce) {
    const std::string text = R"({
      "schema": 1,
      "experiment": "exp9",
      "device": {"ambient_c": 50, "tick_hz": 100},
      "observer": {"lapse_rate": 0.5},
      "exp1": {"conditions": [{"pattern": "triangle", "polarity": "warm"}], "max_trials": 0},
      "bogus": true
    })";
    try {
        session_config_from_json(text);
        FAIL() << "expected ValidationErrors";
    } catch (const ValidationErrors& e) {
        const auto& p = e.problems();
        auto mentions = [&](const std::string& needle) {
            return std::any_of(p.begin(), p.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
        };
        EXPECT_TRUE(mentions("bogus"));
        EXPECT_TRUE(mentions("experiment"));
        EXPECT_TRUE(mentions("device"));
        EXPECT_TRUE(mentions("observer"));
        EXPECT_TRUE(mentions("triangle"));
        EXPECT_TRUE(mentions("max_trials"));
        EXPECT_GE(p.size(), 6u);
    }
}

TEST(SessionConfig, SchemaVersionRequired) {
    EXPECT_THROW(session_config_from_json(R"({"experiment": "exp1"})"), ValidationErrors);
    EXPECT_THROW(session_config_from_json(R"({"schema": 2})"), ValidationErrors);
    EXPECT_THROW(session_config_from_json("{not json"), ValidationErrors);
}

TEST(SessionConfig, MissingModelFileRejected) {
    EXPECT_THROW(session_config_from_json(R"({"schema": 1, "plant": {"model_file": "/nonexistent/model.json"}})"),
                 ValidationErrors);
}

TEST(SessionConfig, JsonRoundTrip) {
    SessionConfig c;
    c.seed = 99;
    c.experiment = "exp3";
    c.exp1.conditions = {{"all", Polarity::cool}};
    c.exp2.table.different_deltas_c = {1.5, 3.0};
    c.exp4.reverse = true;
    const auto back = session_config_from_json(to_json(c).dump());
    EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(SessionConfig, DerivedSeedsDiffer) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 4; ++s)
        for (std::uint64_t k = 0; k < 8; ++k) seen.insert(derive_seed(s, k));
    EXPECT_EQ(seen.size(), 32u);
    EXPECT_EQ(derive_seed(5, 1), derive_seed(5, 1));
}

TEST(Session, Exp1ReportsFourJndEstimates) {
    const auto dir = scratch("exp1");
    const auto r = run_session(quick("exp1", dir));
    ASSERT_FALSE(r.aborted);
    const auto& conds = r.summary["results"]["conditions"];
    ASSERT_EQ(conds.size(), 4u);
    for (const auto& c : conds) {
        EXPECT_TRUE(c["finished"].get<bool>());
        EXPECT_EQ(c["reversals"].get<int>(), 10);
        ASSERT_TRUE(c["jnd_c"].is_number());
        // plausibility only: observer threshold 2.5
        EXPECT_GT(c["jnd_c"].get<double>(), 0.5);
        EXPECT_LT(c["jnd_c"].get<double>(), 8.0);
    }
    EXPECT_EQ(r.summary["status"], "completed");
    for (const char* f : {"events.jsonl", "trials.jsonl", "telemetry.jsonl", "summary.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(Session, SameSeedGivesByteIdenticalArtifacts) {
    const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    run_session(quick("exp1", a, 5));
    run_session(quick("exp1", b, 5));
    run_session(quick("exp1", c, 6));
    EXPECT_EQ(slurp(a / "trials.jsonl"), slurp(b / "trials.jsonl"));
    EXPECT_EQ(slurp(a / "events.jsonl"), slurp(b / "events.jsonl"));
    EXPECT_EQ(slurp(a / "telemetry.jsonl"), slurp(b / "telemetry.jsonl"));
    EXPECT_NE(slurp(a / "trials.jsonl"), slurp(c / "trials.jsonl"));

    auto sa = ojson::parse(slurp(a / "summary.json"));
    auto sb = ojson::parse(slurp(b / "summary.json"));
    sa.erase("wall_clock");
    sb.erase("wall_clock");
    sa["config"].erase("output_dir");
    sb["config"].erase("output_dir");
    EXPECT_EQ(sa.dump(), sb.dump());
}

TEST(Session, EveryArtifactLineCarriesSchemaAndSeed) {
    const auto dir = scratch("schema");
    run_session(quick("exp2", dir, 42));
    for (const char* f : {"events.jsonl", "trials.jsonl", "telemetry.jsonl"}) {
        const auto ls = lines(dir / f);
        ASSERT_FALSE(ls.empty()) << f;
        for (const auto& j : ls) {
            EXPECT_EQ(j["schema"], 1) << f;
            EXPECT_EQ(j["seed"], 42) << f;
        }
    }
    const auto s = ojson::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(s["schema"], 1);
    EXPECT_EQ(s["seed"], 42);
}

TEST(Session, EventsOrderedAndResponsesFollowStimuli) {
    const auto dir = scratch("order");
    run_session(quick("exp3", dir));
    const auto ev = lines(dir / "events.jsonl");
    ASSERT_GE(ev.size(), 3u);
    EXPECT_EQ(ev.front()["kind"], "session-start");
    EXPECT_EQ(ev.back()["kind"], "session-end");
    std::map<int, bool> stimulated;
    for (std::size_t i = 0; i < ev.size(); ++i) {
        EXPECT_EQ(ev[i]["seq"].get<std::uint64_t>(), i);
        if (i > 0) {
            EXPECT_GE(ev[i]["t_us"].get<std::int64_t>(), ev[i - 1]["t_us"].get<std::int64_t>());
        }
        const auto kind = ev[i]["kind"].get<std::string>();
        if (kind == "stimulus-on") stimulated[ev[i]["payload"]["trial"].get<int>()] = true;
        if (kind == "response") {
            const int t = ev[i]["payload"]["trial"].get<int>();
            EXPECT_TRUE(stimulated[t]) << "response without stimulus, trial " << t;
        }
    }
}

TEST(Session, Exp2CoversFourCells) {
    const auto dir = scratch("exp2");
    const auto r = run_session(quick("exp2", dir));
    const auto& cells = r.summary["results"]["cells"];
    ASSERT_EQ(cells.size(), 4u);
    int n = 0;
    for (const auto& c : cells) n += c["n"].get<int>();
    EXPECT_EQ(n, 40);
    EXPECT_EQ(lines(dir / "trials.jsonl").size(), 40u);
}

TEST(Session, Exp3TimingWithinOneTick) {
    const auto dir = scratch("exp3");
    const auto r = run_session(quick("exp3", dir));
    const auto& res = r.summary["results"];
    EXPECT_LE(res["timing_max_error_ticks"].get<long>(), 1);
    for (const char* p : {"warm", "cool"}) {
        EXPECT_EQ(res["polarities"][p]["changed_trials"], 30);
        EXPECT_EQ(res["polarities"][p]["catch_trials"], 6);
    }
}

TEST(Session, Exp4ReportsInterOnsetAndAmplitudes) {
    const auto dir = scratch("exp4");
    const auto r = run_session(quick("exp4", dir));
    const auto& res = r.summary["results"];
    EXPECT_NEAR(res["inter_onset_ms"].get<double>(), 5.143, 5e-4);
    EXPECT_EQ(res["inter_onset_exact_s"], "9/1750");
    for (const char* p : {"warm", "cool"}) {
        const auto& pol = res["polarities"][p];
        ASSERT_EQ(pol["achieved_amplitude_c"].size(), 9u);
        EXPECT_TRUE(pol["cells_outside_path_at_ambient"].get<bool>());
        for (std::size_t k = 0; k < 9; ++k) {
            const double a = pol["achieved_amplitude_c"][k].get<double>();
            EXPECT_GE(a, 0.0);
            EXPECT_LT(a, 10.0);
        }
    }
}

TEST(Session, CsvExportHasDocumentedColumns) {
    const auto dir = scratch("csv");
    run_session(quick("exp2", dir));
    export_csv((dir / "trials.jsonl").string(), (dir / "trials.csv").string());
    std::ifstream in(dir / "trials.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "participant,experiment,condition,stimulus,response,rt,ground_truth");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_NE(line.find("exp2"), std::string::npos);
    }
    EXPECT_EQ(rows, 40);
}

TEST(Session, CsvRejectsMalformedLine) {
    std::istringstream in("{\"schema\": 1}\nnot json\n");
    EXPECT_THROW(trials_to_csv(in), Error);
}
