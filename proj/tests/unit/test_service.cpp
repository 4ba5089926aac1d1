#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "thermopalm/service.hpp"

using namespace thermopalm;
namespace fs = std::filesystem;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using ojson = nlohmann::ordered_json;

namespace {

struct Reply {
    int status;
    ojson body;
};

Reply request(unsigned short port, http::verb verb, const std::string& target, const std::string& body = "") {
    asio::io_context ioc;
    tcp::socket sock(ioc);
    sock.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
    http::request<http::string_body> req{verb, target, 11};
    req.set(http::field::host, "localhost");
    req.set(http::field::content_type, "application/json");
    req.body() = body;
    req.prepare_payload();
    http::write(sock, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(sock, buf, res);
    return {static_cast<int>(res.result_int()), ojson::parse(res.body())};
}

Reply get(unsigned short port, const std::string& target) { return request(port, http::verb::get, target); }
Reply post(unsigned short port, const std::string& target, const ojson& body) {
    return request(port, http::verb::post, target, body.dump());
}

ServiceOptions options(const std::string& name) {
    ServiceOptions o;
    o.port = 0;
    o.session.output_dir = (fs::temp_directory_path() / ("thermopalm_service_" + name)).string();
    fs::remove_all(o.session.output_dir);
    o.patterns_dir = std::string(THERMOPALM_SOURCE_DIR) + "/data/patterns";
    return o;
}

/// Short staircase so a live session finishes in seconds.
ojson fast_config() {
    return {{"seed", 3},
            {"exp1",
             {{"conditions", {{{"pattern", "line"}, {"polarity", "warm"}}}},
              {"stimulus_duration_s", 0.2},
              {"rest_s", 0.05},
              {"reversals_to_stop", 2},
              {"reversals_averaged", 2}}}};
}

template <typename F>
bool wait_until(F&& pred, double timeout_s) {
    const auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    while (std::chrono::steady_clock::now() < end) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return false;
}

std::vector<ojson> lines(const fs::path& p) {
    std::vector<ojson> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(ojson::parse(line));
    return out;
}

}  // namespace

TEST(ServiceRoutes, StateBeforeSessionIsIdleAtAmbient) {
    Service svc(options("idle"));
    const auto r = svc.handle("GET", "/state", "");
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["session"]["status"], "idle");
    EXPECT_EQ(r.body["device"]["mode"], "idle");
    for (const auto& v : r.body["frame"]["setpoints"]) EXPECT_DOUBLE_EQ(v.get<double>(), 30.0);
}

TEST(ServiceRoutes, StructuredErrors) {
    Service svc(options("errors"));
    auto r = svc.handle("POST", "/session", "{not json");
    EXPECT_EQ(r.status, 400);
    EXPECT_EQ(r.body["error"]["code"], "malformed");
    r = svc.handle("GET", "/nope", "");
    EXPECT_EQ(r.status, 404);
    r = svc.handle("DELETE", "/state", "");
    EXPECT_EQ(r.status, 405);
    r = svc.handle("POST", "/session", R"({"action": "dance"})");
    EXPECT_EQ(r.status, 400);
    r = svc.handle("POST", "/session",
                   R"({"action": "start", "config": {"observer": {"lapse_rate": 0.9}, "exp1": {"max_trials": 0}}})");
    EXPECT_EQ(r.status, 422);
    EXPECT_GE(r.body["error"]["details"].size(), 2u);
    r = svc.handle("GET", "/stream", "");
    EXPECT_EQ(r.status, 426);
}

TEST(ServiceRoutes, ResponseOutsideSessionRejected) {
    Service svc(options("nosession"));
    const auto r = svc.handle("POST", "/response", R"({"response": "same"})");
    EXPECT_EQ(r.status, 409);
    EXPECT_EQ(r.body["error"]["code"], "no_session");
}

TEST(ServiceRoutes, QuestionnaireValidated) {
    Service svc(options("likert"));
    EXPECT_EQ(svc.handle("POST", "/response", R"({"questionnaire": {"realism": 5}})").status, 200);
    EXPECT_EQ(svc.handle("POST", "/response", R"({"questionnaire": {"realism": 9}})").status, 422);
}

TEST(ServiceRoutes, PatternsListedAndValidated) {
    Service svc(options("patterns"));
    const auto r = svc.handle("GET", "/patterns", "");
    ASSERT_EQ(r.status, 200);
    std::set<std::string> names;
    for (const auto& p : r.body["patterns"]) names.insert(p["name"].get<std::string>());
    for (const char* n : {"line", "all", "top_row", "right_column", "brush_exp4"}) EXPECT_TRUE(names.count(n)) << n;

    auto bad = svc.handle("POST", "/patterns/play",
                          R"({"document": {"schema": 1, "kind": "pattern", "name": "x", "cells": [0], "offset_c": 20}})");
    EXPECT_EQ(bad.status, 422);
    EXPECT_EQ(svc.handle("POST", "/patterns/play", R"({"name": "zigzag"})").status, 404);
    const auto ok = svc.handle("POST", "/patterns/play", R"({"name": "line", "hold_s": 1})");
    EXPECT_EQ(ok.status, 200);
    EXPECT_EQ(svc.handle("GET", "/state", "").body["device"]["mode"], "pattern");
}

TEST(ServiceLive, ResponseAdvancesStaircaseOnceAndDuplicatesRejected) {
    Service svc(options("live"));
    svc.start();
    const auto port = svc.port();
    auto r = post(port, "/session", {{"action", "start"}, {"config", fast_config()}});
    ASSERT_EQ(r.status, 200) << r.body.dump();

    // too early: stimulus still playing or resting
    r = post(port, "/response", {{"response", "different"}});
    EXPECT_EQ(r.status, 409);

    ASSERT_TRUE(wait_until([&] { return get(port, "/state").body["session"]["awaiting_response"] == true; }, 5.0));
    const auto before = get(port, "/state").body["session"]["staircase"];
    r = post(port, "/response", {{"response", "different"}});
    ASSERT_EQ(r.status, 200) << r.body.dump();
    EXPECT_EQ(r.body["staircase"]["trial_count"], before["trial_count"].get<int>() + 1);
    EXPECT_NEAR(r.body["staircase"]["step_c"].get<double>(), before["step_c"].get<double>() * 0.9, 1e-12);

    const auto dup = post(port, "/response", {{"response", "different"}});
    EXPECT_EQ(dup.status, 409);
    EXPECT_EQ(dup.body["error"]["code"], "outside_response_window");

    EXPECT_EQ(post(port, "/session", {{"action", "start"}}).status, 409);
    EXPECT_EQ(post(port, "/session", {{"action", "stop"}}).status, 200);
    EXPECT_EQ(get(port, "/state").body["session"]["status"], "aborted");
    svc.stop();
}

TEST(ServiceLive, ObserverSessionCompletesAndLogsInOrder) {
    auto opts = options("observer");
    const fs::path dir = opts.session.output_dir;
    Service svc(opts);
    svc.start();
    const auto port = svc.port();
    ASSERT_EQ(post(port, "/session", {{"action", "start"}, {"responder", "observer"}, {"config", fast_config()}}).status,
              200);
    ASSERT_TRUE(wait_until([&] { return get(port, "/state").body["session"]["status"] == "completed"; }, 30.0));
    const auto results = get(port, "/state").body["session"]["last_summary"];
    ASSERT_EQ(results["conditions"].size(), 1u);
    EXPECT_TRUE(results["conditions"][0]["jnd_c"].is_number());
    svc.stop();

    const auto ev = lines(dir / "events.jsonl");
    std::map<int, bool> stimulated;
    int responses = 0;
    for (std::size_t i = 0; i < ev.size(); ++i) {
        EXPECT_EQ(ev[i]["seq"].get<std::size_t>(), i);
        const auto kind = ev[i]["kind"].get<std::string>();
        if (kind == "stimulus-on") stimulated[ev[i]["payload"]["trial"].get<int>()] = true;
        if (kind == "response") {
            ++responses;
            EXPECT_TRUE(stimulated[ev[i]["payload"]["trial"].get<int>()]);
        }
    }
    EXPECT_GT(responses, 0);
    EXPECT_EQ(static_cast<int>(lines(dir / "trials.jsonl").size()), responses);
    EXPECT_TRUE(fs::exists(dir / "summary.json"));
    EXPECT_FALSE(lines(dir / "telemetry.jsonl").empty());
}

TEST(ServiceLive, StreamCarriesTelemetryAndAcceptsResponses) {
    Service svc(options("stream"));
    svc.start();
    asio::io_context ioc;
    websocket::stream<tcp::socket> ws(ioc);
    ws.next_layer().connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), svc.port()));
    ws.handshake("localhost", "/stream");
    auto next = [&] {
        beast::flat_buffer b;
        ws.read(b);
        return ojson::parse(beast::buffers_to_string(b.data()));
    };
    EXPECT_EQ(next()["type"], "hello");
    int telemetry = 0;
    for (int i = 0; i < 10; ++i) {
        const auto m = next();
        if (m["type"] == "telemetry") {
            ++telemetry;
            EXPECT_EQ(m["frame"]["setpoints"].size(), 9u);
        }
    }
    EXPECT_GT(telemetry, 0);
    ws.write(asio::buffer(std::string(R"({"type": "response", "response": "same"})")));
    bool replied = false;
    for (int i = 0; i < 50 && !replied; ++i) {
        const auto m = next();
        if (m["type"] == "reply") {
            replied = true;
            EXPECT_EQ(m["status"], 409);  // no session running
        }
    }
    EXPECT_TRUE(replied);
    ws.close(websocket::close_code::normal);
    svc.stop();
}

TEST(ServiceLive, LoopStatsAccumulate) {
    Service svc(options("stats"));
    svc.start();
    std::this_thread::sleep_for(std::chrono::milliseconds(500));
    const auto s = svc.loop_stats();
    svc.stop();
    EXPECT_GT(s.ticks, 30u);
    EXPECT_DOUBLE_EQ(s.period_us, 10000.0);
    EXPECT_LE(s.p50_jitter_us, s.p99_jitter_us);
}
