#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "thermopalm/errors.hpp"
#include "thermopalm/pattern.hpp"

using namespace thermopalm;

namespace {

CellSet cells(std::initializer_list<std::size_t> ks) {
    CellSet s;
    for (auto k : ks) s.set(k);
    return s;
}

const Pattern& named(const std::vector<Pattern>& ps, const std::string& n) {
    for (const auto& p : ps)
        if (p.name == n) return p;
    throw std::runtime_error("missing " + n);
}

}  // namespace

TEST(CanonicalPatterns, CellsAndCount) {
    const auto ps = canonical_patterns();
    ASSERT_EQ(ps.size(), 8u);
    EXPECT_EQ(named(ps, "line").active_cells, cells({6, 7, 8}));
    EXPECT_EQ(named(ps, "all").active_cells.count(), 9u);
    EXPECT_EQ(named(ps, "middle_column").active_cells, cells({1, 4, 7}));
    EXPECT_EQ(named(ps, "top_row").active_cells, cells({0, 1, 2}));
    EXPECT_EQ(named(ps, "right_column").active_cells, cells({2, 5, 8}));
    for (const auto& p : ps) EXPECT_EQ(p.offset_c, 8.0);
    EXPECT_TRUE(find_canonical_pattern("bottom_row").has_value());
    EXPECT_FALSE(find_canonical_pattern("diagonal").has_value());
}

TEST(ArrayGeometry, DefaultsAndLabels) {
    ArrayGeometry g;
    EXPECT_NO_THROW(g.validate());
    EXPECT_EQ(g.index(2, 1), 7u);
    EXPECT_NE(ArrayGeometry::region_label(7).find("thenar"), std::string::npos);
    g.pitch_mm = 5.0;
    EXPECT_THROW(g.validate(), InvalidArgument);
}

TEST(TransitionSchedule, BottomToMiddleRow) {
    const auto ps = canonical_patterns();
    const auto prog = transition_schedule(named(ps, "bottom_row"), named(ps, "middle_row"), 3.0, 8.0);
    EXPECT_EQ(prog.duration_s, 6.0);
    const auto frames = prog.quantize(100.0);
    ASSERT_EQ(frames.size(), 600u);
    for (std::size_t n = 0; n < frames.size(); ++n) {
        for (std::size_t k = 0; k < kCells; ++k) {
            double want = 0.0;
            if (n < 300 && k >= 6) want = 8.0;
            if (n >= 300 && k >= 3 && k <= 5) want = 8.0;
            ASSERT_EQ(frames[n][k], want) << "tick " << n << " cell " << k;
        }
    }
}

TEST(TransitionSchedule, SamePatternIsOneContinuousActivation) {
    const auto p = *find_canonical_pattern("left_column");
    const auto prog = transition_schedule(p, p, 3.0, -8.0);
    ASSERT_EQ(prog.events.size(), 3u);
    for (const auto& e : prog.events) {
        EXPECT_EQ(e.onset_s, 0.0);
        EXPECT_EQ(e.duration_s, 6.0);
    }
    for (double t = 0.0; t < 6.0; t += 0.01) EXPECT_EQ(prog.offsets_at(t)[3], -8.0);
}

TEST(TransitionSchedule, RejectsOffsetBeyondEnvelope) {
    const auto p = *find_canonical_pattern("all");
    EXPECT_THROW(transition_schedule(p, p, 3.0, 16.0), InvalidArgument);
}

TEST(TransitionSchedule, PropertiesOverAllPairs) {
    const auto ps = canonical_patterns();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> hold(0.05, 4.0);
    for (const auto& a : ps) {
        for (const auto& b : ps) {
            const double h = hold(rng);
            const auto prog = transition_schedule(a, b, h, 8.0);
            EXPECT_EQ(prog.duration_s, 2.0 * h);
            const auto frames = prog.quantize(100.0);
            EXPECT_LE(std::abs(static_cast<double>(frames.size()) / 100.0 - 2.0 * h), 0.005 + 1e-12);
            const CellSet both = a.active_cells & b.active_cells;
            const CellSet any = a.active_cells | b.active_cells;
            for (const auto& f : frames) {
                for (std::size_t k = 0; k < kCells; ++k) {
                    if (!any.test(k)) ASSERT_EQ(f[k], 0.0);
                    if (both.test(k)) ASSERT_EQ(f[k], 8.0);
                    ASSERT_LE(std::abs(f[k]), 15.0);
                }
            }
        }
    }
}

TEST(Quantize, EdgesRoundToNearestTickAndShortEventsSurvive) {
    StimulusProgram prog;
    prog.duration_s = 0.1;
    prog.events = {{0.0144, 0.0012, 0, 5.0}, {0.0551, 0.03, 1, -5.0}};
    const auto f = prog.quantize(100.0);
    ASSERT_EQ(f.size(), 10u);
    EXPECT_EQ(f[1][0], 5.0);
    EXPECT_EQ(f[2][0], 0.0);
    EXPECT_EQ(f[5][1], 0.0);
    EXPECT_EQ(f[6][1], -5.0);
    EXPECT_EQ(f[8][1], -5.0);
    EXPECT_EQ(f[9][1], 0.0);
}

TEST(BrushSchedule, InterOnsetAtExperimentVelocity) {
    const auto b = brush_schedule(ArrayGeometry{}, 3.5, 10.0, 1);
    EXPECT_EQ(b.inter_onset_s, Rational(18, 3500));
    EXPECT_NEAR(b.inter_onset_s.to_double() * 1000.0, 5.143, 5e-4);
    ASSERT_EQ(b.events.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(b.events[k].cell, 3 + k);
        EXPECT_EQ(b.events[k].onset_s, (Rational(18, 3500) * Rational(static_cast<std::int64_t>(k), 1)).to_double());
        EXPECT_EQ(b.events[k].offset_c, 10.0);
    }
}

TEST(BrushSchedule, SlowVelocityGivesOneSecond) {
    const auto b = brush_schedule(ArrayGeometry{}, 0.018, 5.0, 0);
    EXPECT_EQ(b.inter_onset_s, Rational(1, 1));
}

TEST(BrushSchedule, OnsetsIncreaseAndOffPathCellsStayAmbient) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> v(0.01, 5.0), off(-20.0, 20.0);
    for (int n = 0; n < 200; ++n) {
        const std::size_t row = n % 3;
        const bool reverse = n % 2 == 1;
        const auto b = brush_schedule(ArrayGeometry{}, v(rng), off(rng), row, 1.0 + (n % 3), reverse);
        for (std::size_t k = 1; k < b.events.size(); ++k) ASSERT_LT(b.events[k - 1].onset_s, b.events[k].onset_s);
        EXPECT_LE(std::abs(b.offset_c), 15.0);
        const auto prog = b.program();
        for (double t = 0.0; t < prog.duration_s; t += prog.duration_s / 50.0) {
            const auto o = prog.offsets_at(t);
            for (std::size_t k = 0; k < kCells; ++k)
                if (k / 3 != row) ASSERT_EQ(o[k], 0.0);
        }
        if (reverse) EXPECT_EQ(b.events.front().cell, row * 3 + 2);
    }
}

TEST(BrushSchedule, OffsetClamped) {
    EXPECT_EQ(brush_schedule(ArrayGeometry{}, 3.5, 40.0, 1).offset_c, 15.0);
    EXPECT_THROW(brush_schedule(ArrayGeometry{}, 0.0, 10.0, 1), InvalidArgument);
}

TEST(PatternFile, CanonicalAllLoads) {
    const auto doc = pattern_file_load(std::string(THERMOPALM_SOURCE_DIR) + "/data/patterns/all.json");
    const auto& p = std::get<Pattern>(doc);
    EXPECT_EQ(p.active_cells.count(), 9u);
    EXPECT_EQ(p.name, "all");
}

TEST(PatternFile, AllShippedFilesMatchCanonical) {
    for (const auto& p : canonical_patterns()) {
        const auto doc =
            pattern_file_load(std::string(THERMOPALM_SOURCE_DIR) + "/data/patterns/" + p.name + ".json");
        EXPECT_EQ(std::get<Pattern>(doc), p);
    }
}

TEST(PatternFile, SchemaErrorsNameTheField) {
    try {
        pattern_from_json("{\n \"schema\": 1,\n \"kind\": \"pattern\",\n \"name\": \"x\",\n \"cells\": [1, 9],\n \"offset_c\": 4\n}");
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_EQ(e.field(), "cells[1]");
        EXPECT_EQ(e.line(), 5);
    }
    EXPECT_THROW(pattern_from_json(R"({"schema": 1, "kind": "pattern", "name": "x", "cells": [1], "offset_c": 4, "extra": 0})"),
                 SchemaError);
    EXPECT_THROW(pattern_from_json(R"({"schema": 2, "kind": "pattern", "name": "x", "cells": [1], "offset_c": 4})"),
                 SchemaError);
    EXPECT_THROW(pattern_from_json(R"({"schema": 1, "kind": "pattern", "name": "x", "cells": [1], "offset_c": 20})"),
                 SchemaError);
    EXPECT_THROW(pattern_from_json("{not json"), SchemaError);
}

TEST(PatternFile, SaveLoadIdentity) {
    const auto dir = std::filesystem::temp_directory_path() / "thermopalm_pattern_test";
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> off(-15.0, 15.0), v(0.01, 5.0);
    for (int n = 0; n < 100; ++n) {
        PatternDocument doc;
        if (n % 2 == 0) {
            Pattern p;
            p.name = "p" + std::to_string(n);
            p.active_cells = CellSet(rng() & 0x1FF);
            p.offset_c = off(rng);
            doc = p;
        } else {
            doc = brush_schedule(ArrayGeometry{}, v(rng), off(rng), n % 3, 1.5, n % 4 == 1);
        }
        const auto path = (dir / "p.json").string();
        pattern_file_save(path, doc);
        EXPECT_EQ(pattern_file_load(path), doc) << n;
    }
    std::filesystem::remove_all(dir);
}
