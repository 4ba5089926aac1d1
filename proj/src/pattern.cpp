#include "thermopalm/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "thermopalm/errors.hpp"

namespace thermopalm {

using nlohmann::json;

void ArrayGeometry::validate() const {
    if (rows != kRows || cols != kCols) throw InvalidArgument("ArrayGeometry: only 3x3 is supported");
    if (!(cell_size_mm > 0) || !(pitch_mm > cell_size_mm)) {
        throw InvalidArgument("ArrayGeometry: pitch must exceed the cell size");
    }
}

std::string ArrayGeometry::region_label(std::size_t cell) {
    switch (cell / kCols) {
        case 0: return "distal palm";
        case 1: return "central palm";
        default: return "thenar / base of palm";
    }
}

std::vector<std::size_t> cells_of(const CellSet& set) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < kCells; ++k) {
        if (set.test(k)) out.push_back(k);
    }
    return out;
}

namespace {

CellSet make_set(std::initializer_list<std::size_t> cells) {
    CellSet s;
    for (auto c : cells) s.set(c);
    return s;
}

void check_offset(double offset_c, double envelope_c) {
    if (!std::isfinite(offset_c) || std::abs(offset_c) > envelope_c) {
        throw InvalidArgument("offset " + std::to_string(offset_c) + " degC outside the +/-" +
                              std::to_string(envelope_c) + " degC envelope");
    }
}

}  // namespace

std::vector<Pattern> canonical_patterns(double offset_c) {
    return {
        {"top_row", make_set({0, 1, 2}), offset_c},
        {"middle_row", make_set({3, 4, 5}), offset_c},
        {"bottom_row", make_set({6, 7, 8}), offset_c},
        {"left_column", make_set({0, 3, 6}), offset_c},
        {"middle_column", make_set({1, 4, 7}), offset_c},
        {"right_column", make_set({2, 5, 8}), offset_c},
        {"line", make_set({6, 7, 8}), offset_c},
        {"all", CellSet{}.set(), offset_c},
    };
}

std::optional<Pattern> find_canonical_pattern(const std::string& name, double offset_c) {
    for (auto& p : canonical_patterns(offset_c)) {
        if (p.name == name) return p;
    }
    return std::nullopt;
}

CellArray StimulusProgram::offsets_at(double t) const {
    CellArray out{};
    std::array<double, kCells> latest;
    latest.fill(-1.0);
    for (const auto& e : events) {
        if (t >= e.onset_s && t < e.onset_s + e.duration_s && e.onset_s >= latest[e.cell]) {
            out[e.cell] = e.offset_c;
            latest[e.cell] = e.onset_s;
        }
    }
    return out;
}

std::vector<CellArray> StimulusProgram::quantize(double tick_hz) const {
    if (!(tick_hz > 0)) throw InvalidArgument("quantize: tick_hz must be positive");
    const auto total = static_cast<std::size_t>(std::llround(duration_s * tick_hz));
    std::vector<CellArray> frames(total, CellArray{});
    std::vector<std::array<long long, kCells>> owner(total);
    for (auto& o : owner) o.fill(-1);

    // Later onsets overwrite earlier ones, matching offsets_at.
    std::vector<std::size_t> order(events.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return events[a].onset_s < events[b].onset_s; });
    for (std::size_t idx : order) {
        const auto& e = events[idx];
        const auto start = static_cast<std::size_t>(std::max(0LL, std::llround(e.onset_s * tick_hz)));
        auto stop = static_cast<std::size_t>(std::max(0LL, std::llround((e.onset_s + e.duration_s) * tick_hz)));
        stop = std::max(stop, start + 1);
        for (std::size_t n = start; n < std::min(stop, total); ++n) frames[n][e.cell] = e.offset_c;
    }
    return frames;
}

StimulusProgram transition_schedule(const Pattern& a, const Pattern& b, double hold_s, double offset_c,
                                    double envelope_c) {
    check_offset(offset_c, envelope_c);
    if (!(hold_s > 0)) throw InvalidArgument("transition_schedule: hold must be positive");
    StimulusProgram prog;
    prog.duration_s = 2.0 * hold_s;
    for (std::size_t k = 0; k < kCells; ++k) {
        const bool in_a = a.active_cells.test(k);
        const bool in_b = b.active_cells.test(k);
        if (in_a && in_b) {
            prog.events.push_back({0.0, 2.0 * hold_s, k, offset_c});
        } else if (in_a) {
            prog.events.push_back({0.0, hold_s, k, offset_c});
        } else if (in_b) {
            prog.events.push_back({hold_s, hold_s, k, offset_c});
        }
    }
    return prog;
}

Rational brush_onset(const ArrayGeometry& geometry, double velocity_m_s, std::int64_t k) {
    if (!(velocity_m_s > 0)) throw InvalidArgument("brush: velocity must be positive");
    const std::int64_t pitch_um = std::llround(geometry.pitch_mm * 1000.0);
    const std::int64_t velocity_um_s = std::llround(velocity_m_s * 1e6);
    if (velocity_um_s <= 0) throw InvalidArgument("brush: velocity below 1 um/s");
    return Rational(k * pitch_um, velocity_um_s);
}

StimulusProgram BrushSchedule::program() const {
    StimulusProgram prog;
    prog.events = events;
    for (const auto& e : events) prog.duration_s = std::max(prog.duration_s, e.onset_s + e.duration_s);
    return prog;
}

BrushSchedule brush_schedule(const ArrayGeometry& geometry, double velocity_m_s, double offset_c,
                             std::size_t row, double dwell_factor, bool reverse, double envelope_c) {
    geometry.validate();
    if (row >= geometry.rows) throw InvalidArgument("brush: row out of range");
    if (!(dwell_factor > 0)) throw InvalidArgument("brush: dwell factor must be positive");
    BrushSchedule b;
    b.row = row;
    b.velocity_m_s = velocity_m_s;
    b.offset_c = std::clamp(offset_c, -envelope_c, envelope_c);
    b.dwell_factor = dwell_factor;
    b.reverse = reverse;
    b.pitch_mm = geometry.pitch_mm;
    b.inter_onset_s = brush_onset(geometry, velocity_m_s, 1);
    const double dwell = dwell_factor * b.inter_onset_s.to_double();
    for (std::size_t k = 0; k < geometry.cols; ++k) {
        const std::size_t col = reverse ? geometry.cols - 1 - k : k;
        const double onset = brush_onset(geometry, velocity_m_s, static_cast<std::int64_t>(k)).to_double();
        b.events.push_back({onset, dwell, geometry.index(row, col), b.offset_c});
    }
    return b;
}

namespace {

int line_of(const std::string& text, const std::string& field) {
    const auto pos = text.find("\"" + field + "\"");
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& text) {
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw SchemaError(key, "unknown field", line_of(text, key));
        }
    }
}

template <class T>
T required(const json& j, const char* field, const std::string& text) {
    if (!j.contains(field)) throw SchemaError(field, "missing required field");
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw SchemaError(field, "wrong type", line_of(text, field));
    }
}

}  // namespace

PatternDocument pattern_from_json(const std::string& text, double envelope_c) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto upto = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
        throw SchemaError("", "malformed JSON", line);
    }
    if (!j.is_object()) throw SchemaError("", "top level must be an object");
    const int schema = required<int>(j, "schema", text);
    if (schema != 1) throw SchemaError("schema", "unsupported schema version", line_of(text, "schema"));
    const auto kind = required<std::string>(j, "kind", text);

    if (kind == "pattern") {
        reject_unknown(j, {"schema", "kind", "name", "cells", "offset_c"}, text);
        Pattern p;
        p.name = required<std::string>(j, "name", text);
        p.offset_c = required<double>(j, "offset_c", text);
        if (!std::isfinite(p.offset_c) || std::abs(p.offset_c) > envelope_c) {
            throw SchemaError("offset_c", "outside the safety envelope", line_of(text, "offset_c"));
        }
        const auto cells = required<std::vector<long long>>(j, "cells", text);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (cells[i] < 0 || cells[i] >= static_cast<long long>(kCells)) {
                throw SchemaError("cells[" + std::to_string(i) + "]", "cell index must be in [0, 9)",
                                  line_of(text, "cells"));
            }
            p.active_cells.set(static_cast<std::size_t>(cells[i]));
        }
        return p;
    }
    if (kind == "brush") {
        reject_unknown(j, {"schema", "kind", "row", "velocity_m_s", "offset_c", "pitch_mm", "dwell_factor", "reverse"},
                       text);
        ArrayGeometry g;
        if (j.contains("pitch_mm")) g.pitch_mm = required<double>(j, "pitch_mm", text);
        const auto row = required<long long>(j, "row", text);
        if (row < 0 || row >= static_cast<long long>(kRows)) {
            throw SchemaError("row", "row must be in [0, 3)", line_of(text, "row"));
        }
        const double v = required<double>(j, "velocity_m_s", text);
        if (!(v > 0)) throw SchemaError("velocity_m_s", "must be positive", line_of(text, "velocity_m_s"));
        const double offset = required<double>(j, "offset_c", text);
        if (!std::isfinite(offset) || std::abs(offset) > envelope_c) {
            throw SchemaError("offset_c", "outside the safety envelope", line_of(text, "offset_c"));
        }
        const double dwell = j.contains("dwell_factor") ? required<double>(j, "dwell_factor", text) : 1.0;
        if (!(dwell > 0)) throw SchemaError("dwell_factor", "must be positive", line_of(text, "dwell_factor"));
        const bool reverse = j.contains("reverse") ? required<bool>(j, "reverse", text) : false;
        try {
            g.validate();
        } catch (const InvalidArgument& e) {
            throw SchemaError("pitch_mm", e.what(), line_of(text, "pitch_mm"));
        }
        return brush_schedule(g, v, offset, static_cast<std::size_t>(row), dwell, reverse, envelope_c);
    }
    throw SchemaError("kind", "expected \"pattern\" or \"brush\"", line_of(text, "kind"));
}

PatternDocument pattern_file_load(const std::string& path, double envelope_c) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open pattern file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return pattern_from_json(ss.str(), envelope_c);
}

std::string pattern_to_json(const PatternDocument& doc) {
    json j;
    j["schema"] = 1;
    if (const auto* p = std::get_if<Pattern>(&doc)) {
        j["kind"] = "pattern";
        j["name"] = p->name;
        j["cells"] = cells_of(p->active_cells);
        j["offset_c"] = p->offset_c;
    } else {
        const auto& b = std::get<BrushSchedule>(doc);
        j["kind"] = "brush";
        j["row"] = b.row;
        j["velocity_m_s"] = b.velocity_m_s;
        j["offset_c"] = b.offset_c;
        j["dwell_factor"] = b.dwell_factor;
        j["reverse"] = b.reverse;
        j["pitch_mm"] = b.pitch_mm;
    }
    return j.dump(2) + "\n";
}

void pattern_file_save(const std::string& path, const PatternDocument& doc) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write pattern file " + path);
    out << pattern_to_json(doc);
}

}  // namespace thermopalm
