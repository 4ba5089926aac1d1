#pragma once

#include <bitset>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "thermopalm/cells.hpp"
#include "thermopalm/rational.hpp"

namespace thermopalm {

/// Physical layout of the actuator grid.
///
///     wrist-distal (fingers)
///        +---+---+---+
///        | 0 | 1 | 2 |
///        +---+---+---+
///        | 3 | 4 | 5 |
///        +---+---+---+
///        | 6 | 7 | 8 |   bottom row: thenar eminence / base of palm
///        +---+---+---+
///     wrist-proximal
///
/// Row-major indexing, cell 0 top-left with the palm facing down.
struct ArrayGeometry {
    std::size_t rows = kRows;
    std::size_t cols = kCols;
    double cell_size_mm = 6.5;
    double pitch_mm = 18.0;

    void validate() const;
    std::size_t index(std::size_t row, std::size_t col) const { return row * cols + col; }
    static std::string region_label(std::size_t cell);
};

using CellSet = std::bitset<kCells>;

struct Pattern {
    std::string name;
    CellSet active_cells;
    double offset_c = 0.0;  // relative to ambient, signed

    friend bool operator==(const Pattern&, const Pattern&) = default;
};

/// Six row/column patterns (top, middle, bottom rows; left, middle, right
/// columns), then "line" (bottom row) and "all".
std::vector<Pattern> canonical_patterns(double offset_c = 8.0);
std::optional<Pattern> find_canonical_pattern(const std::string& name, double offset_c = 8.0);

/// One cell held at `offset_c` over [onset_s, onset_s + duration_s).
struct CellEvent {
    double onset_s;
    double duration_s;
    std::size_t cell;
    double offset_c;

    friend bool operator==(const CellEvent&, const CellEvent&) = default;
};

/// A timed per-cell offset program, compiled before playback. Cells without
/// an active event sit at ambient (offset 0).
struct StimulusProgram {
    std::vector<CellEvent> events;
    double duration_s = 0.0;

    /// Offsets at time t; the most recent onset wins where events overlap.
    CellArray offsets_at(double t) const;

    /// One offset array per control tick over [0, duration). Event edges
    /// are rounded to the nearest tick and every event occupies at least one
    /// tick.
    std::vector<CellArray> quantize(double tick_hz) const;
};

/// Pattern a for hold_s, then pattern b for hold_s, then ambient. Cells in
/// both patterns stay on through the transition. Throws InvalidArgument
/// when |offset| exceeds the envelope.
StimulusProgram transition_schedule(const Pattern& a, const Pattern& b, double hold_s, double offset_c,
                                    double envelope_c = 15.0);

struct BrushSchedule {
    std::vector<CellEvent> events;
    std::size_t row = 1;
    double velocity_m_s = 3.5;
    double offset_c = 10.0;
    double dwell_factor = 1.0;
    bool reverse = false;
    double pitch_mm = 18.0;
    Rational inter_onset_s;  // pitch / velocity, exact

    StimulusProgram program() const;
    friend bool operator==(const BrushSchedule&, const BrushSchedule&) = default;
};

/// Sequential activation along one row. Onset of the k-th cell on the path
/// is exactly k * pitch / velocity (pitch in micrometres, velocity rounded to
/// micrometres per second); each cell is held for dwell_factor inter-onset
/// intervals. Offsets are clamped to the envelope.
BrushSchedule brush_schedule(const ArrayGeometry& geometry, double velocity_m_s, double offset_c,
                             std::size_t row, double dwell_factor = 1.0, bool reverse = false,
                             double envelope_c = 15.0);

/// Exact onset time of the k-th cell of a brush path.
Rational brush_onset(const ArrayGeometry& geometry, double velocity_m_s, std::int64_t k);

/// Pattern files: versioned JSON ("schema": 1), kind "pattern" or "brush".
using PatternDocument = std::variant<Pattern, BrushSchedule>;

/// Throws SchemaError naming the field (and its line when locatable).
PatternDocument pattern_from_json(const std::string& text, double envelope_c = 15.0);
PatternDocument pattern_file_load(const std::string& path, double envelope_c = 15.0);
std::string pattern_to_json(const PatternDocument& doc);
void pattern_file_save(const std::string& path, const PatternDocument& doc);

std::vector<std::size_t> cells_of(const CellSet& set);

}  // namespace thermopalm
