#pragma once

#include <array>
#include <cstddef>

namespace thermopalm {

/// The array is 3x3; cells are indexed row-major, 0 at top-left.
inline constexpr std::size_t kRows = 3;
inline constexpr std::size_t kCols = 3;
inline constexpr std::size_t kCells = kRows * kCols;

/// One value per cell.
using CellArray = std::array<double, kCells>;

inline CellArray filled(double v) {
    CellArray a;
    a.fill(v);
    return a;
}

}  // namespace thermopalm
