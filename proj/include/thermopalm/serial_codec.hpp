#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "thermopalm/cells.hpp"

namespace thermopalm {

// Wire layout (all multi-byte fields little-endian), 63 bytes:
//
//   offset  size  field
//   0       2     magic 'T' 'H' (0x54 0x48)
//   2       1     version (1)
//   3       4     tick, u32
//   7       18    9 x setpoint, s16 centidegrees C
//   25      18    9 x measured, s16 centidegrees C
//   43      18    9 x current,  s16 milliamps
//   61      2     CRC-16/CCITT-FALSE over bytes [0, 61)
//
// The same layout carries host->device commands (measured zeroed) and
// device->host telemetry.

inline constexpr std::uint8_t kFrameMagic0 = 0x54;
inline constexpr std::uint8_t kFrameMagic1 = 0x48;
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameSize = 63;
inline constexpr std::size_t kFrameCrcOffset = 61;

struct SerialFrame {
    std::uint32_t tick = 0;
    std::array<std::int16_t, kCells> setpoint_cdeg{};
    std::array<std::int16_t, kCells> measured_cdeg{};
    std::array<std::int16_t, kCells> current_ma{};

    friend bool operator==(const SerialFrame&, const SerialFrame&) = default;
};

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, xorout 0.
std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> data);

std::vector<std::uint8_t> serial_frame_encode(const SerialFrame& frame);

/// Throws FrameRejected (with the offending byte offset) on bad length,
/// magic, version or CRC.
SerialFrame serial_frame_decode(std::span<const std::uint8_t> bytes);

/// Quantize engineering units onto the wire. Values are rounded to the
/// nearest unit and saturated to the s16 range.
std::int16_t to_centidegrees(double celsius);
std::int16_t to_milliamps(double amps);
inline double from_centidegrees(std::int16_t v) { return v / 100.0; }
inline double from_milliamps(std::int16_t v) { return v / 1000.0; }

}  // namespace thermopalm
