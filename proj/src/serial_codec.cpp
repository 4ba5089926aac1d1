#include "thermopalm/serial_codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "thermopalm/errors.hpp"

namespace thermopalm {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t at) {
    return static_cast<std::uint16_t>(in[at] | (in[at + 1] << 8));
}

std::int16_t saturate(double v) {
    if (std::isnan(v)) return 0;
    const double r = std::round(v);
    return static_cast<std::int16_t>(std::clamp(r, double{std::numeric_limits<std::int16_t>::min()},
                                                double{std::numeric_limits<std::int16_t>::max()}));
}

}  // namespace

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> data) {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t byte : data) {
        crc ^= static_cast<std::uint16_t>(byte << 8);
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
        }
    }
    return crc;
}

std::vector<std::uint8_t> serial_frame_encode(const SerialFrame& f) {
    std::vector<std::uint8_t> out;
    out.reserve(kFrameSize);
    out.push_back(kFrameMagic0);
    out.push_back(kFrameMagic1);
    out.push_back(kFrameVersion);
    for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(f.tick >> shift));
    for (auto v : f.setpoint_cdeg) put_u16(out, static_cast<std::uint16_t>(v));
    for (auto v : f.measured_cdeg) put_u16(out, static_cast<std::uint16_t>(v));
    for (auto v : f.current_ma) put_u16(out, static_cast<std::uint16_t>(v));
    put_u16(out, crc16_ccitt_false(out));
    return out;
}

SerialFrame serial_frame_decode(std::span<const std::uint8_t> in) {
    if (in.size() != kFrameSize) {
        throw FrameRejected("frame length " + std::to_string(in.size()) + " != 63",
                            std::min(in.size(), kFrameSize));
    }
    if (in[0] != kFrameMagic0) throw FrameRejected("bad magic", 0);
    if (in[1] != kFrameMagic1) throw FrameRejected("bad magic", 1);
    if (in[2] != kFrameVersion) throw FrameRejected("unsupported version", 2);
    const std::uint16_t expected = crc16_ccitt_false(in.first(kFrameCrcOffset));
    if (get_u16(in, kFrameCrcOffset) != expected) throw FrameRejected("CRC mismatch", kFrameCrcOffset);

    SerialFrame f;
    f.tick = static_cast<std::uint32_t>(in[3]) | (static_cast<std::uint32_t>(in[4]) << 8) |
             (static_cast<std::uint32_t>(in[5]) << 16) | (static_cast<std::uint32_t>(in[6]) << 24);
    std::size_t at = 7;
    for (auto& v : f.setpoint_cdeg) { v = static_cast<std::int16_t>(get_u16(in, at)); at += 2; }
    for (auto& v : f.measured_cdeg) { v = static_cast<std::int16_t>(get_u16(in, at)); at += 2; }
    for (auto& v : f.current_ma) { v = static_cast<std::int16_t>(get_u16(in, at)); at += 2; }
    return f;
}

std::int16_t to_centidegrees(double celsius) { return saturate(celsius * 100.0); }
std::int16_t to_milliamps(double amps) { return saturate(amps * 1000.0); }

}  // namespace thermopalm
