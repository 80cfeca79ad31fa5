#pragma once

#include <compare>
#include <cstdint>
#include <limits>

namespace hybsim::sim {

// Virtual time in microseconds since simulation start. Used both for instants
// and for durations; all arithmetic is unsigned and saturating subtraction is
// the caller's responsibility.
struct SimTime {
    std::uint64_t us = 0;

    static constexpr SimTime from_us(std::uint64_t v) { return SimTime{v}; }
    static constexpr SimTime from_ms(std::uint64_t v) { return SimTime{v * 1000}; }
    static constexpr SimTime from_s(std::uint64_t v) { return SimTime{v * 1000000}; }
    static constexpr SimTime from_seconds(double s) {
        return SimTime{static_cast<std::uint64_t>(s * 1e6 + 0.5)};
    }
    static constexpr SimTime max() { return SimTime{std::numeric_limits<std::uint64_t>::max()}; }

    constexpr double seconds() const { return static_cast<double>(us) / 1e6; }
    constexpr double millis() const { return static_cast<double>(us) / 1e3; }

    friend constexpr auto operator<=>(SimTime, SimTime) = default;
    friend constexpr SimTime operator+(SimTime a, SimTime b) { return SimTime{a.us + b.us}; }
    friend constexpr SimTime operator-(SimTime a, SimTime b) { return SimTime{a.us - b.us}; }
    friend constexpr SimTime operator*(SimTime a, std::uint64_t k) { return SimTime{a.us * k}; }
    constexpr SimTime& operator+=(SimTime b) {
        us += b.us;
        return *this;
    }
};

// Serialization time of `bytes` at `bandwidth_bps`, rounded up to the next
// microsecond so back-to-back packets never exceed the configured rate.
constexpr SimTime serialization_time(std::uint64_t bytes, std::uint64_t bandwidth_bps) {
    const std::uint64_t bits = bytes * 8;
    return SimTime{(bits * 1000000 + bandwidth_bps - 1) / bandwidth_bps};
}

} // namespace hybsim::sim
