#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "simcore/sim_time.hpp"
#include "transport/connection.hpp"

namespace hybsim::harness {

// Writes the deterministic byte pattern of `seed` into a connection.
class PatternSource {
public:
    PatternSource(std::uint64_t seed, std::uint64_t limit) : seed_(seed), limit_(limit) {}

    void attach(transport::Connection& c) { conn_ = &c; }
    bool ready() const { return conn_ && conn_->state() == transport::ConnState::Established && !finished_; }
    // Writes at most `budget` bytes; returns how many the connection took.
    std::uint64_t pump(std::uint64_t budget = UINT64_MAX);
    // Stops writing and closes the sending direction.
    void finish();

    std::uint64_t written() const { return written_; }
    bool finished() const { return finished_; }

private:
    std::uint64_t seed_;
    std::uint64_t limit_; // 0: no limit
    std::uint64_t written_ = 0;
    bool finished_ = false;
    transport::Connection* conn_ = nullptr;
    std::vector<std::uint8_t> chunk_;
};

// Reads a connection to the end and checks every byte against the pattern.
class PatternSink {
public:
    explicit PatternSink(std::uint64_t seed) : seed_(seed) {}

    void drain(transport::Connection& c, sim::SimTime now, sim::SimTime window_from, sim::SimTime window_to);

    std::uint64_t received() const { return received_; }
    std::uint64_t window_bytes() const { return window_bytes_; }
    bool corrupt() const { return corrupt_; }
    bool eof() const { return eof_at_.has_value(); }
    std::optional<sim::SimTime> eof_at() const { return eof_at_; }

private:
    std::uint64_t seed_;
    std::uint64_t received_ = 0;
    std::uint64_t window_bytes_ = 0;
    bool corrupt_ = false;
    std::optional<sim::SimTime> eof_at_;
    std::vector<std::uint8_t> buf_ = std::vector<std::uint8_t>(64 * 1024);
};

// Shared application rate cap for all connections of a run.
class TokenBucket {
public:
    TokenBucket(double bytes_per_s, double depth) : rate_(bytes_per_s), depth_(depth), tokens_(depth) {}

    void refill(sim::SimTime now);
    std::uint64_t available() const { return static_cast<std::uint64_t>(tokens_); }
    void consume(std::uint64_t n) { tokens_ -= static_cast<double>(n); }

private:
    double rate_;
    double depth_;
    double tokens_;
    std::optional<sim::SimTime> last_;
};

} // namespace hybsim::harness
