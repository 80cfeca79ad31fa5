#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "transport/byte_buffer.hpp"

namespace hybsim::transport {

// Receive-side buffer keyed by data sequence number. Bytes become readable
// only once every byte before them has arrived; a FIN marks the stream end
// and consumes one sequence number. Capacity bounds the right edge of what
// may be stored (read offset + capacity), which is also the advertised
// window.
class ReorderBuffer {
public:
    enum class Insert { Accepted, Duplicate, Overflow };

    explicit ReorderBuffer(std::uint64_t capacity_bytes, std::uint64_t start = 0);

    Insert insert(std::uint64_t dsn, std::span<const std::uint8_t> bytes, bool fin = false);

    std::size_t readable() const { return ready_.size(); }
    std::size_t read(std::span<std::uint8_t> out);
    std::size_t discard(std::size_t n);

    // Next expected sequence number (the FIN is not counted).
    std::uint64_t cursor() const { return cursor_; }
    // Cumulative acknowledgment point: cursor, plus one once the FIN is in.
    std::uint64_t ack_point() const { return cursor_ + (fin_reached_ ? 1 : 0); }
    std::uint64_t read_offset() const { return cursor_ - ready_.size(); }
    std::uint64_t window() const;
    std::uint64_t capacity() const { return capacity_; }
    std::uint64_t held_bytes() const { return held_bytes_; }
    std::size_t held_segments() const { return held_.size(); }
    bool fin_reached() const { return fin_reached_; }
    bool eof() const { return fin_reached_ && ready_.empty(); }

private:
    struct Held {
        std::vector<std::uint8_t> bytes;
        bool fin = false;
    };

    void append_in_order(std::uint64_t dsn, std::span<const std::uint8_t> bytes, bool fin);
    void drain_held();

    std::uint64_t capacity_;
    std::uint64_t cursor_;
    bool fin_reached_ = false;
    ByteBuffer ready_;
    std::map<std::uint64_t, Held> held_;
    std::uint64_t held_bytes_ = 0;
};

} // namespace hybsim::transport
