#pragma once

#include <cstdint>
#include <vector>

#include "transport/byte_buffer.hpp"
#include "transport/connection.hpp"

namespace hybsim::proxy {

// One direction of a spliced session: bytes read from `from` are written to
// `to` through a bounded buffer. When the buffer is full the pipe stops
// reading, so `from`'s receive window closes and the sender backs off. The
// peer FIN is forwarded once everything before it has been handed over.
class Pipe {
public:
    Pipe(transport::Connection& from, transport::Connection& to, std::size_t capacity, std::size_t skip = 0);

    void pump();

    std::uint64_t moved() const { return moved_; }
    std::size_t buffered() const { return buf_.size(); }
    std::size_t max_buffered() const { return max_buffered_; }
    bool fin_forwarded() const { return fin_forwarded_; }

private:
    transport::Connection& from_;
    transport::Connection& to_;
    std::size_t capacity_;
    std::size_t skip_;
    transport::ByteBuffer buf_;
    std::vector<std::uint8_t> scratch_;
    std::uint64_t moved_ = 0;
    std::size_t max_buffered_ = 0;
    bool fin_forwarded_ = false;
};

} // namespace hybsim::proxy
