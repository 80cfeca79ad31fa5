#include "proxy/splice.hpp"

#include <algorithm>

namespace hybsim::proxy {

using transport::ConnState;

Pipe::Pipe(transport::Connection& from, transport::Connection& to, std::size_t capacity, std::size_t skip)
    : from_(from), to_(to), capacity_(capacity), skip_(skip) {}

void Pipe::pump() {
    if (from_.state() == ConnState::SynSent || from_.state() == ConnState::SynReceived) return;
    if (to_.state() != ConnState::Established) return;
    constexpr std::size_t kChunk = 64 * 1024;
    for (;;) {
        bool progress = false;
        if (skip_ > 0) {
            const std::size_t k = from_.discard(skip_);
            skip_ -= k;
            if (skip_ > 0) return;
        }
        while (buf_.size() < capacity_) {
            scratch_.resize(std::min(capacity_ - buf_.size(), kChunk));
            const std::size_t got = from_.read(scratch_);
            if (got == 0) break;
            buf_.append(std::span(scratch_).first(got));
            progress = true;
        }
        max_buffered_ = std::max(max_buffered_, buf_.size());
        while (!buf_.empty()) {
            const std::size_t k = to_.write(buf_.front(std::min(buf_.size(), kChunk)));
            if (k == 0) break;
            buf_.consume(k);
            moved_ += k;
            progress = true;
        }
        if (!progress) break;
    }
    if (!fin_forwarded_ && buf_.empty() && from_.eof()) {
        to_.shutdown();
        fin_forwarded_ = true;
    }
}

} // namespace hybsim::proxy
