#include "harness/traffic.hpp"

#include <algorithm>

#include "harness/pattern.hpp"

namespace hybsim::harness {

std::uint64_t PatternSource::pump(std::uint64_t budget) {
    if (!ready()) return 0;
    std::uint64_t total = 0;
    while (budget > 0) {
        std::uint64_t want = std::min<std::uint64_t>(budget, 64 * 1024);
        if (limit_ > 0) want = std::min(want, limit_ - written_);
        if (want == 0) break;
        chunk_.resize(static_cast<std::size_t>(want));
        fill_pattern(seed_, written_, chunk_);
        const std::size_t n = conn_->write(chunk_);
        written_ += n;
        total += n;
        budget -= n;
        if (n < want) break;
    }
    if (limit_ > 0 && written_ == limit_) finish();
    return total;
}

void PatternSource::finish() {
    if (finished_) return;
    finished_ = true;
    if (conn_ && conn_->state() != transport::ConnState::Closed) conn_->shutdown();
}

void PatternSink::drain(transport::Connection& c, sim::SimTime now, sim::SimTime window_from, sim::SimTime window_to) {
    for (;;) {
        const std::size_t n = c.read(buf_);
        if (n == 0) break;
        const auto got = std::span<const std::uint8_t>(buf_).first(n);
        if (verify_pattern(seed_, received_, got) != n) corrupt_ = true;
        received_ += n;
        if (now >= window_from && now < window_to) window_bytes_ += n;
    }
    if (c.eof() && !eof_at_) eof_at_ = now;
}

void TokenBucket::refill(sim::SimTime now) {
    if (last_) tokens_ = std::min(depth_, tokens_ + rate_ * (now - *last_).seconds());
    last_ = now;
}

} // namespace hybsim::harness
