#include "transport/reorder_buffer.hpp"

#include <algorithm>

namespace hybsim::transport {

ReorderBuffer::ReorderBuffer(std::uint64_t capacity_bytes, std::uint64_t start)
    : capacity_(capacity_bytes), cursor_(start) {}

std::uint64_t ReorderBuffer::window() const {
    const std::uint64_t edge = read_offset() + capacity_;
    return edge > cursor_ ? edge - cursor_ : 0;
}

ReorderBuffer::Insert ReorderBuffer::insert(std::uint64_t dsn, std::span<const std::uint8_t> bytes, bool fin) {
    const std::uint64_t end = dsn + bytes.size();
    if (fin_reached_) return Insert::Duplicate;
    if (end < cursor_ || (end == cursor_ && !fin)) return Insert::Duplicate;
    if (end > read_offset() + capacity_) return Insert::Overflow;

    if (dsn <= cursor_) {
        append_in_order(dsn, bytes, fin);
        drain_held();
        return Insert::Accepted;
    }

    auto it = held_.find(dsn);
    if (it != held_.end()) {
        if (it->second.bytes.size() >= bytes.size() && (it->second.fin || !fin)) return Insert::Duplicate;
        held_bytes_ -= it->second.bytes.size();
        it->second.bytes.assign(bytes.begin(), bytes.end());
        it->second.fin = it->second.fin || fin;
        held_bytes_ += bytes.size();
        return Insert::Accepted;
    }
    held_.emplace(dsn, Held{std::vector<std::uint8_t>(bytes.begin(), bytes.end()), fin});
    held_bytes_ += bytes.size();
    return Insert::Accepted;
}

void ReorderBuffer::append_in_order(std::uint64_t dsn, std::span<const std::uint8_t> bytes, bool fin) {
    const std::uint64_t skip = cursor_ - dsn;
    if (skip < bytes.size()) {
        ready_.append(bytes.subspan(static_cast<std::size_t>(skip)));
        cursor_ = dsn + bytes.size();
    }
    if (fin && dsn + bytes.size() == cursor_) fin_reached_ = true;
}

void ReorderBuffer::drain_held() {
    while (!held_.empty() && !fin_reached_) {
        auto it = held_.begin();
        if (it->first > cursor_) break;
        const std::uint64_t dsn = it->first;
        Held h = std::move(it->second);
        held_.erase(it);
        held_bytes_ -= h.bytes.size();
        append_in_order(dsn, h.bytes, h.fin);
    }
    if (fin_reached_) {
        // Anything beyond the end of stream is garbage.
        for (auto& [dsn, h] : held_) held_bytes_ -= h.bytes.size();
        held_.clear();
    }
}

std::size_t ReorderBuffer::read(std::span<std::uint8_t> out) { return ready_.read(out); }

std::size_t ReorderBuffer::discard(std::size_t n) {
    const std::size_t k = std::min(n, ready_.size());
    ready_.consume(k);
    return k;
}

} // namespace hybsim::transport
