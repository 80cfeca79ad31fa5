#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "simcore/sim_time.hpp"

namespace hybsim::grebond {

struct ReorderConfig {
    sim::SimTime gap_timeout = sim::SimTime::from_ms(20);
    std::size_t capacity = 1024; // held packets
};

struct ReorderStats {
    std::uint64_t released = 0;
    std::uint64_t late = 0;          // behind the cursor: duplicate or already skipped
    std::uint64_t gap_expiries = 0;
    std::uint64_t forced_releases = 0; // buffer full
    std::uint64_t skipped = 0;       // sequence numbers given up on
};

// Receive-side resequencer over a 32-bit wrapping sequence space. Sequence
// numbers are unwrapped against the cursor, so any value within 2^31 of it
// is placed correctly across the wrap.
template <class T>
class GreReorderBuffer {
public:
    explicit GreReorderBuffer(ReorderConfig cfg = {}, std::uint32_t first_seq = 0)
        : cfg_(cfg), expected_(first_seq) {}

    // Releases into `out`, in sequence order, whatever became deliverable.
    void insert(std::uint32_t seq, T item, sim::SimTime now, std::vector<T>& out) {
        const std::int32_t delta = static_cast<std::int32_t>(seq - static_cast<std::uint32_t>(expected_));
        if (delta < 0) {
            ++stats_.late;
            return;
        }
        const std::uint64_t s = expected_ + static_cast<std::uint64_t>(delta);
        if (s == expected_) {
            out.push_back(std::move(item));
            ++stats_.released;
            ++expected_;
            release_run(out);
            return;
        }
        if (held_.contains(s)) {
            ++stats_.late;
            return;
        }
        if (held_.size() >= cfg_.capacity) {
            ++stats_.forced_releases;
            skip_to_oldest(out);
            if (s < expected_) {
                ++stats_.late;
                return;
            }
            if (s == expected_) {
                out.push_back(std::move(item));
                ++stats_.released;
                ++expected_;
                release_run(out);
                return;
            }
        }
        held_.emplace(s, Held{std::move(item), now});
    }

    // Deadline of the gap in front of the oldest held packet.
    std::optional<sim::SimTime> deadline() const {
        if (held_.empty()) return std::nullopt;
        return held_.begin()->second.arrived + cfg_.gap_timeout;
    }

    void expire(sim::SimTime now, std::vector<T>& out) {
        while (auto d = deadline()) {
            if (*d > now) break;
            ++stats_.gap_expiries;
            skip_to_oldest(out);
        }
    }

    std::uint32_t expected() const { return static_cast<std::uint32_t>(expected_); }
    std::size_t held() const { return held_.size(); }
    const ReorderStats& stats() const { return stats_; }
    const ReorderConfig& config() const { return cfg_; }

private:
    struct Held {
        T item;
        sim::SimTime arrived;
    };

    void release_run(std::vector<T>& out) {
        for (auto it = held_.begin(); it != held_.end() && it->first == expected_; it = held_.erase(it)) {
            out.push_back(std::move(it->second.item));
            ++stats_.released;
            ++expected_;
        }
    }

    void skip_to_oldest(std::vector<T>& out) {
        if (held_.empty()) return;
        stats_.skipped += held_.begin()->first - expected_;
        expected_ = held_.begin()->first;
        release_run(out);
    }

    ReorderConfig cfg_;
    std::uint64_t expected_;
    std::map<std::uint64_t, Held> held_;
    ReorderStats stats_;
};

} // namespace hybsim::grebond
