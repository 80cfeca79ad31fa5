#pragma once

#include <cstdint>
#include <span>

#include "simcore/sim_time.hpp"

namespace hybsim::transport {

struct CongestionState {
    std::uint64_t cwnd = 0;
    std::uint64_t ssthresh = 0;
};

// What the coupled increase needs to know about one subflow.
struct CoupledView {
    std::uint64_t cwnd = 0;
    sim::SimTime srtt;
};

// Linked-increase alpha, normalized so that the per-ACK increase on subflow r
// is alpha * mss * acked / total_cwnd. Exposed for tests and logs.
double linked_alpha(std::span<const CoupledView> subflows);

// Congestion-avoidance increase in bytes for subflow `self` after `acked`
// newly acknowledged bytes:
//   min(alpha * mss * acked / total, mss * acked / cwnd_self)
// evaluated as mss * acked * c_best / S^2 with S = sum_r c_r * rtt_best / rtt_r,
// where `best` maximizes c_r / rtt_r^2. With a single subflow this is exactly
// floor(mss * acked / cwnd).
std::uint64_t linked_increase(std::span<const CoupledView> subflows, std::size_t self, std::uint64_t acked,
                              std::uint32_t mss);

// Window after an ACK: slow start (at most one MSS per ACK) below ssthresh,
// coupled increase above.
std::uint64_t cwnd_after_ack(const CongestionState& st, std::span<const CoupledView> subflows, std::size_t self,
                             std::uint64_t acked, std::uint32_t mss);

// Fast-retransmit loss: halve, ssthresh follows.
void apply_loss(CongestionState& st, std::uint32_t mss);

// Retransmission timeout: restart from one segment. `flight` is the window
// the reduction is based on.
void apply_timeout(CongestionState& st, std::uint64_t flight, std::uint32_t mss);

} // namespace hybsim::transport
