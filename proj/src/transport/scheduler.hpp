#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "simcore/address.hpp"
#include "simcore/sim_time.hpp"

namespace hybsim::transport {

enum class SchedulerPolicy { LowestRtt, DslPriority, RoundRobinNaive };

std::string_view to_string(SchedulerPolicy p);
std::optional<SchedulerPolicy> parse_scheduler(std::string_view text);

struct SchedulerCandidate {
    std::size_t subflow = 0; // caller's index
    sim::Network net = sim::Network::Dsl;
    sim::SimTime srtt;
    std::uint64_t space = 0; // cwnd minus bytes in flight
};

// Strict alternation state for RoundRobinNaive.
struct RoundRobinCursor {
    std::uint64_t turn = 0;
};

// Picks the subflow for a segment of `len` bytes among the ACTIVE candidates
// (given in ascending subflow order). Returns nothing when no subflow may
// send now: no space, or, for RoundRobinNaive, the subflow whose turn it is
// has no space.
std::optional<std::size_t> select_subflow(SchedulerPolicy policy, std::span<const SchedulerCandidate> candidates,
                                          std::uint64_t len, RoundRobinCursor& rr);

} // namespace hybsim::transport
