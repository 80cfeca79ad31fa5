#include "transport/scheduler.hpp"

namespace hybsim::transport {

std::string_view to_string(SchedulerPolicy p) {
    switch (p) {
    case SchedulerPolicy::LowestRtt: return "lowest_rtt";
    case SchedulerPolicy::DslPriority: return "dsl_priority";
    case SchedulerPolicy::RoundRobinNaive: return "round_robin";
    }
    return "?";
}

std::optional<SchedulerPolicy> parse_scheduler(std::string_view text) {
    if (text == "lowest_rtt") return SchedulerPolicy::LowestRtt;
    if (text == "dsl_priority") return SchedulerPolicy::DslPriority;
    if (text == "round_robin") return SchedulerPolicy::RoundRobinNaive;
    return std::nullopt;
}

namespace {

std::optional<std::size_t> lowest_rtt(std::span<const SchedulerCandidate> c, std::uint64_t len, bool dsl_only,
                                      bool non_dsl_only) {
    std::optional<std::size_t> pick;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c[i].space < len) continue;
        const bool dsl = c[i].net == sim::Network::Dsl;
        if ((dsl_only && !dsl) || (non_dsl_only && dsl)) continue;
        if (!pick || c[i].srtt < c[*pick].srtt) pick = i;
    }
    if (!pick) return std::nullopt;
    return c[*pick].subflow;
}

} // namespace

std::optional<std::size_t> select_subflow(SchedulerPolicy policy, std::span<const SchedulerCandidate> c,
                                          std::uint64_t len, RoundRobinCursor& rr) {
    if (c.empty()) return std::nullopt;
    if (len == 0) len = 1;
    switch (policy) {
    case SchedulerPolicy::LowestRtt: return lowest_rtt(c, len, false, false);
    case SchedulerPolicy::DslPriority:
        if (auto d = lowest_rtt(c, len, true, false)) return d;
        return lowest_rtt(c, len, false, true);
    case SchedulerPolicy::RoundRobinNaive: {
        const auto& turn = c[rr.turn % c.size()];
        if (turn.space < len) return std::nullopt;
        ++rr.turn;
        return turn.subflow;
    }
    }
    return std::nullopt;
}

} // namespace hybsim::transport
