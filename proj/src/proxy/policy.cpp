#include "proxy/policy.hpp"

#include <algorithm>

#include "proxy/mode.hpp"

namespace hybsim::proxy {

std::string_view to_string(PolicyAction a) {
    switch (a) {
    case PolicyAction::Aggregate: return "aggregate";
    case PolicyAction::DslOnlyPinned: return "dsl_only";
    case PolicyAction::Bypass: return "bypass";
    }
    return "?";
}

PolicyAction PolicyTable::classify(const sim::Endpoint& dst) const {
    for (const auto& r : rules_) {
        if (r.port && *r.port != dst.port) continue;
        if (r.prefix && !r.prefix->contains(dst.addr)) continue;
        return r.action;
    }
    return PolicyAction::Aggregate;
}

bool DenyList::denied(const sim::Endpoint& target) const {
    return std::any_of(prefixes_.begin(), prefixes_.end(), [&](const sim::Prefix& p) { return p.contains(target.addr); });
}

std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::MptcpImplicit: return "implicit";
    case Mode::MptcpExplicit: return "explicit";
    case Mode::GreBond: return "gre";
    case Mode::SinglePath: return "single_path";
    case Mode::RoundRobinNaive: return "round_robin_naive";
    }
    return "?";
}

std::optional<Mode> parse_mode(std::string_view t) {
    if (t == "implicit") return Mode::MptcpImplicit;
    if (t == "explicit") return Mode::MptcpExplicit;
    if (t == "gre") return Mode::GreBond;
    if (t == "single_path") return Mode::SinglePath;
    if (t == "round_robin_naive") return Mode::RoundRobinNaive;
    return std::nullopt;
}

} // namespace hybsim::proxy
