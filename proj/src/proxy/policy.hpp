#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "simcore/address.hpp"

namespace hybsim::proxy {

enum class PolicyAction { Aggregate, DslOnlyPinned, Bypass };

std::string_view to_string(PolicyAction a);

// A rule matches when every field it sets matches the session's destination.
struct PolicyRule {
    std::optional<std::uint16_t> port;
    std::optional<sim::Prefix> prefix;
    PolicyAction action = PolicyAction::Aggregate;
};

// First matching rule wins; no match means Aggregate.
class PolicyTable {
public:
    PolicyTable() = default;
    explicit PolicyTable(std::vector<PolicyRule> rules) : rules_(std::move(rules)) {}

    void add(PolicyRule r) { rules_.push_back(r); }
    PolicyAction classify(const sim::Endpoint& destination) const;
    const std::vector<PolicyRule>& rules() const { return rules_; }

private:
    std::vector<PolicyRule> rules_;
};

// Convert targets the gateway refuses to relay to.
class DenyList {
public:
    void add(sim::Prefix p) { prefixes_.push_back(p); }
    bool denied(const sim::Endpoint& target) const;
    bool empty() const { return prefixes_.empty(); }

private:
    std::vector<sim::Prefix> prefixes_;
};

} // namespace hybsim::proxy
