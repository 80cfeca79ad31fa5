#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "grebond/bond.hpp"
#include "proxy/convert.hpp"
#include "proxy/mode.hpp"
#include "proxy/overflow.hpp"
#include "proxy/policy.hpp"
#include "proxy/splice.hpp"
#include "simcore/simulator.hpp"
#include "transport/stack.hpp"

namespace hybsim::proxy {

struct Addressing {
    sim::Prefix host_prefix{sim::make_ip(10, 1, 1, 0), 24};
    sim::Prefix dsl_prefix{sim::make_ip(10, 1, 0, 0), 16};
    sim::Prefix lte_prefix{sim::make_ip(10, 2, 0, 0), 16};
    sim::Address cpe_dsl{sim::make_ip(10, 1, 0, 1), sim::Network::Dsl};   // @cpe1
    sim::Address cpe_lte{sim::make_ip(10, 2, 0, 1), sim::Network::Lte};   // @cpe2
    sim::Address hag_dsl{sim::make_ip(100, 64, 0, 1), sim::Network::Dsl}; // @h1
    sim::Address hag_lte{sim::make_ip(100, 65, 0, 1), sim::Network::Lte}; // @h2
    sim::Address hag_inet{sim::make_ip(100, 66, 0, 1), sim::Network::Internet};
    std::uint16_t convert_port = 5124;
};

struct ProxyConfig {
    Mode mode = Mode::MptcpImplicit;
    Addressing addr;
    transport::TransportConfig hcpe_transport;
    transport::TransportConfig hag_transport;
    // Scheduler of the multipath leg; unset picks DslPriority when the
    // overflow policy is on and LowestRtt otherwise.
    std::optional<transport::SchedulerPolicy> scheduler;
    OverflowConfig overflow;
    PolicyTable policy;
    DenyList deny;
    std::size_t splice_buffer = 256 * 1024;
    grebond::BondConfig bond;

    transport::SchedulerPolicy effective_scheduler() const {
        if (scheduler) return *scheduler;
        return overflow.enabled ? transport::SchedulerPolicy::DslPriority : transport::SchedulerPolicy::LowestRtt;
    }
};

enum class SessionState { Connecting, Established, Closed, Failed };

std::string_view to_string(SessionState s);

// Per-session accounting shared by both proxy ends.
struct SessionInfo {
    std::uint64_t id = 0;
    PolicyAction action = PolicyAction::Aggregate;
    sim::Endpoint client;
    sim::Endpoint server;
    SessionState state = SessionState::Connecting;
    sim::SimTime created;
    std::optional<sim::SimTime> established;
    std::optional<sim::SimTime> lte_requested;
    std::optional<sim::SimTime> lte_active;
    std::uint64_t bytes_up = 0;   // toward the server
    std::uint64_t bytes_down = 0; // toward the client
    std::size_t max_buffered = 0;
};

struct NodeStats {
    std::uint64_t intercepted = 0;
    std::uint64_t passed_through = 0;
    std::uint64_t refused = 0;
    std::uint64_t convert_malformed = 0;
    std::uint64_t convert_denied = 0;
    std::uint64_t dropped = 0;
};

using PacketOut = std::function<void(sim::Packet&&)>;

// Customer-side node between the LAN and the two access networks.
class HcpeNode {
public:
    struct Ports {
        PacketOut to_lan;
        PacketOut to_dsl;
        PacketOut to_lte;
    };
    // Sampled every overflow period; expected to return DSL utilization in [0,1].
    using LoadProbe = std::function<double()>;

    HcpeNode(sim::Simulator& sim, const ProxyConfig& cfg, Ports ports, LoadProbe load);
    ~HcpeNode();
    HcpeNode(const HcpeNode&) = delete;
    HcpeNode& operator=(const HcpeNode&) = delete;

    void start();
    void from_lan(sim::Packet&& pkt);
    void from_access(sim::Packet&& pkt, sim::Network net);

    transport::Stack& stack() { return *stack_; }
    transport::Stack* stack_or_null() { return stack_.get(); }
    grebond::BondEndpoint* bond() { return bond_.get(); }
    const OverflowController& overflow() const { return overflow_; }
    std::vector<const SessionInfo*> sessions() const;
    const NodeStats& stats() const { return stats_; }
    // Multipath connections toward the gateway, one per proxied session.
    std::vector<const transport::Connection*> upstream_connections() const;

private:
    struct Session;

    void route_stack_output(sim::Packet&& pkt);
    void intercept(const sim::Packet& syn, PolicyAction action);
    void on_upstream_established(Session& s);
    void on_upstream_closed(Session& s, transport::CloseReason why);
    void on_host_closed(Session& s, transport::CloseReason why);
    void maybe_join_lte(Session& s);
    void monitor_tick();
    bool wants_lte(const Session& s) const;

    sim::Simulator& sim_;
    ProxyConfig cfg_;
    Ports ports_;
    LoadProbe load_;
    std::unique_ptr<transport::Stack> stack_;
    std::unique_ptr<grebond::BondEndpoint> bond_;
    OverflowController overflow_;
    sim::Timer monitor_;
    std::vector<std::unique_ptr<Session>> sessions_;
    NodeStats stats_;
};

// Operator-side gateway between the access networks and the Internet.
class HagNode {
public:
    struct Ports {
        PacketOut to_dsl;
        PacketOut to_lte;
        PacketOut to_internet;
    };

    HagNode(sim::Simulator& sim, const ProxyConfig& cfg, Ports ports);
    ~HagNode();
    HagNode(const HagNode&) = delete;
    HagNode& operator=(const HagNode&) = delete;

    void start();
    void from_access(sim::Packet&& pkt, sim::Network net);
    void from_internet(sim::Packet&& pkt);

    transport::Stack& stack() { return *stack_; }
    transport::Stack* stack_or_null() { return stack_.get(); }
    grebond::BondEndpoint* bond() { return bond_.get(); }
    std::vector<const SessionInfo*> sessions() const;
    const NodeStats& stats() const { return stats_; }
    std::vector<const transport::Connection*> access_connections() const;

private:
    struct Session;

    void route_stack_output(sim::Packet&& pkt);
    void route_to_access(sim::Packet&& pkt);
    void intercept_implicit(const sim::Packet& syn);
    void intercept_explicit(const sim::Packet& syn);
    void wire_access_leg(Session& s);
    void wire_server_leg(Session& s);
    void on_server_closed(Session& s, transport::CloseReason why);
    void on_access_closed(Session& s, transport::CloseReason why);
    bool is_own_address(std::uint32_t ip) const;

    sim::Simulator& sim_;
    ProxyConfig cfg_;
    Ports ports_;
    std::unique_ptr<transport::Stack> stack_;
    std::unique_ptr<grebond::BondEndpoint> bond_;
    std::vector<std::unique_ptr<Session>> sessions_;
    NodeStats stats_;
};

// Bond configuration for a tunneled mode; RoundRobinNaive forces a fixed even
// split without resequencing.
grebond::BondConfig bond_config_for(Mode mode, grebond::BondConfig base);

} // namespace hybsim::proxy
