#include "proxy/nodes.hpp"

#include <algorithm>

namespace hybsim::proxy {

using sim::SimTime;
using transport::CloseReason;
using transport::Connection;
using transport::ConnectionCallbacks;
using transport::ConnState;

std::string_view to_string(SessionState s) {
    switch (s) {
    case SessionState::Connecting: return "connecting";
    case SessionState::Established: return "established";
    case SessionState::Closed: return "closed";
    case SessionState::Failed: return "failed";
    }
    return "?";
}

grebond::BondConfig bond_config_for(Mode mode, grebond::BondConfig base) {
    if (mode == Mode::RoundRobinNaive) {
        base.resequence = false;
        base.adaptive = false;
        base.initial_weights = {0.5, 0.5};
    }
    return base;
}

namespace {

struct Legs {
    Connection* near = nullptr; // toward the client
    Connection* far = nullptr;  // toward the server
    std::unique_ptr<Pipe> up;
    std::unique_ptr<Pipe> down;

    void pump(SessionInfo& info) {
        if (up) up->pump();
        if (down) down->pump();
        if (up) info.bytes_up = up->moved();
        if (down) info.bytes_down = down->moved();
        info.max_buffered = std::max({info.max_buffered, up ? up->max_buffered() : 0, down ? down->max_buffered() : 0});
    }
    bool closed() const {
        return near && far && near->state() == ConnState::Closed && far->state() == ConnState::Closed;
    }
};

void settle(SessionInfo& info, const Legs& legs) {
    if (info.state != SessionState::Failed && legs.closed()) info.state = SessionState::Closed;
}

} // namespace

// ---- HCPE --------------------------------------------------------------------

struct HcpeNode::Session {
    SessionInfo info;
    transport::FlowKey key_host;
    Legs legs;
    std::optional<sim::Address> lte_candidate;
    bool lte_joined = false;

    Connection* host() { return legs.near; }
    Connection* upstream() { return legs.far; }
};

HcpeNode::HcpeNode(sim::Simulator& sim, const ProxyConfig& cfg, Ports ports, LoadProbe load)
    : sim_(sim),
      cfg_(cfg),
      ports_(std::move(ports)),
      load_(std::move(load)),
      overflow_(cfg.overflow),
      monitor_(sim, [this] { monitor_tick(); }, "overflow-tick") {
    if (is_mptcp(cfg_.mode)) {
        stack_ = std::make_unique<transport::Stack>(
            sim_, [this](sim::Packet&& p) { route_stack_output(std::move(p)); }, cfg_.hcpe_transport, 0x4350, "hcpe");
    }
    if (is_tunneled(cfg_.mode)) {
        const auto& a = cfg_.addr;
        bond_ = std::make_unique<grebond::BondEndpoint>(
            sim_, bond_config_for(cfg_.mode, cfg_.bond),
            std::vector<grebond::TunnelSpec>{{a.cpe_dsl, a.hag_dsl}, {a.cpe_lte, a.hag_lte}},
            [this](std::size_t t, sim::Packet&& p) { (t == 0 ? ports_.to_dsl : ports_.to_lte)(std::move(p)); },
            [this](sim::Packet&& p) { ports_.to_lan(std::move(p)); }, "hcpe-bond");
    }
}

HcpeNode::~HcpeNode() = default;

void HcpeNode::start() {
    if (bond_) bond_->start();
    if (stack_ && cfg_.overflow.enabled) monitor_.arm_in(cfg_.overflow.period);
}

std::vector<const SessionInfo*> HcpeNode::sessions() const {
    std::vector<const SessionInfo*> out;
    for (const auto& s : sessions_) out.push_back(&s->info);
    return out;
}

std::vector<const Connection*> HcpeNode::upstream_connections() const {
    std::vector<const Connection*> out;
    for (const auto& s : sessions_) {
        if (s->legs.far) out.push_back(s->legs.far);
    }
    return out;
}

void HcpeNode::route_stack_output(sim::Packet&& pkt) {
    if (cfg_.addr.host_prefix.contains(pkt.dst)) {
        ports_.to_lan(std::move(pkt));
    } else if (pkt.src.net == sim::Network::Lte) {
        ports_.to_lte(std::move(pkt));
    } else {
        ports_.to_dsl(std::move(pkt));
    }
}

void HcpeNode::from_lan(sim::Packet&& pkt) {
    if (bond_) {
        if (!bond_->send(std::move(pkt))) ++stats_.dropped;
        return;
    }
    if (stack_) {
        if (stack_->deliver(pkt)) return;
        if (transport::Stack::is_initial_syn(pkt)) {
            const PolicyAction action = cfg_.policy.classify({pkt.dst, pkt.tcp()->dst_port});
            if (action != PolicyAction::Bypass) {
                intercept(pkt, action);
                return;
            }
            ++stats_.passed_through;
        }
    }
    ports_.to_dsl(std::move(pkt));
}

void HcpeNode::from_access(sim::Packet&& pkt, sim::Network) {
    if (bond_) {
        if (!bond_->receive(pkt)) ++stats_.dropped;
        return;
    }
    if (stack_ && stack_->deliver(pkt)) return;
    ports_.to_lan(std::move(pkt));
}

void HcpeNode::intercept(const sim::Packet& syn, PolicyAction action) {
    const transport::PendingSyn& held = stack_->hold(syn);
    auto owned = std::make_unique<Session>();
    Session& s = *owned;
    sessions_.push_back(std::move(owned));
    ++stats_.intercepted;
    const auto* seg = syn.tcp();
    s.key_host = held.key;
    s.info.id = sessions_.size();
    s.info.action = action;
    s.info.client = {syn.src, seg->src_port};
    s.info.server = {syn.dst, seg->dst_port};
    s.info.created = sim_.now();

    transport::ConnectOptions opts;
    opts.multipath = true;
    opts.scheduler = cfg_.effective_scheduler();
    sim::Endpoint local;
    sim::Endpoint remote;
    if (cfg_.mode == Mode::MptcpImplicit) {
        local = {{syn.src.ip, sim::Network::Dsl}, seg->src_port};
        remote = {{syn.dst.ip, sim::Network::Internet}, seg->dst_port};
    } else {
        local = {cfg_.addr.cpe_dsl, 0};
        remote = {cfg_.addr.hag_dsl, cfg_.addr.convert_port};
        opts.syn_payload = encode_convert({{{syn.dst.ip, sim::Network::Internet}, seg->dst_port}});
    }
    s.legs.far = &stack_->connect(local, remote, std::move(opts));

    ConnectionCallbacks cb;
    cb.on_established = [this, &s](Connection&) { on_upstream_established(s); };
    cb.on_readable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_writable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_closed = [this, &s](Connection&, CloseReason why) { on_upstream_closed(s, why); };
    cb.on_add_addr = [this, &s](Connection&, sim::Address a) {
        if (a.net == sim::Network::Lte && !s.lte_candidate) s.lte_candidate = a;
        maybe_join_lte(s);
    };
    cb.on_subflow_active = [this, &s](Connection& c, std::size_t idx) {
        if (c.subflow(idx).network() == sim::Network::Lte && !s.info.lte_active) s.info.lte_active = sim_.now();
    };
    s.legs.far->set_callbacks(std::move(cb));
}

void HcpeNode::on_upstream_established(Session& s) {
    if (!stack_->pending(s.key_host)) {
        // The host gave up while the upstream leg was being set up.
        s.upstream()->abort();
        return;
    }
    s.legs.near = &stack_->accept(s.key_host, transport::AcceptOptions{false, std::nullopt});
    s.legs.up = std::make_unique<Pipe>(*s.legs.near, *s.legs.far, cfg_.splice_buffer);
    s.legs.down = std::make_unique<Pipe>(*s.legs.far, *s.legs.near, cfg_.splice_buffer);
    s.info.state = SessionState::Established;
    s.info.established = sim_.now();

    ConnectionCallbacks cb;
    cb.on_established = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_readable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_writable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_closed = [this, &s](Connection&, CloseReason why) { on_host_closed(s, why); };
    s.legs.near->set_callbacks(std::move(cb));
    maybe_join_lte(s);
}

void HcpeNode::on_upstream_closed(Session& s, CloseReason why) {
    if (!s.legs.near) {
        stack_->refuse(s.key_host);
        ++stats_.refused;
        s.info.state = SessionState::Failed;
        return;
    }
    if (why != CloseReason::Normal) {
        s.info.state = SessionState::Failed;
        s.legs.near->abort();
        return;
    }
    s.legs.pump(s.info);
    settle(s.info, s.legs);
}

void HcpeNode::on_host_closed(Session& s, CloseReason why) {
    if (why != CloseReason::Normal) {
        s.info.state = SessionState::Failed;
        s.legs.far->abort();
        return;
    }
    settle(s.info, s.legs);
}

bool HcpeNode::wants_lte(const Session& s) const {
    if (s.lte_joined || s.info.action != PolicyAction::Aggregate) return false;
    const Connection* b = s.legs.far;
    if (!b || b->state() != ConnState::Established || !b->multipath()) return false;
    return !cfg_.overflow.enabled || overflow_.mode() == OverflowMode::Overflow;
}

void HcpeNode::maybe_join_lte(Session& s) {
    if (!wants_lte(s)) return;
    if (!s.info.lte_requested) s.info.lte_requested = sim_.now();
    if (!s.lte_candidate) return;
    s.legs.far->join({cfg_.addr.cpe_lte, 0}, {*s.lte_candidate, s.legs.far->remote().port});
    s.lte_joined = true;
}

void HcpeNode::monitor_tick() {
    overflow_.tick(load_ ? load_() : 0.0, sim_.now());
    if (overflow_.mode() == OverflowMode::Overflow) {
        for (auto& s : sessions_) maybe_join_lte(*s);
    }
    monitor_.arm_in(cfg_.overflow.period);
}

// ---- HAG ---------------------------------------------------------------------

struct HagNode::Session {
    SessionInfo info;
    transport::FlowKey key_access;
    bool explicit_mode = false;
    std::size_t skip = 0;
    Legs legs;
};

HagNode::HagNode(sim::Simulator& sim, const ProxyConfig& cfg, Ports ports)
    : sim_(sim), cfg_(cfg), ports_(std::move(ports)) {
    if (is_mptcp(cfg_.mode)) {
        stack_ = std::make_unique<transport::Stack>(
            sim_, [this](sim::Packet&& p) { route_stack_output(std::move(p)); }, cfg_.hag_transport, 0x4847, "hag");
    }
    if (is_tunneled(cfg_.mode)) {
        const auto& a = cfg_.addr;
        bond_ = std::make_unique<grebond::BondEndpoint>(
            sim_, bond_config_for(cfg_.mode, cfg_.bond),
            std::vector<grebond::TunnelSpec>{{a.hag_dsl, a.cpe_dsl}, {a.hag_lte, a.cpe_lte}},
            [this](std::size_t t, sim::Packet&& p) { (t == 0 ? ports_.to_dsl : ports_.to_lte)(std::move(p)); },
            [this](sim::Packet&& p) { ports_.to_internet(std::move(p)); }, "hag-bond");
    }
}

HagNode::~HagNode() = default;

void HagNode::start() {
    if (bond_) bond_->start();
}

std::vector<const SessionInfo*> HagNode::sessions() const {
    std::vector<const SessionInfo*> out;
    for (const auto& s : sessions_) out.push_back(&s->info);
    return out;
}

std::vector<const Connection*> HagNode::access_connections() const {
    std::vector<const Connection*> out;
    for (const auto& s : sessions_) {
        if (s->legs.near) out.push_back(s->legs.near);
    }
    return out;
}

bool HagNode::is_own_address(std::uint32_t ip) const {
    const auto& a = cfg_.addr;
    return ip == a.hag_dsl.ip || ip == a.hag_lte.ip || ip == a.hag_inet.ip;
}

void HagNode::route_to_access(sim::Packet&& pkt) {
    if (cfg_.addr.dsl_prefix.contains(pkt.dst)) {
        ports_.to_dsl(std::move(pkt));
    } else if (cfg_.addr.lte_prefix.contains(pkt.dst)) {
        ports_.to_lte(std::move(pkt));
    } else {
        ++stats_.dropped;
    }
}

void HagNode::route_stack_output(sim::Packet&& pkt) {
    if (cfg_.addr.dsl_prefix.contains(pkt.dst) || cfg_.addr.lte_prefix.contains(pkt.dst)) {
        route_to_access(std::move(pkt));
    } else {
        ports_.to_internet(std::move(pkt));
    }
}

void HagNode::from_access(sim::Packet&& pkt, sim::Network net) {
    if (bond_) {
        if (!bond_->receive(pkt)) ++stats_.dropped;
        return;
    }
    if (stack_) {
        // The access network a segment came in on decides the subflow's path.
        pkt.dst.net = net;
        if (stack_->deliver(pkt)) return;
        if (transport::Stack::is_initial_syn(pkt)) {
            const auto* seg = pkt.tcp();
            if (cfg_.mode == Mode::MptcpImplicit && seg->mp_capable && !is_own_address(pkt.dst.ip)) {
                intercept_implicit(pkt);
                return;
            }
            if (cfg_.mode == Mode::MptcpExplicit && is_own_address(pkt.dst.ip) &&
                seg->dst_port == cfg_.addr.convert_port) {
                intercept_explicit(pkt);
                return;
            }
            if (is_own_address(pkt.dst.ip)) {
                stack_->hold(pkt);
                stack_->refuse(transport::inbound_key(pkt));
                ++stats_.refused;
                return;
            }
            ++stats_.passed_through;
        }
        if (is_own_address(pkt.dst.ip)) {
            ++stats_.dropped;
            return;
        }
    }
    ports_.to_internet(std::move(pkt));
}

void HagNode::from_internet(sim::Packet&& pkt) {
    if (bond_) {
        if (!cfg_.addr.host_prefix.contains(pkt.dst) || !bond_->send(std::move(pkt))) ++stats_.dropped;
        return;
    }
    if (stack_ && stack_->deliver(pkt)) return;
    route_to_access(std::move(pkt));
}

void HagNode::intercept_implicit(const sim::Packet& syn) {
    const transport::PendingSyn& held = stack_->hold(syn);
    auto owned = std::make_unique<Session>();
    Session& s = *owned;
    sessions_.push_back(std::move(owned));
    ++stats_.intercepted;
    const auto* seg = syn.tcp();
    s.key_access = held.key;
    s.info.id = sessions_.size();
    s.info.client = {syn.src, seg->src_port};
    s.info.server = {syn.dst, seg->dst_port};
    s.info.created = sim_.now();
    // The server sees the client's own address and port.
    s.legs.far = &stack_->connect({{syn.src.ip, sim::Network::Internet}, seg->src_port},
                                  {{syn.dst.ip, sim::Network::Internet}, seg->dst_port},
                                  transport::ConnectOptions{false, {}, std::nullopt});
    wire_server_leg(s);
}

void HagNode::intercept_explicit(const sim::Packet& syn) {
    const transport::PendingSyn& held = stack_->hold(syn);
    const transport::FlowKey key = held.key;
    const auto parsed = parse_convert(held.syn.tcp()->data);
    const auto* ok = std::get_if<ConvertParsed>(&parsed);
    if (!ok) {
        ++stats_.convert_malformed;
        ++stats_.refused;
        stack_->refuse(key);
        return;
    }
    if (cfg_.deny.denied(ok->request.target)) {
        ++stats_.convert_denied;
        ++stats_.refused;
        stack_->refuse(key);
        return;
    }
    auto owned = std::make_unique<Session>();
    Session& s = *owned;
    sessions_.push_back(std::move(owned));
    ++stats_.intercepted;
    s.key_access = key;
    s.explicit_mode = true;
    s.skip = ok->consumed;
    s.info.id = sessions_.size();
    s.info.client = {syn.src, syn.tcp()->src_port};
    s.info.server = ok->request.target;
    s.info.created = sim_.now();
    s.legs.far = &stack_->connect({cfg_.addr.hag_inet, 0}, ok->request.target,
                                  transport::ConnectOptions{false, {}, std::nullopt});
    wire_server_leg(s);
    s.legs.near = &stack_->accept(key, transport::AcceptOptions{true, cfg_.effective_scheduler()});
    wire_access_leg(s);
}

void HagNode::wire_server_leg(Session& s) {
    ConnectionCallbacks cb;
    cb.on_established = [this, &s](Connection&) {
        if (!s.explicit_mode && !s.legs.near) {
            if (!stack_->pending(s.key_access)) {
                s.legs.far->abort();
                return;
            }
            s.legs.near = &stack_->accept(s.key_access, transport::AcceptOptions{true, cfg_.effective_scheduler()});
            wire_access_leg(s);
        }
        s.legs.pump(s.info);
    };
    cb.on_readable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_writable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_closed = [this, &s](Connection&, CloseReason why) { on_server_closed(s, why); };
    s.legs.far->set_callbacks(std::move(cb));
}

void HagNode::wire_access_leg(Session& s) {
    s.legs.up = std::make_unique<Pipe>(*s.legs.near, *s.legs.far, cfg_.splice_buffer, s.skip);
    s.legs.down = std::make_unique<Pipe>(*s.legs.far, *s.legs.near, cfg_.splice_buffer);
    ConnectionCallbacks cb;
    cb.on_established = [this, &s](Connection& c) {
        s.info.state = SessionState::Established;
        s.info.established = sim_.now();
        if (c.multipath()) c.advertise_address(cfg_.addr.hag_lte);
        s.legs.pump(s.info);
    };
    cb.on_readable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_writable = [&s](Connection&) { s.legs.pump(s.info); };
    cb.on_closed = [this, &s](Connection&, CloseReason why) { on_access_closed(s, why); };
    cb.on_subflow_active = [this, &s](Connection& c, std::size_t idx) {
        if (c.subflow(idx).network() == sim::Network::Lte && !s.info.lte_active) s.info.lte_active = sim_.now();
    };
    s.legs.near->set_callbacks(std::move(cb));
}

void HagNode::on_server_closed(Session& s, CloseReason why) {
    if (why != CloseReason::Normal) {
        s.info.state = SessionState::Failed;
        if (!s.legs.near) {
            stack_->refuse(s.key_access);
            ++stats_.refused;
        } else {
            s.legs.near->abort();
        }
        return;
    }
    s.legs.pump(s.info);
    settle(s.info, s.legs);
}

void HagNode::on_access_closed(Session& s, CloseReason why) {
    if (why != CloseReason::Normal) {
        s.info.state = SessionState::Failed;
        s.legs.far->abort();
        return;
    }
    s.legs.pump(s.info);
    settle(s.info, s.legs);
}

} // namespace hybsim::proxy
