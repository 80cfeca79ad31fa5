#include "harness/world.hpp"

#include <algorithm>
#include <cmath>

namespace hybsim::harness {

using sim::SimTime;

namespace {

sim::LinkConfig link_config(std::string name, const LinkParams& p, std::optional<sim::Prefix> filter = {}) {
    sim::LinkConfig c;
    c.name = std::move(name);
    c.bandwidth_bps = static_cast<std::uint64_t>(std::llround(p.bandwidth_mbps * 1e6));
    c.delay = SimTime::from_us(static_cast<std::uint64_t>(std::llround(p.delay_ms * 1000.0)));
    c.queue_packets = p.queue;
    c.loss = p.loss;
    c.ingress_filter = filter;
    return c;
}

SimTime seconds(double s) { return SimTime::from_us(static_cast<std::uint64_t>(std::llround(s * 1e6))); }

double mbps(std::uint64_t bytes, double secs) { return secs > 0 ? static_cast<double>(bytes) * 8.0 / secs / 1e6 : 0.0; }

} // namespace

transport::TransportConfig transport_config(const Scenario& s) {
    transport::TransportConfig c;
    c.mss = s.mode.mss;
    c.receive_buffer = std::uint64_t{s.mode.receive_buffer_kb} * 1024;
    return c;
}

proxy::ProxyConfig proxy_config(const Scenario& s) {
    proxy::ProxyConfig c;
    c.mode = s.mode.mode;
    c.hcpe_transport = transport_config(s);
    // Gives up on the gateway before the host gives up on us, so the host
    // sees a reset rather than a silent timeout.
    c.hcpe_transport.syn_retries = 2;
    c.hag_transport = transport_config(s);
    c.scheduler = s.mode.scheduler;

    const auto& p = s.policy;
    c.overflow.enabled = p.overflow;
    c.overflow.threshold = p.threshold;
    c.overflow.hysteresis = p.hysteresis;
    c.overflow.gain = p.ewma_gain;
    c.overflow.period = seconds(p.monitor_period_ms / 1000.0);
    c.overflow.hold_down = seconds(p.hold_down_s);
    for (auto port : p.bypass_ports) c.policy.add({port, std::nullopt, proxy::PolicyAction::Bypass});
    for (auto pre : p.bypass_prefixes) c.policy.add({std::nullopt, pre, proxy::PolicyAction::Bypass});
    for (auto port : p.pin_ports) c.policy.add({port, std::nullopt, proxy::PolicyAction::DslOnlyPinned});
    for (auto pre : p.pin_prefixes) c.policy.add({std::nullopt, pre, proxy::PolicyAction::DslOnlyPinned});
    for (auto pre : p.deny_prefixes) c.deny.add(pre);
    c.splice_buffer = std::size_t{s.mode.splice_buffer_kb} * 1024;

    c.bond.mtu = s.topology.mtu;
    c.bond.adaptive = s.mode.gre_adaptive;
    c.bond.reorder.gap_timeout = seconds(s.mode.gap_timeout_ms / 1000.0);
    c.bond.reorder.capacity = s.mode.reorder_capacity;
    return c;
}

World::World(const Scenario& s, std::uint64_t seed, RunOptions opts) : s_(s), opts_(opts), sim_(seed) {
    const auto& t = s_.topology;
    const proxy::ProxyConfig pc = proxy_config(s_);
    const auto dsl_filter = t.ingress_filter ? std::optional(pc.addr.dsl_prefix) : std::nullopt;
    const auto lte_filter = t.ingress_filter ? std::optional(pc.addr.lte_prefix) : std::nullopt;

    links_.lan_up = sim_.add_link(link_config("lan_up", t.lan));
    links_.lan_down = sim_.add_link(link_config("lan_down", t.lan));
    links_.dsl_up = sim_.add_link(link_config("dsl_up", t.dsl, dsl_filter));
    links_.dsl_down = sim_.add_link(link_config("dsl_down", t.dsl));
    links_.lte_up = sim_.add_link(link_config("lte_up", t.lte, lte_filter));
    links_.lte_down = sim_.add_link(link_config("lte_down", t.lte));
    links_.inet_up = sim_.add_link(link_config("inet_up", t.internet));
    links_.inet_down = sim_.add_link(link_config("inet_down", t.internet));

    const auto tc = transport_config(s_);
    host_ = std::make_unique<transport::Stack>(
        sim_, [this](sim::Packet&& p) { sim_.transmit(links_.lan_up, std::move(p)); }, tc, 0x484f, "host");
    server_ = std::make_unique<transport::Stack>(
        sim_, [this](sim::Packet&& p) { sim_.transmit(links_.inet_down, std::move(p)); }, tc, 0x5356, "server");
    hcpe_ = std::make_unique<proxy::HcpeNode>(
        sim_, pc,
        proxy::HcpeNode::Ports{[this](sim::Packet&& p) { sim_.transmit(links_.lan_down, std::move(p)); },
                               [this](sim::Packet&& p) { sim_.transmit(links_.dsl_up, std::move(p)); },
                               [this](sim::Packet&& p) { sim_.transmit(links_.lte_up, std::move(p)); }},
        [this] { return dsl_load(); });
    hag_ = std::make_unique<proxy::HagNode>(
        sim_, pc,
        proxy::HagNode::Ports{[this](sim::Packet&& p) { sim_.transmit(links_.dsl_down, std::move(p)); },
                              [this](sim::Packet&& p) { sim_.transmit(links_.lte_down, std::move(p)); },
                              [this](sim::Packet&& p) { sim_.transmit(links_.inet_up, std::move(p)); }});

    sim_.set_receiver(links_.lan_up, [this](sim::Packet&& p) { hcpe_->from_lan(std::move(p)); });
    sim_.set_receiver(links_.lan_down, [this](sim::Packet&& p) { host_->deliver(p); });
    sim_.set_receiver(links_.dsl_up, [this](sim::Packet&& p) { hag_->from_access(std::move(p), sim::Network::Dsl); });
    sim_.set_receiver(links_.lte_up, [this](sim::Packet&& p) { hag_->from_access(std::move(p), sim::Network::Lte); });
    sim_.set_receiver(links_.dsl_down, [this](sim::Packet&& p) { hcpe_->from_access(std::move(p), sim::Network::Dsl); });
    sim_.set_receiver(links_.lte_down, [this](sim::Packet&& p) { hcpe_->from_access(std::move(p), sim::Network::Lte); });
    sim_.set_receiver(links_.inet_up, [this](sim::Packet&& p) { on_server_packet(std::move(p)); });
    sim_.set_receiver(links_.inet_down, [this](sim::Packet&& p) { hag_->from_internet(std::move(p)); });

    if (opts_.trace) sim_.set_trace(&trace_);
    if (opts_.conn_log) {
        for (auto* st : {host_.get(), server_.get(), hcpe_->stack_or_null(), hag_->stack_or_null()}) {
            if (st) st->set_conn_log(&conn_log_);
        }
    }
}

World::~World() = default;

SimTime World::start_time() const { return seconds(s_.traffic.start_s); }
SimTime World::stop_time() const { return seconds(s_.traffic.start_s + s_.traffic.duration_s); }
SimTime World::end_time() const { return seconds(s_.traffic.start_s + s_.traffic.duration_s + s_.traffic.drain_s); }

double World::dsl_load() const {
    const SimTime w = SimTime::from_s(1);
    return std::max(sim_.utilization(links_.dsl_up, w), sim_.utilization(links_.dsl_down, w));
}

void World::start() {
    if (started_) return;
    started_ = true;
    const auto& tr = s_.traffic;
    const double warmup = std::min(2.0, tr.duration_s / 2);
    sim_.set_measurement_window(seconds(tr.start_s + warmup), stop_time());
    hcpe_->start();
    hag_->start();
    sim_.schedule(start_time(), [this] { open_transfers(); }, "traffic-start");
    if (tr.bytes == 0) {
        sim_.schedule(stop_time(), [this] {
            for (auto& t : transfers_) t->source->finish();
        }, "traffic-stop");
    }
    if (tr.rate_mbps) {
        const double rate = *tr.rate_mbps * 1e6 / 8;
        bucket_.emplace(rate, std::max(rate * 0.005, 3000.0));
        pacer_ = std::make_unique<sim::Timer>(sim_, [this] { pace_tick(); }, "pacer");
    }
}

void World::open_transfers() {
    const auto& tr = s_.traffic;
    const bool uplink = tr.direction == Direction::Uplink;
    for (std::uint32_t i = 0; i < tr.connections; ++i) {
        auto t = std::make_unique<Transfer>();
        t->seed = sim::derive_seed(sim_.seed(), 0x7000 + i);
        t->source = std::make_unique<PatternSource>(t->seed, tr.bytes);
        t->sink = std::make_unique<PatternSink>(t->seed);
        transport::ConnectOptions o;
        o.multipath = false;
        transport::Connection& c = host_->connect({kHost, 0}, {kServer, tr.port}, o);
        t->client = &c;
        wire(*t, c, uplink);
        transfers_.push_back(std::move(t));
    }
    if (pacer_) {
        bucket_->refill(sim_.now());
        pacer_->arm_in(SimTime::from_ms(1));
    }
}

void World::on_server_packet(sim::Packet&& pkt) {
    if (server_->deliver(pkt)) return;
    if (!transport::Stack::is_initial_syn(pkt)) return;
    server_->hold(pkt);
    const auto key = transport::inbound_key(pkt);
    if (pkt.dst.ip != kServer.ip || key.local_port != s_.traffic.port) {
        server_->refuse(key);
        return;
    }
    Transfer* match = nullptr;
    for (auto& t : transfers_) {
        if (!t->server && t->client->local().port == key.remote_port) match = t.get();
    }
    if (!match) {
        server_->refuse(key);
        return;
    }
    transport::AcceptOptions o;
    o.allow_multipath = false;
    transport::Connection& c = server_->accept(key, o);
    match->server = &c;
    wire(*match, c, s_.traffic.direction == Direction::Downlink);
}

void World::wire(Transfer& t, transport::Connection& c, bool writer) {
    transport::ConnectionCallbacks cb;
    Transfer* tp = &t;
    if (writer) {
        t.source->attach(c);
        cb.on_writable = [this, tp](transport::Connection&) {
            if (!bucket_ && sending(*tp)) tp->source->pump();
        };
        cb.on_readable = [](transport::Connection& conn) { conn.discard(conn.readable()); };
    } else {
        cb.on_readable = [this, tp](transport::Connection& conn) {
            const SimTime from = seconds(s_.traffic.start_s + std::min(2.0, s_.traffic.duration_s / 2));
            tp->sink->drain(conn, sim_.now(), from, stop_time());
            if (conn.eof() && !conn.send_closed()) conn.shutdown();
        };
    }
    // The sender starts once both ends are established, the way a
    // measurement tool waits for its start signal.
    cb.on_established = [this, tp](transport::Connection&) {
        if (!bucket_ && sending(*tp)) tp->source->pump();
    };
    cb.on_closed = [tp](transport::Connection&, transport::CloseReason why) {
        if (why != transport::CloseReason::Normal) tp->failed = true;
    };
    c.set_callbacks(std::move(cb));
}

void World::pace_tick() {
    bucket_->refill(sim_.now());
    const std::size_t n = transfers_.size();
    bool active = false;
    for (std::size_t k = 0; k < n; ++k) {
        PatternSource& src = *transfers_[(rotate_ + k) % n]->source;
        if (src.finished()) continue;
        active = true;
        if (!sending(*transfers_[(rotate_ + k) % n])) continue;
        // Whole segments only, so pacing does not add partial-segment overhead.
        const std::uint64_t avail = bucket_->available() / s_.mode.mss * s_.mode.mss;
        if (avail == 0) break;
        bucket_->consume(src.pump(avail));
    }
    rotate_ = n ? (rotate_ + 1) % n : 0;
    if (active && sim_.now() < stop_time()) pacer_->arm_in(SimTime::from_ms(1));
}

bool World::sending(const Transfer& t) const {
    const auto up = transport::ConnState::Established;
    return t.client && t.server && t.client->state() == up && t.server->state() == up && t.source->ready();
}

bool World::all_done() const {
    if (transfers_.empty()) return false;
    return std::all_of(transfers_.begin(), transfers_.end(),
                       [](const auto& t) { return t->failed || t->sink->eof(); });
}

RunResult World::run() {
    start();
    const SimTime end = end_time();
    const SimTime step = SimTime::from_ms(100);
    while (sim_.now() < end) {
        sim_.run_until(std::min(end, sim_.now() + step));
        if (all_done()) break;
    }
    return collect();
}

RunResult World::collect() const {
    RunResult r;
    r.seed = sim_.seed();
    const auto& tr = s_.traffic;
    const double window_s = tr.duration_s - std::min(2.0, tr.duration_s / 2);
    const double full_s = tr.duration_s;
    const bool down = tr.direction == Direction::Downlink;
    const auto& dsl = sim_.link(down ? links_.dsl_down : links_.dsl_up).stats();
    const auto& lte = sim_.link(down ? links_.lte_down : links_.lte_up).stats();

    r.dsl_mbps = mbps(dsl.window_bytes_delivered, window_s);
    r.lte_mbps = mbps(lte.window_bytes_delivered, window_s);
    r.dsl_mbps_full = mbps(dsl.bytes_delivered, full_s);
    r.lte_mbps_full = mbps(lte.bytes_delivered, full_s);
    const double wire = r.dsl_mbps + r.lte_mbps;
    r.lte_share = wire > 0 ? r.lte_mbps / wire : 0.0;

    std::uint64_t window_bytes = 0;
    std::optional<SimTime> last_eof;
    for (const auto& t : transfers_) {
        window_bytes += t->sink->window_bytes();
        r.bytes_received += t->sink->received();
        r.bytes_sent += t->source->written();
        r.corrupt = r.corrupt || t->sink->corrupt();
        ++r.transfers;
        if (t->sink->eof() && !t->failed && t->sink->received() == t->source->written()) {
            ++r.transfers_complete;
            last_eof = std::max(last_eof.value_or(SimTime{}), *t->sink->eof_at());
        }
    }
    r.aggregate_mbps = mbps(window_bytes, window_s);
    r.aggregate_mbps_full = mbps(r.bytes_received, full_s);
    if (r.transfers > 0 && r.transfers_complete == r.transfers) r.completion_s = (*last_eof - start_time()).seconds();

    auto* self = const_cast<World*>(this);
    for (auto* st : {host_.get(), server_.get(), self->hcpe_->stack_or_null(), self->hag_->stack_or_null()}) {
        if (!st) continue;
        for (const auto& c : st->connections()) r.retx += c->stats().retransmissions + c->stats().reinjections;
    }
    for (auto* b : {self->hcpe_->bond(), self->hag_->bond()}) {
        if (!b) continue;
        r.reorder_releases += b->reorder_stats().gap_expiries + b->reorder_stats().forced_releases;
    }
    r.lte_bytes = sim_.link(links_.lte_up).stats().bytes_accepted + sim_.link(links_.lte_down).stats().bytes_accepted;
    r.filter_drops =
        sim_.link(links_.dsl_up).stats().dropped_filtered + sim_.link(links_.lte_up).stats().dropped_filtered;
    r.overflow_transitions = hcpe_->overflow().transitions();
    r.events = sim_.processed();
    r.end_s = sim_.now().seconds();
    r.trace = trace_.str();
    r.conn_log = conn_log_.str();
    return r;
}

RunResult run_once(const Scenario& s, std::uint64_t seed, RunOptions opts) {
    World w(s, seed, opts);
    return w.run();
}

} // namespace hybsim::harness
