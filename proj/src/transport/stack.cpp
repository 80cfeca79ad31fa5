#include "transport/stack.hpp"

#include "simcore/rng.hpp"
#include "transport/token.hpp"

namespace hybsim::transport {

std::size_t FlowKeyHash::operator()(const FlowKey& k) const noexcept {
    const std::uint64_t a = (std::uint64_t{k.local_ip} << 16) | k.local_port;
    const std::uint64_t b = (std::uint64_t{k.remote_ip} << 16) | k.remote_port;
    return static_cast<std::size_t>(sim::mix64(a ^ sim::mix64(b)));
}

FlowKey inbound_key(const sim::Packet& pkt) {
    const sim::TcpSegment* seg = pkt.tcp();
    return FlowKey{pkt.dst.ip, seg ? seg->dst_port : std::uint16_t{0}, pkt.src.ip,
                   seg ? seg->src_port : std::uint16_t{0}};
}

Stack::Stack(sim::Simulator& sim, Output out, TransportConfig cfg, std::uint64_t rng_stream, std::string name)
    : sim_(sim), out_(std::move(out)), cfg_(cfg), name_(std::move(name)), rng_(sim.make_rng(rng_stream)) {}

Stack::~Stack() = default;

Connection& Stack::connect(sim::Endpoint local, sim::Endpoint remote, ConnectOptions opts) {
    if (local.port == 0) local.port = ephemeral_port();
    auto conn = std::unique_ptr<Connection>(
        new Connection(*this, next_conn_id_++, true, opts.multipath, opts.scheduler.value_or(cfg_.scheduler)));
    Connection& c = *conn;
    conns_.push_back(std::move(conn));
    c.start_connect(local, remote, std::move(opts.syn_payload));
    return c;
}

bool Stack::is_initial_syn(const sim::Packet& pkt) {
    const sim::TcpSegment* seg = pkt.tcp();
    return seg && seg->has(sim::tcp_flags::kSyn) && !seg->has(sim::tcp_flags::kAck) && !seg->mp_join;
}

bool Stack::deliver(const sim::Packet& pkt) {
    const sim::TcpSegment* seg = pkt.tcp();
    if (!seg) return false;
    const FlowKey key = inbound_key(pkt);
    if (auto it = flows_.find(key); it != flows_.end()) {
        it->second.conn->on_segment(it->second.subflow, pkt);
        return true;
    }
    if (auto it = pending_.find(key); it != pending_.end()) {
        if (seg->has(sim::tcp_flags::kRst)) pending_.erase(it);
        return true;
    }
    if (seg->has(sim::tcp_flags::kSyn) && !seg->has(sim::tcp_flags::kAck) && seg->mp_join) {
        Connection* conn = find_token(seg->mp_join->token);
        if (conn && conn->state() == ConnState::Established && conn->multipath()) {
            conn->start_join_accept(pkt);
        } else {
            send_reset_for(pkt);
        }
        return true;
    }
    return false;
}

const PendingSyn& Stack::hold(const sim::Packet& syn) {
    const FlowKey key = inbound_key(syn);
    auto [it, fresh] = pending_.try_emplace(key);
    if (fresh) it->second = PendingSyn{key, syn, syn.tcp()->mp_capable.has_value(), sim_.now()};
    return it->second;
}

const PendingSyn* Stack::pending(const FlowKey& key) const {
    auto it = pending_.find(key);
    return it == pending_.end() ? nullptr : &it->second;
}

Connection& Stack::accept(const FlowKey& key, AcceptOptions opts) {
    auto it = pending_.find(key);
    if (it == pending_.end()) throw Error(ErrorCode::InvalidArgument, "accept of an unknown pending SYN");
    const sim::Packet syn = std::move(it->second.syn);
    pending_.erase(it);
    auto conn = std::unique_ptr<Connection>(
        new Connection(*this, next_conn_id_++, false, false, opts.scheduler.value_or(cfg_.scheduler)));
    Connection& c = *conn;
    conns_.push_back(std::move(conn));
    c.start_accept(syn, opts.allow_multipath);
    return c;
}

void Stack::refuse(const FlowKey& key) {
    auto it = pending_.find(key);
    if (it == pending_.end()) return;
    send_reset_for(it->second.syn);
    pending_.erase(it);
}

Connection* Stack::find_token(std::uint32_t token) const {
    auto it = tokens_.find(token);
    return it == tokens_.end() ? nullptr : it->second;
}

void Stack::output(sim::Packet&& pkt) { out_(std::move(pkt)); }

void Stack::bind(const FlowKey& key, Connection* conn, std::size_t subflow) { flows_[key] = Binding{conn, subflow}; }

void Stack::unbind_token(std::uint32_t token) { tokens_.erase(token); }

std::uint64_t Stack::fresh_key() {
    for (;;) {
        const std::uint64_t key = rng_.next();
        const std::uint32_t token = derive_token(key);
        if (token != 0 && !tokens_.contains(token)) return key;
    }
}

void Stack::send_reset_for(const sim::Packet& pkt) {
    const sim::TcpSegment& in = *pkt.tcp();
    sim::TcpSegment seg;
    seg.src_port = in.dst_port;
    seg.dst_port = in.src_port;
    seg.seq = in.ack;
    seg.ack = in.seq + in.data.size() + (in.has(sim::tcp_flags::kSyn) ? 1 : 0);
    seg.flags = sim::tcp_flags::kRst | sim::tcp_flags::kAck;
    sim::Packet out;
    out.id = sim_.next_packet_id();
    out.src = pkt.dst;
    out.dst = pkt.src;
    out.size = sim::kTcpHeaderBytes;
    out.payload = std::move(seg);
    out_(std::move(out));
}

} // namespace hybsim::transport
