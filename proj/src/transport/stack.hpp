#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "simcore/error.hpp"
#include "simcore/packet.hpp"
#include "simcore/simulator.hpp"
#include "transport/connection.hpp"

namespace hybsim::transport {

// Flow identity from the local node's point of view.
struct FlowKey {
    std::uint32_t local_ip = 0;
    std::uint16_t local_port = 0;
    std::uint32_t remote_ip = 0;
    std::uint16_t remote_port = 0;

    friend bool operator==(const FlowKey&, const FlowKey&) = default;
};

struct FlowKeyHash {
    std::size_t operator()(const FlowKey& k) const noexcept;
};

// Key for an arriving packet (its destination is local).
FlowKey inbound_key(const sim::Packet& pkt);

struct ConnectOptions {
    bool multipath = true;
    std::vector<std::uint8_t> syn_payload;
    std::optional<SchedulerPolicy> scheduler;
};

struct AcceptOptions {
    bool allow_multipath = true;
    std::optional<SchedulerPolicy> scheduler;
};

// A SYN held for a deferred accept/refuse decision.
struct PendingSyn {
    FlowKey key;
    sim::Packet syn;
    bool mp_capable = false;
    sim::SimTime arrived;
};

// Per-node transport endpoint: owns connections, demultiplexes segments by
// 4-tuple (addresses need not be the node's own, which is what lets proxies
// terminate connections transparently) and maps tokens to connections.
class Stack {
public:
    using Output = std::function<void(sim::Packet&&)>;

    Stack(sim::Simulator& sim, Output out, TransportConfig cfg, std::uint64_t rng_stream, std::string name = {});
    ~Stack();
    Stack(const Stack&) = delete;
    Stack& operator=(const Stack&) = delete;

    sim::Simulator& simulator() { return sim_; }
    const TransportConfig& config() const { return cfg_; }
    const std::string& name() const { return name_; }

    Connection& connect(sim::Endpoint local, sim::Endpoint remote, ConnectOptions opts = {});

    // Hands an arriving segment to the connection, pending SYN or join that
    // owns it. Returns false if nothing here claims it.
    bool deliver(const sim::Packet& pkt);
    static bool is_initial_syn(const sim::Packet& pkt);
    // Holds a new SYN until accept() or refuse(). Duplicate SYNs of a held one
    // are absorbed by deliver().
    const PendingSyn& hold(const sim::Packet& syn);
    const PendingSyn* pending(const FlowKey& key) const;
    Connection& accept(const FlowKey& key, AcceptOptions opts = {});
    void refuse(const FlowKey& key);

    Connection* find_token(std::uint32_t token) const;
    std::uint16_t ephemeral_port() { return next_port_++; }
    const std::vector<std::unique_ptr<Connection>>& connections() const { return conns_; }

    // `time_us conn subflow event dsn cwnd srtt`
    void set_conn_log(std::ostream* out) { conn_log_ = out; }

private:
    friend class Connection;

    void output(sim::Packet&& pkt);
    void bind(const FlowKey& key, Connection* conn, std::size_t subflow);
    void unbind_token(std::uint32_t token);
    std::uint64_t fresh_key();
    void send_reset_for(const sim::Packet& pkt);
    std::ostream* conn_log() const { return conn_log_; }

    struct Binding {
        Connection* conn = nullptr;
        std::size_t subflow = 0;
    };

    sim::Simulator& sim_;
    Output out_;
    TransportConfig cfg_;
    std::string name_;
    sim::Rng rng_;
    std::vector<std::unique_ptr<Connection>> conns_;
    std::unordered_map<FlowKey, Binding, FlowKeyHash> flows_;
    std::unordered_map<FlowKey, PendingSyn, FlowKeyHash> pending_;
    std::unordered_map<std::uint32_t, Connection*> tokens_;
    std::uint16_t next_port_ = 40000;
    std::uint64_t next_conn_id_ = 1;
    std::ostream* conn_log_ = nullptr;
};

} // namespace hybsim::transport
