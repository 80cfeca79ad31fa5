#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "harness/scenario.hpp"
#include "harness/traffic.hpp"
#include "proxy/nodes.hpp"
#include "simcore/simulator.hpp"
#include "transport/stack.hpp"

namespace hybsim::harness {

struct RunOptions {
    bool trace = false;
    bool conn_log = false;
};

// Outcome of one simulation. Rates are in Mbps; the plain fields cover the
// steady-state window, the *_full fields the whole transfer duration.
struct RunResult {
    double sweep_value = 0;
    std::uint64_t seed = 0;
    double dsl_mbps = 0;
    double lte_mbps = 0;
    double aggregate_mbps = 0;
    double lte_share = 0;
    std::uint64_t retx = 0;
    std::uint64_t reorder_releases = 0;
    std::optional<double> completion_s;

    double dsl_mbps_full = 0;
    double lte_mbps_full = 0;
    double aggregate_mbps_full = 0;
    std::uint64_t lte_bytes = 0; // every byte accepted on either LTE link
    std::uint64_t filter_drops = 0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;
    std::uint32_t transfers = 0;
    std::uint32_t transfers_complete = 0;
    bool corrupt = false;
    std::uint64_t overflow_transitions = 0;
    std::uint64_t events = 0;
    double end_s = 0;

    std::string trace;
    std::string conn_log;
};

struct Links {
    sim::LinkId lan_up, lan_down;
    sim::LinkId dsl_up, dsl_down;
    sim::LinkId lte_up, lte_down;
    sim::LinkId inet_up, inet_down;
};

// The full Hybrid Access topology for one scenario run:
// host -- LAN -- HCPE == DSL/LTE == HAG -- Internet -- server.
class World {
public:
    static constexpr sim::Address kHost{sim::make_ip(10, 1, 1, 2), sim::Network::Lan};
    static constexpr sim::Address kServer{sim::make_ip(192, 0, 2, 10), sim::Network::Internet};

    World(const Scenario& s, std::uint64_t seed, RunOptions opts = {});
    ~World();
    World(const World&) = delete;
    World& operator=(const World&) = delete;

    sim::Simulator& sim() { return sim_; }
    const Links& links() const { return links_; }
    proxy::HcpeNode& hcpe() { return *hcpe_; }
    proxy::HagNode& hag() { return *hag_; }
    transport::Stack& host() { return *host_; }
    transport::Stack& server() { return *server_; }
    const Scenario& scenario() const { return s_; }

    // Schedules node start-up and the traffic; run() calls it when needed.
    void start();
    // Runs to the scenario end (or until every transfer finished).
    RunResult run();
    bool all_done() const;
    RunResult collect() const;

    sim::SimTime start_time() const;
    sim::SimTime stop_time() const; // end of sending for unlimited transfers
    sim::SimTime end_time() const;  // hard stop including drain

    struct Transfer {
        std::uint64_t seed = 0;
        transport::Connection* client = nullptr;
        transport::Connection* server = nullptr;
        std::unique_ptr<PatternSource> source;
        std::unique_ptr<PatternSink> sink;
        bool failed = false;
    };
    const std::vector<std::unique_ptr<Transfer>>& transfers() const { return transfers_; }

private:
    void on_server_packet(sim::Packet&& pkt);
    void open_transfers();
    void wire(Transfer& t, transport::Connection& c, bool writer);
    void pace_tick();
    bool sending(const Transfer& t) const;
    double dsl_load() const;

    Scenario s_;
    RunOptions opts_;
    sim::Simulator sim_;
    Links links_{};
    std::unique_ptr<transport::Stack> host_;
    std::unique_ptr<transport::Stack> server_;
    std::unique_ptr<proxy::HcpeNode> hcpe_;
    std::unique_ptr<proxy::HagNode> hag_;
    std::vector<std::unique_ptr<Transfer>> transfers_;
    std::optional<TokenBucket> bucket_;
    std::unique_ptr<sim::Timer> pacer_;
    std::size_t rotate_ = 0;
    bool started_ = false;
    std::ostringstream trace_;
    std::ostringstream conn_log_;
};

transport::TransportConfig transport_config(const Scenario& s);
proxy::ProxyConfig proxy_config(const Scenario& s);

RunResult run_once(const Scenario& s, std::uint64_t seed, RunOptions opts = {});

} // namespace hybsim::harness
