#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "grebond/distributor.hpp"
#include "grebond/gre_reorder.hpp"
#include "grebond/weights.hpp"
#include "simcore/packet.hpp"
#include "simcore/simulator.hpp"

namespace hybsim::grebond {

// Wraps `inner` for transmission on a tunnel. Throws MtuExceeded when the
// encapsulated packet would not fit `mtu`.
sim::Packet encapsulate(sim::Packet inner, std::uint32_t seq, std::uint8_t tunnel, sim::Address outer_src,
                        sim::Address outer_dst, std::uint32_t mtu, std::uint64_t packet_id);

struct TunnelSpec {
    sim::Address local;
    sim::Address remote;
};

struct BondConfig {
    std::uint32_t mtu = 1500;
    bool resequence = true; // false: release frames as they arrive
    bool adaptive = true;   // false: weights stay at `initial_weights`
    ReorderConfig reorder;
    WeightConfig control;
    std::vector<double> initial_weights; // empty: equal split
    sim::SimTime probe_interval = sim::SimTime::from_ms(100);
    sim::SimTime weight_interval = sim::SimTime::from_ms(500);
    sim::SimTime dead_after = sim::SimTime::from_s(1);
};

struct TunnelStats {
    std::uint64_t tx_packets = 0;
    std::uint64_t rx_packets = 0;
    std::uint64_t tx_bytes = 0;
    std::uint64_t probes_sent = 0;
    std::uint64_t probe_replies = 0;
    std::uint64_t probes_lost = 0;
};

struct WeightSample {
    sim::SimTime at;
    std::vector<double> weights;
};

// One end of a bonding group (HCPE or HAG side). Outgoing inner packets get
// the group-wide next sequence and a tunnel from the deficit distributor;
// incoming frames go through the resequencer. Each end runs its own weight
// controller from its own echo probes.
class BondEndpoint {
public:
    static constexpr std::size_t kMaxTunnels = 8;

    using Output = std::function<void(std::size_t tunnel, sim::Packet&&)>;
    using Deliver = std::function<void(sim::Packet&&)>;

    BondEndpoint(sim::Simulator& sim, BondConfig cfg, std::vector<TunnelSpec> tunnels, Output out, Deliver deliver,
                 std::string name = {});
    BondEndpoint(const BondEndpoint&) = delete;
    BondEndpoint& operator=(const BondEndpoint&) = delete;

    // Starts probing and weight control.
    void start();

    // Returns false when the packet was dropped because no tunnel is usable.
    bool send(sim::Packet inner);
    // Returns false if `outer` is not bonding traffic for this end.
    bool receive(const sim::Packet& outer);

    void set_tunnel_up(std::size_t i, bool up);
    bool tunnel_usable(std::size_t i) const;

    std::size_t tunnel_count() const { return tunnels_.size(); }
    const TunnelSpec& tunnel(std::size_t i) const { return tunnels_.at(i).spec; }
    const TunnelStats& tunnel_stats(std::size_t i) const { return tunnels_.at(i).stats; }
    std::optional<sim::SimTime> tunnel_srtt(std::size_t i) const { return tunnels_.at(i).srtt; }
    const std::vector<double>& weights() const { return distributor_.weights(); }
    const std::vector<WeightSample>& weight_history() const { return history_; }
    const ReorderStats& reorder_stats() const { return reorder_.stats(); }
    std::uint32_t next_seq() const { return next_seq_; }
    std::uint64_t dropped_no_tunnel() const { return dropped_no_tunnel_; }

private:
    struct Tunnel {
        TunnelSpec spec;
        bool admin_up = true;
        TunnelStats stats;
        std::optional<sim::SimTime> srtt;
        std::optional<sim::SimTime> baseline; // smallest probe rtt seen
        std::optional<sim::SimTime> last_reply;
        std::optional<sim::SimTime> first_probe;
        std::map<std::uint32_t, sim::SimTime> outstanding;
        std::uint64_t window_rtt_sum = 0;
        std::uint32_t window_samples = 0;
    };

    void send_probes();
    void on_probe(const sim::GreProbe& probe);
    void control_step();
    void on_gap_timer();
    void rearm_gap_timer();
    void emit(std::vector<std::shared_ptr<const sim::Packet>>& released);
    sim::SimTime probe_timeout(const Tunnel& t) const;

    sim::Simulator& sim_;
    BondConfig cfg_;
    std::vector<Tunnel> tunnels_;
    Output out_;
    Deliver deliver_;
    std::string name_;
    DeficitDistributor distributor_;
    GreReorderBuffer<std::shared_ptr<const sim::Packet>> reorder_;
    std::uint32_t next_seq_ = 0;
    std::uint32_t next_probe_id_ = 0;
    std::uint64_t dropped_no_tunnel_ = 0;
    std::vector<WeightSample> history_;
    std::vector<std::shared_ptr<const sim::Packet>> released_scratch_;
    sim::Timer probe_timer_;
    sim::Timer weight_timer_;
    sim::Timer gap_timer_;
};

} // namespace hybsim::grebond
