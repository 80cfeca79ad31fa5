#include "grebond/bond.hpp"

#include <algorithm>

#include "simcore/error.hpp"

namespace hybsim::grebond {

using sim::SimTime;

sim::Packet encapsulate(sim::Packet inner, std::uint32_t seq, std::uint8_t tunnel, sim::Address outer_src,
                        sim::Address outer_dst, std::uint32_t mtu, std::uint64_t packet_id) {
    const std::uint32_t size = inner.size + sim::kGreOverheadBytes;
    if (size > mtu) {
        throw Error(ErrorCode::MtuExceeded, "encapsulated size " + std::to_string(size) + " exceeds tunnel mtu " +
                                                std::to_string(mtu));
    }
    sim::Packet outer;
    outer.id = packet_id;
    outer.src = outer_src;
    outer.dst = outer_dst;
    outer.size = size;
    outer.payload = sim::GreFrame{seq, tunnel, std::make_shared<const sim::Packet>(std::move(inner))};
    return outer;
}

BondEndpoint::BondEndpoint(sim::Simulator& sim, BondConfig cfg, std::vector<TunnelSpec> tunnels, Output out,
                           Deliver deliver, std::string name)
    : sim_(sim),
      cfg_(std::move(cfg)),
      out_(std::move(out)),
      deliver_(std::move(deliver)),
      name_(std::move(name)),
      distributor_(tunnels.size()),
      reorder_(cfg_.reorder),
      probe_timer_(sim, [this] { send_probes(); }, "gre-probe"),
      weight_timer_(sim, [this] { control_step(); }, "gre-weights"),
      gap_timer_(sim, [this] { on_gap_timer(); }, "gre-gap") {
    if (tunnels.empty() || tunnels.size() > kMaxTunnels) {
        throw Error(ErrorCode::InvalidArgument, "a bonding group needs 1 to " + std::to_string(kMaxTunnels) + " tunnels");
    }
    for (auto& spec : tunnels) {
        tunnels_.emplace_back();
        tunnels_.back().spec = spec;
    }
    if (!cfg_.initial_weights.empty()) {
        if (cfg_.initial_weights.size() != tunnels_.size()) {
            throw Error(ErrorCode::InvalidArgument, "initial weights do not match the tunnel count");
        }
        distributor_.set_weights(cfg_.initial_weights);
    }
    history_.push_back({sim_.now(), distributor_.weights()});
}

void BondEndpoint::start() {
    if (cfg_.adaptive) {
        send_probes();
        weight_timer_.arm_in(cfg_.weight_interval);
    }
}

bool BondEndpoint::tunnel_usable(std::size_t i) const {
    const Tunnel& t = tunnels_.at(i);
    if (!t.admin_up) return false;
    if (!cfg_.adaptive || !t.first_probe) return true;
    const SimTime since = std::max(*t.first_probe, t.last_reply.value_or(SimTime{}));
    return sim_.now() - since <= cfg_.dead_after;
}

void BondEndpoint::set_tunnel_up(std::size_t i, bool up) { tunnels_.at(i).admin_up = up; }

bool BondEndpoint::send(sim::Packet inner) {
    bool usable[kMaxTunnels] = {};
    for (std::size_t i = 0; i < tunnels_.size(); ++i) usable[i] = tunnel_usable(i);
    const auto choice = distributor_.pick(std::span<const bool>(usable, tunnels_.size()));
    if (!choice) {
        ++dropped_no_tunnel_;
        return false;
    }
    Tunnel& t = tunnels_[*choice];
    sim::Packet outer = encapsulate(std::move(inner), next_seq_++, static_cast<std::uint8_t>(*choice), t.spec.local,
                                    t.spec.remote, cfg_.mtu, sim_.next_packet_id());
    ++t.stats.tx_packets;
    t.stats.tx_bytes += outer.size;
    out_(*choice, std::move(outer));
    return true;
}

bool BondEndpoint::receive(const sim::Packet& outer) {
    if (const auto* frame = std::get_if<sim::GreFrame>(&outer.payload)) {
        if (frame->tunnel < tunnels_.size()) ++tunnels_[frame->tunnel].stats.rx_packets;
        released_scratch_.clear();
        if (cfg_.resequence) {
            reorder_.insert(frame->seq, frame->inner, sim_.now(), released_scratch_);
            rearm_gap_timer();
        } else {
            released_scratch_.push_back(frame->inner);
        }
        emit(released_scratch_);
        return true;
    }
    if (const auto* probe = std::get_if<sim::GreProbe>(&outer.payload)) {
        if (probe->tunnel >= tunnels_.size()) return true;
        if (probe->reply) {
            on_probe(*probe);
            return true;
        }
        const Tunnel& t = tunnels_[probe->tunnel];
        sim::Packet reply;
        reply.id = sim_.next_packet_id();
        reply.src = t.spec.local;
        reply.dst = t.spec.remote;
        reply.size = sim::kProbeBytes;
        sim::GreProbe r = *probe;
        r.reply = true;
        reply.payload = r;
        out_(probe->tunnel, std::move(reply));
        return true;
    }
    return false;
}

void BondEndpoint::emit(std::vector<std::shared_ptr<const sim::Packet>>& released) {
    for (auto& p : released) deliver_(sim::Packet(*p));
    released.clear();
}

void BondEndpoint::rearm_gap_timer() {
    if (auto d = reorder_.deadline()) {
        gap_timer_.arm(*d);
    } else {
        gap_timer_.cancel();
    }
}

void BondEndpoint::on_gap_timer() {
    released_scratch_.clear();
    reorder_.expire(sim_.now(), released_scratch_);
    rearm_gap_timer();
    emit(released_scratch_);
}

void BondEndpoint::send_probes() {
    for (std::size_t i = 0; i < tunnels_.size(); ++i) {
        Tunnel& t = tunnels_[i];
        if (!t.admin_up) continue;
        sim::Packet p;
        p.id = sim_.next_packet_id();
        p.src = t.spec.local;
        p.dst = t.spec.remote;
        p.size = sim::kProbeBytes;
        const std::uint32_t id = next_probe_id_++;
        p.payload = sim::GreProbe{static_cast<std::uint8_t>(i), id, false, sim_.now()};
        t.outstanding[id] = sim_.now();
        if (!t.first_probe) t.first_probe = sim_.now();
        ++t.stats.probes_sent;
        out_(i, std::move(p));
    }
    probe_timer_.arm_in(cfg_.probe_interval);
}

void BondEndpoint::on_probe(const sim::GreProbe& probe) {
    Tunnel& t = tunnels_[probe.tunnel];
    auto it = t.outstanding.find(probe.probe_id);
    if (it == t.outstanding.end()) return;
    t.outstanding.erase(it);
    const SimTime rtt = sim_.now() - probe.sent_at;
    ++t.stats.probe_replies;
    t.last_reply = sim_.now();
    if (!t.baseline || rtt < *t.baseline) t.baseline = rtt;
    t.srtt = t.srtt ? SimTime::from_us((t.srtt->us * 7 + rtt.us) / 8) : rtt;
    t.window_rtt_sum += rtt.us;
    ++t.window_samples;
}

SimTime BondEndpoint::probe_timeout(const Tunnel& t) const {
    if (!t.baseline) return cfg_.dead_after;
    return std::max(*t.baseline * 3, SimTime::from_ms(200));
}

void BondEndpoint::control_step() {
    Verdict verdicts[kMaxTunnels] = {};
    for (std::size_t i = 0; i < tunnels_.size(); ++i) {
        Tunnel& t = tunnels_[i];
        const SimTime timeout = probe_timeout(t);
        bool lost = false;
        for (auto it = t.outstanding.begin(); it != t.outstanding.end();) {
            if (sim_.now() - it->second > timeout) {
                lost = true;
                ++t.stats.probes_lost;
                it = t.outstanding.erase(it);
            } else {
                ++it;
            }
        }
        bool inflated = false;
        if (t.window_samples > 0 && t.baseline) {
            const double mean = static_cast<double>(t.window_rtt_sum) / t.window_samples;
            inflated = mean > cfg_.control.inflation * static_cast<double>(t.baseline->us);
        }
        verdicts[i] = !tunnel_usable(i) ? Verdict::Dead
                      : (lost || inflated) ? Verdict::Degraded
                                           : Verdict::Healthy;
        t.window_rtt_sum = 0;
        t.window_samples = 0;
    }
    const auto next = update_weights(distributor_.weights(), std::span<const Verdict>(verdicts, tunnels_.size()),
                                     cfg_.control);
    distributor_.set_weights(next);
    history_.push_back({sim_.now(), next});
    weight_timer_.arm_in(cfg_.weight_interval);
}

} // namespace hybsim::grebond
