#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "simcore/address.hpp"
#include "simcore/packet.hpp"
#include "simcore/rng.hpp"
#include "simcore/sim_time.hpp"

namespace hybsim::sim {

using EventId = std::uint64_t;
using LinkId = std::uint32_t;
using Callback = std::function<void()>;
using Receiver = std::function<void(Packet&&)>;

struct LinkConfig {
    std::string name;
    std::uint64_t bandwidth_bps = 10'000'000;
    SimTime delay;
    std::uint32_t queue_packets = 100; // waiting room, excluding the packet in serialization
    double loss = 0.0;
    std::optional<Prefix> ingress_filter;
};

enum class TransmitResult { Accepted, DroppedQueueFull, DroppedFiltered, DroppedLoss, DroppedDown };

const char* to_string(TransmitResult r);

struct LinkStats {
    std::uint64_t accepted = 0;
    std::uint64_t delivered = 0;
    std::uint64_t dropped_queue_full = 0;
    std::uint64_t dropped_filtered = 0;
    std::uint64_t dropped_loss = 0;
    std::uint64_t dropped_down = 0; // refused while down or lost in flight by a cut
    std::uint64_t bytes_accepted = 0;
    std::uint64_t bytes_delivered = 0;
    std::uint64_t window_bytes_delivered = 0; // inside the measurement window
};

// Unidirectional emulated channel. Serialization is computed analytically:
// every accepted packet gets its start/finish instants at admission, so the
// only event per packet is its arrival at the far end.
class Link {
public:
    Link(LinkId id, LinkConfig cfg, std::uint64_t rng_seed);

    LinkId id() const { return id_; }
    const LinkConfig& config() const { return cfg_; }
    const LinkStats& stats() const { return stats_; }
    bool up() const { return up_; }
    // Packets accepted but not yet in serialization at `now`.
    std::size_t waiting(SimTime now);

private:
    friend class Simulator;

    struct Busy {
        SimTime start;
        SimTime end;
        std::uint64_t busy_before_us; // cumulative busy time before `start`
    };

    std::uint64_t busy_until(SimTime t) const;
    void record_busy(SimTime start, SimTime end);
    void prune(SimTime now);

    LinkId id_;
    LinkConfig cfg_;
    LinkStats stats_;
    Rng rng_;
    Receiver receiver_;
    bool up_ = true;
    std::uint64_t epoch_ = 0;
    SimTime next_free_;
    std::deque<SimTime> waiting_starts_;
    std::deque<Busy> busy_;
    std::uint64_t total_busy_us_ = 0;
};

// Single-threaded discrete-event engine. Events with equal timestamps fire in
// insertion order. Owns the links so that link events and the clock share one
// queue.
class Simulator {
public:
    explicit Simulator(std::uint64_t seed = 1);
    Simulator(const Simulator&) = delete;
    Simulator& operator=(const Simulator&) = delete;

    SimTime now() const { return now_; }
    std::uint64_t seed() const { return seed_; }

    EventId schedule(SimTime at, Callback fn, const char* tag = "event");
    EventId schedule_in(SimTime delay, Callback fn, const char* tag = "event") {
        return schedule(now_ + delay, std::move(fn), tag);
    }
    // Returns false if the event already fired or was never scheduled.
    bool cancel(EventId id);
    // Processes every event with time <= t, then sets the clock to t.
    std::size_t run_until(SimTime t);
    std::size_t pending() const { return heap_.size() - cancelled_.size(); }
    std::uint64_t processed() const { return processed_; }

    std::uint64_t next_packet_id() { return ++packet_ids_; }
    Rng make_rng(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

    LinkId add_link(LinkConfig cfg);
    Link& link(LinkId id);
    const Link& link(LinkId id) const;
    std::size_t link_count() const { return links_.size(); }
    void set_receiver(LinkId id, Receiver rx);
    TransmitResult transmit(LinkId id, Packet pkt);
    // Fraction of the trailing `window` during which the link was serializing.
    double utilization(LinkId id, SimTime window) const;
    // A link cut drops everything queued or propagating on it.
    void set_link_up(LinkId id, bool up);
    void set_measurement_window(SimTime from, SimTime to);

    // Optional line-oriented packet trace:
    // `time_us kind link pkt_id src dst size verdict`
    void set_trace(std::ostream* out) { trace_ = out; }
    // Optional log of processed events (`time_us seq tag`), used to compare runs.
    void set_event_log(std::vector<std::string>* log) { event_log_ = log; }

private:
    struct Event {
        SimTime at;
        std::uint64_t seq;
        const char* tag;
        Callback fn;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            return a.at != b.at ? a.at > b.at : a.seq > b.seq;
        }
    };

    void deliver(LinkId id, std::uint64_t epoch, Packet& pkt);
    void trace(const char* kind, const Link& link, const Packet& pkt, const char* verdict);

    std::uint64_t seed_;
    SimTime now_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t processed_ = 0;
    std::uint64_t packet_ids_ = 0;
    std::vector<Event> heap_;
    std::unordered_set<EventId> cancelled_;
    std::vector<std::unique_ptr<Link>> links_;
    SimTime window_from_;
    SimTime window_to_ = SimTime::max();
    std::ostream* trace_ = nullptr;
    std::vector<std::string>* event_log_ = nullptr;
};

// Re-armable one-shot timer. Pushing the deadline later does not touch the
// event queue; the pending event re-schedules itself when it fires early.
// Superseded events are ignored by generation, so no queue cancellation is
// needed and the timer may be destroyed with events still queued.
class Timer {
public:
    Timer(Simulator& sim, Callback on_fire, const char* tag = "timer");
    ~Timer();
    Timer(const Timer&) = delete;
    Timer& operator=(const Timer&) = delete;

    void arm(SimTime deadline);
    void arm_in(SimTime delay) { arm(sim_.now() + delay); }
    void cancel() { armed_ = false; }
    bool armed() const { return armed_; }
    SimTime deadline() const { return deadline_; }

private:
    struct Slot {
        Timer* owner;
    };

    void schedule_event(SimTime at);
    void fire(std::uint64_t generation);

    Simulator& sim_;
    Callback on_fire_;
    const char* tag_;
    std::shared_ptr<Slot> slot_;
    std::uint64_t generation_ = 0;
    bool armed_ = false;
    SimTime deadline_;
    bool event_pending_ = false;
    SimTime event_at_;
};

} // namespace hybsim::sim
