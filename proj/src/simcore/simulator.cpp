#include "simcore/simulator.hpp"

#include <algorithm>
#include <ostream>

#include "simcore/error.hpp"

namespace hybsim {

const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::SchedulingInPast: return "SchedulingInPast";
    case ErrorCode::UnknownLink: return "UnknownLink";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConnectionClosed: return "ConnectionClosed";
    case ErrorCode::MtuExceeded: return "MtuExceeded";
    case ErrorCode::AllTunnelsDown: return "AllTunnelsDown";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Runtime: return "Runtime";
    }
    return "?";
}

} // namespace hybsim

namespace hybsim::sim {

namespace {
// Busy-interval history kept for utilization queries.
constexpr SimTime kUtilizationRetention = SimTime::from_s(10);
} // namespace

const char* to_string(TransmitResult r) {
    switch (r) {
    case TransmitResult::Accepted: return "accepted";
    case TransmitResult::DroppedQueueFull: return "queue_full";
    case TransmitResult::DroppedFiltered: return "filtered";
    case TransmitResult::DroppedLoss: return "loss";
    case TransmitResult::DroppedDown: return "down";
    }
    return "?";
}

// ---- Link ------------------------------------------------------------------

Link::Link(LinkId id, LinkConfig cfg, std::uint64_t rng_seed)
    : id_(id), cfg_(std::move(cfg)), rng_(rng_seed) {}

std::size_t Link::waiting(SimTime now) {
    while (!waiting_starts_.empty() && waiting_starts_.front() <= now) waiting_starts_.pop_front();
    return waiting_starts_.size();
}

std::uint64_t Link::busy_until(SimTime t) const {
    if (busy_.empty()) return total_busy_us_;
    auto it = std::upper_bound(busy_.begin(), busy_.end(), t,
                               [](SimTime v, const Busy& b) { return v < b.start; });
    if (it == busy_.begin()) return busy_.front().busy_before_us;
    const Busy& b = *std::prev(it);
    return b.busy_before_us + (std::min(t, b.end) - b.start).us;
}

void Link::record_busy(SimTime start, SimTime end) {
    busy_.push_back(Busy{start, end, total_busy_us_});
    total_busy_us_ += (end - start).us;
}

void Link::prune(SimTime now) {
    if (now < kUtilizationRetention) return;
    const SimTime horizon = now - kUtilizationRetention;
    while (busy_.size() > 1 && busy_.front().end < horizon) busy_.pop_front();
}

// ---- Simulator -------------------------------------------------------------

Simulator::Simulator(std::uint64_t seed) : seed_(seed) {}

EventId Simulator::schedule(SimTime at, Callback fn, const char* tag) {
    if (at < now_) {
        throw Error(ErrorCode::SchedulingInPast,
                    "event scheduled at " + std::to_string(at.us) + "us, now is " +
                        std::to_string(now_.us) + "us");
    }
    const EventId id = next_seq_++;
    heap_.push_back(Event{at, id, tag, std::move(fn)});
    std::push_heap(heap_.begin(), heap_.end(), Later{});
    return id;
}

bool Simulator::cancel(EventId id) {
    if (id >= next_seq_) return false;
    const bool queued = std::any_of(heap_.begin(), heap_.end(), [id](const Event& e) { return e.seq == id; });
    if (!queued) return false;
    return cancelled_.insert(id).second;
}

std::size_t Simulator::run_until(SimTime t) {
    std::size_t count = 0;
    while (!heap_.empty() && heap_.front().at <= t) {
        std::pop_heap(heap_.begin(), heap_.end(), Later{});
        Event ev = std::move(heap_.back());
        heap_.pop_back();
        if (!cancelled_.empty() && cancelled_.erase(ev.seq) > 0) continue;
        now_ = ev.at;
        ++count;
        ++processed_;
        if (event_log_) {
            event_log_->push_back(std::to_string(ev.at.us) + ' ' + std::to_string(ev.seq) + ' ' + ev.tag);
        }
        ev.fn();
    }
    if (t > now_) now_ = t;
    return count;
}

LinkId Simulator::add_link(LinkConfig cfg) {
    if (cfg.bandwidth_bps == 0) throw Error(ErrorCode::InvalidArgument, "link bandwidth must be > 0");
    if (cfg.queue_packets == 0) throw Error(ErrorCode::InvalidArgument, "link queue capacity must be >= 1");
    if (cfg.loss < 0.0 || cfg.loss > 1.0) throw Error(ErrorCode::InvalidArgument, "link loss must be in [0,1]");
    const auto id = static_cast<LinkId>(links_.size());
    links_.push_back(std::make_unique<Link>(id, std::move(cfg), derive_seed(seed_, 0x11A0000ULL + id)));
    return id;
}

Link& Simulator::link(LinkId id) {
    if (id >= links_.size()) throw Error(ErrorCode::UnknownLink, "unknown link " + std::to_string(id));
    return *links_[id];
}

const Link& Simulator::link(LinkId id) const {
    if (id >= links_.size()) throw Error(ErrorCode::UnknownLink, "unknown link " + std::to_string(id));
    return *links_[id];
}

void Simulator::set_receiver(LinkId id, Receiver rx) { link(id).receiver_ = std::move(rx); }

TransmitResult Simulator::transmit(LinkId id, Packet pkt) {
    Link& l = link(id);
    if (pkt.size == 0) throw Error(ErrorCode::InvalidArgument, "packet size must be > 0");

    TransmitResult verdict = TransmitResult::Accepted;
    if (!l.up_) {
        verdict = TransmitResult::DroppedDown;
        ++l.stats_.dropped_down;
    } else if (l.cfg_.ingress_filter && !l.cfg_.ingress_filter->contains(pkt.src)) {
        verdict = TransmitResult::DroppedFiltered;
        ++l.stats_.dropped_filtered;
    } else if (l.rng_.bernoulli(l.cfg_.loss)) {
        verdict = TransmitResult::DroppedLoss;
        ++l.stats_.dropped_loss;
    } else if (l.waiting(now_) >= l.cfg_.queue_packets && l.next_free_ > now_) {
        verdict = TransmitResult::DroppedQueueFull;
        ++l.stats_.dropped_queue_full;
    }
    trace("tx", l, pkt, to_string(verdict));
    if (verdict != TransmitResult::Accepted) return verdict;

    const SimTime start = std::max(now_, l.next_free_);
    const SimTime end = start + serialization_time(pkt.size, l.cfg_.bandwidth_bps);
    l.next_free_ = end;
    if (start > now_) l.waiting_starts_.push_back(start);
    l.record_busy(start, end);
    l.prune(now_);
    ++l.stats_.accepted;
    l.stats_.bytes_accepted += pkt.size;

    const std::uint64_t epoch = l.epoch_;
    schedule(end + l.cfg_.delay,
             [this, id, epoch, p = std::move(pkt)]() mutable { deliver(id, epoch, p); }, "link_rx");
    return verdict;
}

void Simulator::deliver(LinkId id, std::uint64_t epoch, Packet& pkt) {
    Link& l = *links_[id];
    if (epoch != l.epoch_) {
        ++l.stats_.dropped_down;
        trace("rx", l, pkt, "down");
        return;
    }
    ++l.stats_.delivered;
    l.stats_.bytes_delivered += pkt.size;
    if (now_ >= window_from_ && now_ < window_to_) l.stats_.window_bytes_delivered += pkt.size;
    trace("rx", l, pkt, "delivered");
    if (l.receiver_) l.receiver_(std::move(pkt));
}

double Simulator::utilization(LinkId id, SimTime window) const {
    const Link& l = link(id);
    if (window.us == 0) throw Error(ErrorCode::InvalidArgument, "utilization window must be > 0");
    if (window > kUtilizationRetention) window = kUtilizationRetention;
    const SimTime from = now_ > window ? now_ - window : SimTime{};
    const std::uint64_t busy = l.busy_until(now_) - l.busy_until(from);
    return std::min(1.0, static_cast<double>(busy) / static_cast<double>(window.us));
}

void Simulator::set_link_up(LinkId id, bool up) {
    Link& l = link(id);
    if (l.up_ == up) return;
    l.up_ = up;
    if (!up) {
        ++l.epoch_;
        l.waiting_starts_.clear();
        // Nothing queued will be serialized any more.
        while (!l.busy_.empty() && l.busy_.back().start >= now_) {
            l.total_busy_us_ -= (l.busy_.back().end - l.busy_.back().start).us;
            l.busy_.pop_back();
        }
        if (!l.busy_.empty() && l.busy_.back().end > now_) {
            l.total_busy_us_ -= (l.busy_.back().end - now_).us;
            l.busy_.back().end = now_;
        }
        l.next_free_ = now_;
    }
}

void Simulator::set_measurement_window(SimTime from, SimTime to) {
    window_from_ = from;
    window_to_ = to;
}

void Simulator::trace(const char* kind, const Link& l, const Packet& pkt, const char* verdict) {
    if (!trace_) return;
    *trace_ << now_.us << ' ' << kind << ' ' << l.cfg_.name << ' ' << pkt.id << ' ' << to_string(pkt.src) << ' '
            << to_string(pkt.dst) << ' ' << pkt.size << ' ' << verdict << '\n';
}

// ---- Timer -----------------------------------------------------------------

Timer::Timer(Simulator& sim, Callback on_fire, const char* tag)
    : sim_(sim), on_fire_(std::move(on_fire)), tag_(tag), slot_(std::make_shared<Slot>(Slot{this})) {}

Timer::~Timer() { slot_->owner = nullptr; }

void Timer::arm(SimTime deadline) {
    if (deadline < sim_.now()) deadline = sim_.now();
    armed_ = true;
    deadline_ = deadline;
    if (event_pending_ && event_at_ <= deadline) return;
    schedule_event(deadline);
}

void Timer::schedule_event(SimTime at) {
    ++generation_;
    event_pending_ = true;
    event_at_ = at;
    sim_.schedule(
        at,
        [slot = slot_, gen = generation_] {
            if (slot->owner) slot->owner->fire(gen);
        },
        tag_);
}

void Timer::fire(std::uint64_t generation) {
    if (generation != generation_) return;
    event_pending_ = false;
    if (!armed_) return;
    if (sim_.now() < deadline_) {
        schedule_event(deadline_);
        return;
    }
    armed_ = false;
    on_fire_();
}

} // namespace hybsim::sim
