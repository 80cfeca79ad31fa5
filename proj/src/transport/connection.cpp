#include "transport/connection.hpp"

#include <algorithm>
#include <utility>
#include <ostream>

#include "simcore/error.hpp"
#include "transport/stack.hpp"
#include "transport/token.hpp"

namespace hybsim::transport {

using sim::SimTime;
namespace flags = sim::tcp_flags;

std::string_view to_string(ConnState s) {
    switch (s) {
    case ConnState::SynSent: return "syn_sent";
    case ConnState::SynReceived: return "syn_received";
    case ConnState::Established: return "established";
    case ConnState::Closed: return "closed";
    }
    return "?";
}

std::string_view to_string(SubflowState s) {
    switch (s) {
    case SubflowState::Joining: return "joining";
    case SubflowState::Active: return "active";
    case SubflowState::Dead: return "dead";
    }
    return "?";
}

std::string_view to_string(CloseReason r) {
    switch (r) {
    case CloseReason::Normal: return "normal";
    case CloseReason::Reset: return "reset";
    case CloseReason::HandshakeTimeout: return "handshake_timeout";
    case CloseReason::Timeout: return "timeout";
    case CloseReason::Aborted: return "aborted";
    }
    return "?";
}

// ---- Subflow ---------------------------------------------------------------

Subflow::Subflow(Connection&, std::size_t index, sim::Endpoint local, sim::Endpoint remote)
    : index_(index), local_(local), remote_(remote) {}

void Subflow::take_rtt_sample(SimTime sample, const TransportConfig& cfg) {
    const std::uint64_t r = std::max<std::uint64_t>(sample.us, 1);
    if (!has_rtt_) {
        srtt_ = SimTime{r};
        rttvar_ = SimTime{r / 2};
        has_rtt_ = true;
    } else {
        const std::uint64_t diff = srtt_.us > r ? srtt_.us - r : r - srtt_.us;
        rttvar_ = SimTime{(3 * rttvar_.us + diff) / 4};
        srtt_ = SimTime{(7 * srtt_.us + r) / 8};
    }
    rto_ = std::clamp(srtt_ + rttvar_ * 4, cfg.min_rto, cfg.max_rto);
}

void Subflow::mark_received(std::uint64_t seq, std::uint64_t len) {
    std::uint64_t begin = seq;
    std::uint64_t end = seq + len;
    if (begin <= rcv_nxt_) {
        rcv_nxt_ = std::max(rcv_nxt_, end);
        while (!ooo_.empty() && ooo_.begin()->first <= rcv_nxt_) {
            rcv_nxt_ = std::max(rcv_nxt_, ooo_.begin()->second);
            ooo_.erase(ooo_.begin());
        }
        return;
    }
    // Merge [begin, end) with any overlapping or adjacent ranges.
    auto it = ooo_.upper_bound(begin);
    if (it != ooo_.begin()) {
        auto prev = std::prev(it);
        if (prev->second >= begin) {
            begin = prev->first;
            end = std::max(end, prev->second);
            it = ooo_.erase(prev);
        }
    }
    while (it != ooo_.end() && it->first <= end) {
        end = std::max(end, it->second);
        it = ooo_.erase(it);
    }
    ooo_.emplace(begin, end);
    last_block_begin_ = begin;
}

std::vector<sim::SackBlock> Subflow::sack_blocks() const {
    std::vector<sim::SackBlock> out;
    if (ooo_.empty()) return out;
    auto first = ooo_.find(last_block_begin_);
    if (first != ooo_.end()) out.push_back({first->first, first->second});
    for (auto it = ooo_.rbegin(); it != ooo_.rend() && out.size() < 3; ++it) {
        if (first != ooo_.end() && it->first == first->first) continue;
        out.push_back({it->first, it->second});
    }
    return out;
}

void Subflow::release_records() {
    records_.clear();
    pipe_ = 0;
    lost_pending_ = 0;
    rto_timer_->cancel();
}

// ---- Connection: construction and handshake ---------------------------------

Connection::Connection(Stack& stack, std::uint64_t id, bool client, bool multipath, SchedulerPolicy policy)
    : stack_(stack),
      sim_(stack.simulator()),
      cfg_(stack.config()),
      id_(id),
      client_(client),
      multipath_(multipath),
      state_(client ? ConnState::SynSent : ConnState::SynReceived),
      scheduler_(policy),
      rx_(stack.config().receive_buffer),
      keepalive_timer_(stack.simulator(), [this] { on_keepalive(); }, "keepalive"),
      advert_timer_(stack.simulator(), [this] { on_advert_timer(); }, "add_addr"),
      persist_timer_(stack.simulator(), [this] { on_persist(); }, "persist") {}

Connection::~Connection() = default;

Subflow& Connection::new_subflow(sim::Endpoint local, sim::Endpoint remote, bool opener) {
    const std::size_t index = subflows_.size();
    auto sf = std::unique_ptr<Subflow>(new Subflow(*this, index, local, remote));
    sf->opener_ = opener;
    sf->cc_ = CongestionState{std::uint64_t{cfg_.initial_window} * cfg_.mss, UINT64_MAX};
    sf->rto_ = cfg_.initial_rto;
    sf->handshake_timer_ = std::make_unique<sim::Timer>(sim_, [this, index] { on_handshake_timeout(index); }, "syn");
    sf->rto_timer_ = std::make_unique<sim::Timer>(sim_, [this, index] { on_rto(index); }, "rto");
    subflows_.push_back(std::move(sf));
    stack_.bind(FlowKey{local.addr.ip, local.port, remote.addr.ip, remote.port}, this, index);
    return *subflows_.back();
}

void Connection::start_connect(sim::Endpoint local, sim::Endpoint remote, std::vector<std::uint8_t> syn_payload) {
    if (multipath_) {
        local_key_ = stack_.fresh_key();
        local_token_ = derive_token(local_key_);
        stack_.tokens_[local_token_] = this;
    }
    syn_payload_ = syn_payload.size();
    send_buf_.append(syn_payload);
    data_end_ = syn_payload_;
    Subflow& sf = new_subflow(local, remote, true);
    sf.initial_ = true;
    send_syn(sf);
}

void Connection::start_accept(const sim::Packet& syn, bool allow_multipath) {
    const sim::TcpSegment& seg = *syn.tcp();
    multipath_ = allow_multipath && seg.mp_capable.has_value();
    if (multipath_) {
        remote_key_ = seg.mp_capable->sender_key;
        remote_token_ = derive_token(remote_key_);
        local_key_ = stack_.fresh_key();
        local_token_ = derive_token(local_key_);
        stack_.tokens_[local_token_] = this;
    }
    Subflow& sf = new_subflow({syn.dst, seg.dst_port}, {syn.src, seg.src_port}, false);
    sf.initial_ = true;
    rx_.insert(0, seg.data);
    sf.rcv_nxt_ = 1 + seg.data.size();
    right_edge_ = seg.window;
    send_synack(sf);
}

void Connection::start_join_accept(const sim::Packet& syn) {
    const sim::TcpSegment& seg = *syn.tcp();
    Subflow& sf = new_subflow({syn.dst, seg.dst_port}, {syn.src, seg.src_port}, false);
    sf.rcv_nxt_ = 1;
    log(sf.index_, "join_accept", data_nxt_);
    send_synack(sf);
}

void Connection::send_syn(Subflow& sf) {
    sim::TcpSegment seg = make_segment(sf, flags::kSyn);
    seg.seq = 0;
    seg.ack = 0;
    seg.dss.reset();
    seg.sack.clear();
    if (sf.initial_) {
        const auto payload = send_buf_.front(static_cast<std::size_t>(syn_payload_));
        seg.data.assign(payload.begin(), payload.end());
        if (multipath_) seg.mp_capable = sim::MpCapable{local_key_, std::nullopt};
    } else {
        seg.mp_join = sim::MpJoin{remote_token_};
    }
    sf.snd_nxt_ = 1 + seg.data.size();
    if (++sf.syn_tx_ > 1) sf.syn_retransmitted_ = true;
    sf.syn_sent_at_ = sim_.now();
    sf.handshake_timer_->arm_in(cfg_.initial_rto * (1ULL << (sf.syn_tx_ - 1)));
    log(sf.index_, sf.syn_tx_ > 1 ? "syn_retx" : "syn", 0);
    emit(sf, std::move(seg));
}

void Connection::send_synack(Subflow& sf) {
    sim::TcpSegment seg = make_segment(sf, flags::kSyn | flags::kAck);
    seg.seq = 0;
    seg.dss.reset();
    seg.sack.clear();
    if (sf.initial_) {
        if (multipath_) seg.mp_capable = sim::MpCapable{local_key_, remote_key_};
    } else {
        seg.mp_join = sim::MpJoin{local_token_};
    }
    sf.snd_nxt_ = 1;
    if (++sf.syn_tx_ > 1) sf.syn_retransmitted_ = true;
    sf.syn_sent_at_ = sim_.now();
    sf.handshake_timer_->arm_in(cfg_.initial_rto * (1ULL << (sf.syn_tx_ - 1)));
    emit(sf, std::move(seg));
}

void Connection::on_handshake_timeout(std::size_t index) {
    Subflow& sf = *subflows_[index];
    if (sf.state_ != SubflowState::Joining || state_ == ConnState::Closed) return;
    if (sf.syn_tx_ > cfg_.syn_retries) {
        log(index, "handshake_timeout", 0);
        if (sf.initial_) {
            close_with(CloseReason::HandshakeTimeout);
        } else {
            kill_subflow(sf, "join_timeout");
        }
        return;
    }
    if (sf.opener_) {
        send_syn(sf);
    } else {
        send_synack(sf);
    }
}

void Connection::establish(Subflow& sf) {
    state_ = ConnState::Established;
    sf.state_ = SubflowState::Active;
    keepalive_timer_.arm_in(cfg_.keepalive_interval);
    log(sf.index_, "established", data_nxt_);
    if (cb_.on_established) cb_.on_established(*this);
    if (state_ == ConnState::Established && rx_.readable() > 0 && cb_.on_readable) cb_.on_readable(*this);
    pump();
}

void Connection::subflow_active(Subflow& sf) {
    sf.state_ = SubflowState::Active;
    log(sf.index_, "subflow_active", data_nxt_);
    if (cb_.on_subflow_active) cb_.on_subflow_active(*this, sf.index_);
    pump();
}

// ---- Connection: segment arrival -------------------------------------------

void Connection::on_segment(std::size_t index, const sim::Packet& pkt) {
    const sim::TcpSegment& seg = *pkt.tcp();
    Subflow& sf = *subflows_[index];

    if (seg.has(flags::kRst)) {
        on_reset(sf, seg);
        return;
    }
    if (state_ == ConnState::Closed) {
        const bool fin = multipath_ ? (seg.dss && seg.dss->data_fin) : seg.has(flags::kFin);
        if (!seg.has(flags::kSyn) && (!seg.data.empty() || fin || seg.probe) && sf.state_ != SubflowState::Dead) {
            send_ack(sf);
        }
        return;
    }
    keepalive_unanswered_ = 0;
    if (state_ == ConnState::Established) keepalive_timer_.arm_in(cfg_.keepalive_interval);

    if (sf.state_ == SubflowState::Joining) {
        if (seg.has(flags::kSyn) && !seg.has(flags::kAck)) {
            if (!sf.opener_) send_synack(sf);
            return;
        }
        if (seg.has(flags::kSyn)) {
            if (sf.opener_ && seg.ack == sf.snd_nxt_) on_synack(sf, seg);
            return;
        }
        if (!seg.has(flags::kAck) || sf.opener_ || seg.ack != sf.snd_nxt_) return;
        sf.snd_una_ = seg.ack;
        sf.handshake_timer_->cancel();
        if (!sf.syn_retransmitted_) sf.take_rtt_sample(sim_.now() - sf.syn_sent_at_, cfg_);
        if (sf.initial_) {
            establish(sf);
        } else {
            subflow_active(sf);
        }
        if (state_ == ConnState::Closed) return;
        // The completing ACK may carry data; fall through.
    } else if (seg.has(flags::kSyn)) {
        if (seg.has(flags::kAck) && sf.opener_) send_ack(sf); // our third ACK was lost
        return;
    }
    if (sf.state_ != SubflowState::Active) return;

    if (seg.has(flags::kAck)) on_ack(sf, seg);
    if (state_ == ConnState::Closed) return;
    if (seg.add_addr) on_add_addr(sf, *seg.add_addr);
    const bool fin = multipath_ ? (seg.dss && seg.dss->data_fin) : seg.has(flags::kFin);
    if (!seg.data.empty() || fin) {
        on_data(sf, seg);
    } else if (seg.probe) {
        send_ack(sf);
    }
    if (state_ == ConnState::Closed) return;
    pump();
    maybe_finish();
}

void Connection::on_synack(Subflow& sf, const sim::TcpSegment& seg) {
    sf.handshake_timer_->cancel();
    sf.rcv_nxt_ = seg.seq + 1;
    sf.snd_una_ = seg.ack;
    if (!sf.syn_retransmitted_) sf.take_rtt_sample(sim_.now() - sf.syn_sent_at_, cfg_);

    if (!sf.initial_) {
        if (!seg.mp_join) {
            kill_subflow(sf, "join_rejected");
            return;
        }
        send_ack(sf);
        subflow_active(sf);
        return;
    }

    if (multipath_ && !seg.mp_capable) {
        multipath_ = false;
        fell_back_ = true;
        stack_.unbind_token(local_token_);
    }
    sim::MpCapable third{};
    if (multipath_) {
        remote_key_ = seg.mp_capable->sender_key;
        remote_token_ = derive_token(remote_key_);
        third = sim::MpCapable{local_key_, remote_key_};
    }
    send_buf_.consume(static_cast<std::size_t>(syn_payload_));
    buf_base_ = data_una_ = data_nxt_ = syn_payload_;
    right_edge_ = syn_payload_ + seg.window;

    sim::TcpSegment ack = make_segment(sf, flags::kAck);
    if (multipath_) ack.mp_capable = third;
    emit(sf, std::move(ack));
    establish(sf);
}

void Connection::on_reset(Subflow& sf, const sim::TcpSegment& seg) {
    if (state_ == ConnState::Closed || sf.state_ == SubflowState::Dead) return;
    if (!multipath_ || seg.mp_fastclose || (sf.initial_ && state_ != ConnState::Established)) {
        log(sf.index_, "reset", data_una_);
        close_with(CloseReason::Reset);
        return;
    }
    if (sf.state_ == SubflowState::Joining && sf.opener_) {
        ++stats_.joins_rejected;
        kill_subflow(sf, "join_rejected");
    } else {
        kill_subflow(sf, "subflow_reset");
    }
}

void Connection::on_add_addr(Subflow& sf, const sim::AddAddr& opt) {
    if (opt.echo) {
        for (auto& a : adverts_) {
            if (a.id == opt.id) a.acked = true;
        }
        if (std::all_of(adverts_.begin(), adverts_.end(), [](const Advert& a) { return a.acked; })) {
            advert_timer_.cancel();
        }
        return;
    }
    const bool fresh = std::find(candidates_.begin(), candidates_.end(), opt.addr) == candidates_.end();
    sim::TcpSegment echo = make_segment(sf, flags::kAck);
    echo.add_addr = sim::AddAddr{opt.addr, opt.id, true};
    emit(sf, std::move(echo));
    if (fresh) {
        candidates_.push_back(opt.addr);
        log(sf.index_, "add_addr", opt.addr.ip);
        if (cb_.on_add_addr) cb_.on_add_addr(*this, opt.addr);
    }
}

// ---- Connection: sender ----------------------------------------------------

void Connection::on_ack(Subflow& sf, const sim::TcpSegment& seg) {
    if (multipath_) {
        if (seg.dss && seg.dss->data_ack) on_data_ack(*seg.dss->data_ack, seg.window);
    } else if (seg.ack >= 1) {
        on_data_ack(seg.ack - 1, seg.window);
    }

    if (seg.ack > sf.snd_nxt_) return;
    const bool was_in_recovery = sf.in_recovery_;
    std::uint64_t newly = 0;
    if (seg.ack > sf.snd_una_) {
        newly = seg.ack - sf.snd_una_;
        std::optional<SimTime> sample;
        while (!sf.records_.empty() && sf.records_.front().end() <= seg.ack) {
            const Subflow::Record& r = sf.records_.front();
            if (r.in_pipe) sf.pipe_ -= r.seq_len();
            if (r.lost) --sf.lost_pending_;
            if (!r.retransmitted && !r.sacked) {
                sample = sim_.now() - r.sent_at;
                sf.delivered_sent_at_ = std::max(sf.delivered_sent_at_, r.sent_at);
            }
            sf.records_.pop_front();
        }
        sf.snd_una_ = seg.ack;
        sf.consecutive_rtos_ = 0;
        // Karn: a backed-off timer stays backed off until a clean sample.
        if (sample) sf.take_rtt_sample(*sample, cfg_);
    }

    bool newly_sacked = false;
    for (const auto& blk : seg.sack) {
        const std::uint64_t begin = std::max(blk.begin, sf.snd_una_);
        auto it = std::lower_bound(sf.records_.begin(), sf.records_.end(), begin,
                                   [](const Subflow::Record& r, std::uint64_t v) { return r.ssn < v; });
        for (; it != sf.records_.end() && it->end() <= blk.end; ++it) {
            if (it->sacked) continue;
            it->sacked = true;
            newly_sacked = true;
            sf.delivered_sent_at_ = std::max(sf.delivered_sent_at_, it->sent_at);
            if (it->in_pipe) sf.pipe_ -= it->seq_len();
            it->in_pipe = false;
            if (it->lost) {
                it->lost = false;
                --sf.lost_pending_;
            }
        }
    }
    if (newly_sacked || newly > 0) detect_losses(sf);

    if (sf.in_recovery_ && sf.snd_una_ >= sf.recovery_point_) sf.in_recovery_ = false;
    if (newly > 0 && !was_in_recovery && !sf.in_recovery_) cc_ack(sf, newly);
    arm_rto(sf, newly > 0);
}

void Connection::on_data_ack(std::uint64_t ack, std::uint64_t window) {
    ack = std::min(ack, data_end_ + 1);
    if (ack > data_una_) {
        const std::uint64_t upto = std::min(ack, data_end_);
        if (upto > buf_base_) {
            send_buf_.consume(static_cast<std::size_t>(upto - buf_base_));
            buf_base_ = upto;
        }
        data_una_ = ack;
        if (fin_sent_ && ack > data_end_) fin_acked_ = true;
    }
    const std::uint64_t edge = ack + window;
    if (edge > right_edge_) {
        right_edge_ = edge;
        persist_timer_.cancel();
    }
}

void Connection::detect_losses(Subflow& sf) {
    std::uint32_t sacked_above = 0;
    bool new_episode = false;
    // A retransmission is presumed lost once something sent a quarter RTT
    // after it has been delivered.
    const SimTime reorder_window = std::max(SimTime::from_ms(1), SimTime::from_us(sf.srtt_.us / 4));
    for (auto it = sf.records_.rbegin(); it != sf.records_.rend(); ++it) {
        if (it->sacked) {
            ++sacked_above;
            continue;
        }
        if (it->lost) continue;
        if (it->retransmitted) {
            if (it->sent_at + reorder_window >= sf.delivered_sent_at_) continue;
        } else if (sacked_above < cfg_.dup_thresh) {
            continue;
        }
        it->lost = true;
        if (it->in_pipe) sf.pipe_ -= it->seq_len();
        it->in_pipe = false;
        ++sf.lost_pending_;
        if (it->ssn >= sf.recovery_point_) new_episode = true;
    }
    if (new_episode && !sf.in_recovery_) {
        sf.in_recovery_ = true;
        sf.fast_retransmit_ = true;
        sf.recovery_point_ = sf.snd_nxt_;
        apply_loss(sf.cc_, cfg_.mss);
        ++stats_.loss_episodes;
        log(sf.index_, "loss", sf.snd_una_);
        if (cc_observer_) cc_observer_(CcEvent{CcEvent::Kind::Loss, sf.index_, 0, sf.cc_.cwnd, sf.cc_.ssthresh});
    }
}

void Connection::cc_ack(Subflow& sf, std::uint64_t acked) {
    std::vector<CoupledView> views;
    std::size_t self = 0;
    for (const auto& s : subflows_) {
        if (s->state_ != SubflowState::Active) continue;
        if (s.get() == &sf) self = views.size();
        views.push_back(CoupledView{s->cc_.cwnd, s->has_rtt_ ? s->srtt_ : s->rto_});
    }
    if (views.empty()) return;
    sf.cc_.cwnd = cwnd_after_ack(sf.cc_, views, self, acked, cfg_.mss);
    if (cc_observer_) cc_observer_(CcEvent{CcEvent::Kind::Ack, sf.index_, acked, sf.cc_.cwnd, sf.cc_.ssthresh});
}

void Connection::arm_rto(Subflow& sf, bool restart) {
    if (sf.records_.empty()) {
        sf.rto_timer_->cancel();
    } else if (restart || !sf.rto_timer_->armed()) {
        sf.rto_timer_->arm_in(sf.rto_);
    }
}

void Connection::on_rto(std::size_t index) {
    Subflow& sf = *subflows_[index];
    if (state_ == ConnState::Closed || sf.state_ != SubflowState::Active || sf.records_.empty()) return;
    ++sf.consecutive_rtos_;
    ++stats_.timeouts;
    log(index, "rto", sf.records_.front().dsn);

    const bool alternative = std::any_of(subflows_.begin(), subflows_.end(), [&](const auto& s) {
        return s.get() != &sf && s->state_ == SubflowState::Active;
    });
    if (alternative && sf.consecutive_rtos_ >= cfg_.dead_after_rtos) {
        kill_subflow(sf, "dead");
        pump();
        return;
    }
    if (!alternative && sf.consecutive_rtos_ > cfg_.abort_after_rtos) {
        fail(CloseReason::Timeout);
        return;
    }

    // Repeated timeouts of the same data keep the threshold where the first
    // one put it.
    const std::uint64_t flight = sf.consecutive_rtos_ > 1 ? sf.cc_.ssthresh * 2
                                                          : std::min(sf.snd_nxt_ - sf.snd_una_, sf.cc_.cwnd);
    apply_timeout(sf.cc_, flight, cfg_.mss);
    if (cc_observer_) cc_observer_(CcEvent{CcEvent::Kind::Timeout, index, 0, sf.cc_.cwnd, sf.cc_.ssthresh, flight});
    sf.lost_pending_ = 0;
    for (auto& r : sf.records_) {
        if (r.sacked) continue;
        r.lost = true;
        r.in_pipe = false;
        ++sf.lost_pending_;
    }
    sf.pipe_ = 0;
    sf.in_recovery_ = false;
    sf.fast_retransmit_ = false;
    sf.recovery_point_ = sf.snd_nxt_;
    sf.rto_ = std::min(sf.rto_ * 2, cfg_.max_rto);
    sf.rto_timer_->arm_in(sf.rto_);
    if (alternative) queue_reinjection(sf);
    pump();
}

void Connection::queue_reinjection(Subflow& sf) {
    for (const auto& r : sf.records_) {
        if (r.sacked || (r.data_len == 0 && !r.fin)) continue;
        if (r.dsn + r.data_len + (r.fin ? 1 : 0) <= data_una_) continue;
        const bool queued = std::any_of(reinject_.begin(), reinject_.end(),
                                        [&](const Reinject& q) { return q.dsn == r.dsn; });
        if (!queued) reinject_.push_back(Reinject{r.dsn, r.data_len, r.fin, sf.index_});
    }
}

void Connection::kill_subflow(Subflow& sf, const char* why) {
    if (sf.state_ == SubflowState::Dead) return;
    const bool was_joining = sf.state_ == SubflowState::Joining;
    log(sf.index_, why, data_una_);
    if (!sf.records_.empty()) queue_reinjection(sf);
    sf.state_ = SubflowState::Dead;
    sf.handshake_timer_->cancel();
    sf.release_records();
    if (was_joining && state_ != ConnState::Established) return;
    const bool any_alive = std::any_of(subflows_.begin(), subflows_.end(),
                                       [](const auto& s) { return s->state_ != SubflowState::Dead; });
    if (!any_alive) close_with(CloseReason::Timeout);
}

std::vector<std::uint8_t> Connection::payload_for(std::uint64_t dsn, std::uint32_t len) const {
    std::vector<std::uint8_t> out(len, 0);
    // Bytes below buf_base_ were already acknowledged at the data level; the
    // receiver discards them by DSN, so their content is irrelevant.
    if (dsn + len > buf_base_) {
        const std::uint64_t from = std::max(dsn, buf_base_);
        const auto src = send_buf_.view(static_cast<std::size_t>(from - buf_base_),
                                        static_cast<std::size_t>(dsn + len - from));
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(from - dsn));
    }
    return out;
}

void Connection::send_record(Subflow& sf, const Subflow::Record& rec) {
    sim::TcpSegment seg = make_segment(sf, flags::kAck);
    seg.seq = rec.ssn;
    seg.data = payload_for(rec.dsn, rec.data_len);
    if (multipath_) {
        seg.dss->mapping = sim::DssMapping{rec.dsn, rec.ssn, rec.data_len};
        seg.dss->data_fin = rec.fin;
    } else if (rec.fin) {
        seg.flags |= flags::kFin;
    }
    sf.data_bytes_ += rec.data_len;
    emit(sf, std::move(seg));
    arm_rto(sf, false);
}

std::vector<SchedulerCandidate> Connection::candidates_excluding(std::optional<std::size_t> excluded) const {
    std::vector<SchedulerCandidate> out;
    for (const auto& s : subflows_) {
        if (s->state_ != SubflowState::Active || (excluded && *excluded == s->index_)) continue;
        out.push_back(SchedulerCandidate{s->index_, s->network(), s->has_rtt_ ? s->srtt_ : s->rto_, s->space()});
    }
    return out;
}

void Connection::notify_schedule(std::span<const SchedulerCandidate> cands, std::size_t chosen, std::uint64_t len,
                                 bool reinjection) {
    if (!sched_observer_) return;
    std::uint64_t dsl_space = 0;
    for (const auto& c : cands) {
        if (c.net == sim::Network::Dsl) dsl_space = std::max(dsl_space, c.space);
    }
    sched_observer_(ScheduleDecision{chosen, subflows_[chosen]->network(), len, dsl_space, reinjection});
}

void Connection::pump() {
    if (state_ != ConnState::Established) return;
    if (in_pump_) {
        pump_again_ = true;
        return;
    }
    in_pump_ = true;
    do {
        pump_again_ = false;
        bool progress = true;
        while (progress && state_ == ConnState::Established) {
            progress = false;
            pump_once(progress);
        }
    } while (pump_again_ && state_ == ConnState::Established);
    in_pump_ = false;

    if (writer_blocked_ && state_ == ConnState::Established && writable() > 0) {
        writer_blocked_ = false;
        if (cb_.on_writable) cb_.on_writable(*this);
    }
}

void Connection::pump_once(bool& progress) {
    // 1. Subflow-level retransmissions go out on their own subflow first.
    for (auto& sp : subflows_) {
        Subflow& sf = *sp;
        if (sf.state_ != SubflowState::Active || sf.lost_pending_ == 0) continue;
        for (auto& r : sf.records_) {
            if (sf.lost_pending_ == 0) break;
            if (!r.lost) continue;
            const bool forced = std::exchange(sf.fast_retransmit_, false);
            if (!forced && sf.space() < std::max<std::uint64_t>(r.seq_len(), 1)) break;
            if (forced) sf.rto_timer_->arm_in(sf.rto_);
            r.lost = false;
            r.retransmitted = true;
            r.in_pipe = true;
            r.sent_at = sim_.now();
            sf.pipe_ += r.seq_len();
            --sf.lost_pending_;
            ++stats_.retransmissions;
            send_record(sf, r);
            progress = true;
        }
    }

    // 2. Reinjections onto a different subflow.
    while (!reinject_.empty()) {
        const Reinject q = reinject_.front();
        if (q.dsn + q.len + (q.fin ? 1 : 0) <= data_una_) {
            reinject_.pop_front();
            continue;
        }
        const auto cands = candidates_excluding(q.origin);
        RoundRobinCursor scratch;
        const auto pick = select_subflow(SchedulerPolicy::LowestRtt, cands, q.len + (q.fin ? 1 : 0), scratch);
        if (!pick) break;
        reinject_.pop_front();
        notify_schedule(cands, *pick, q.len, true);
        enqueue_new(*subflows_[*pick], q.dsn, q.len, q.fin);
        ++stats_.reinjections;
        log(*pick, "reinject", q.dsn);
        progress = true;
    }

    // 3. New data, then the FIN.
    while (state_ == ConnState::Established) {
        const std::uint64_t avail = data_end_ - data_nxt_;
        const std::uint64_t room = right_edge_ > data_nxt_ ? right_edge_ - data_nxt_ : 0;
        const auto len = static_cast<std::uint32_t>(std::min<std::uint64_t>({cfg_.mss, avail, room}));
        const bool fin = fin_requested_ && !fin_sent_ && data_nxt_ + len == data_end_;
        if (len == 0 && !fin) {
            if (avail > 0 && room == 0) arm_persist();
            break;
        }
        const auto cands = candidates_excluding(std::nullopt);
        const auto pick = select_subflow(scheduler_, cands, len + (fin ? 1 : 0), rr_);
        if (!pick) break;
        notify_schedule(cands, *pick, len, false);
        enqueue_new(*subflows_[*pick], data_nxt_, len, fin);
        data_nxt_ += len;
        if (fin) {
            fin_sent_ = true;
            log(*pick, "data_fin", data_nxt_);
        }
        progress = true;
    }
}

void Connection::enqueue_new(Subflow& sf, std::uint64_t dsn, std::uint32_t len, bool fin) {
    Subflow::Record r;
    r.ssn = sf.snd_nxt_;
    r.dsn = dsn;
    r.data_len = len;
    r.fin = fin;
    r.sent_at = sim_.now();
    sf.snd_nxt_ += r.seq_len();
    sf.pipe_ += r.seq_len();
    sf.records_.push_back(r);
    send_record(sf, sf.records_.back());
}

void Connection::arm_persist() {
    if (persist_timer_.armed()) return;
    for (const auto& s : subflows_) {
        if (!s->records_.empty()) return; // an ACK will come back
    }
    Subflow* sf = control_subflow();
    persist_backoff_ = sf ? std::max(sf->rto_, cfg_.min_rto) : cfg_.initial_rto;
    persist_timer_.arm_in(persist_backoff_);
}

void Connection::on_persist() {
    if (state_ != ConnState::Established) return;
    if (right_edge_ > data_nxt_ || data_end_ == data_nxt_) return;
    Subflow* sf = control_subflow();
    if (!sf) return;
    send_ack(*sf, true);
    persist_backoff_ = std::min(persist_backoff_ * 2, cfg_.max_rto);
    persist_timer_.arm_in(persist_backoff_);
}

// ---- Connection: receiver --------------------------------------------------

void Connection::on_data(Subflow& sf, const sim::TcpSegment& seg) {
    const bool fin = multipath_ ? (seg.dss && seg.dss->data_fin) : seg.has(flags::kFin);
    const std::uint64_t seq_len = seg.data.size() + (fin ? 1 : 0);
    if (seg.seq + seq_len <= sf.rcv_nxt_) {
        send_ack(sf);
        return;
    }
    std::uint64_t dsn = 0;
    if (multipath_) {
        if (!seg.dss || !seg.dss->mapping) return; // unmapped data is not accepted
        dsn = seg.dss->mapping->dsn;
    } else {
        dsn = seg.seq - 1;
    }
    const std::size_t readable_before = rx_.readable();
    const bool fin_before = rx_.fin_reached();
    if (rx_.insert(dsn, seg.data, fin) == ReorderBuffer::Insert::Overflow) {
        ++stats_.overflow_drops;
        send_ack(sf);
        return;
    }
    sf.mark_received(seg.seq, seq_len);
    if ((rx_.readable() > readable_before || rx_.fin_reached() != fin_before) && cb_.on_readable) {
        if (!fin_before && rx_.fin_reached()) log(sf.index_, "peer_fin", rx_.cursor());
        cb_.on_readable(*this);
        if (sf.state_ == SubflowState::Dead) return;
    }
    send_ack(sf);
}

std::size_t Connection::read(std::span<std::uint8_t> out) {
    const std::size_t n = rx_.read(out);
    if (n > 0) maybe_window_update();
    return n;
}

std::size_t Connection::discard(std::size_t n) {
    const std::size_t k = rx_.discard(n);
    if (k > 0) maybe_window_update();
    return k;
}

void Connection::maybe_window_update() {
    if (state_ != ConnState::Established) return;
    const std::uint64_t edge = rx_.read_offset() + rx_.capacity();
    if (edge < advertised_edge_ + std::max<std::uint64_t>(rx_.capacity() / 4, 2ULL * cfg_.mss)) return;
    if (Subflow* sf = control_subflow()) send_ack(*sf);
}

// ---- Connection: application API -------------------------------------------

std::size_t Connection::writable() const {
    const std::uint64_t unsent_bytes = data_end_ - data_nxt_;
    return unsent_bytes >= cfg_.send_buffer ? 0 : static_cast<std::size_t>(cfg_.send_buffer - unsent_bytes);
}

std::size_t Connection::write(std::span<const std::uint8_t> bytes) {
    if (state_ == ConnState::Closed || fin_requested_) return 0;
    const std::size_t n = std::min(bytes.size(), writable());
    if (n < bytes.size()) writer_blocked_ = true;
    if (n == 0) return 0;
    send_buf_.append(bytes.first(n));
    data_end_ += n;
    pump();
    return n;
}

void Connection::shutdown() {
    if (state_ == ConnState::Closed || fin_requested_) return;
    fin_requested_ = true;
    pump();
}

void Connection::abort() { fail(CloseReason::Aborted); }

void Connection::fail(CloseReason reason) {
    if (state_ == ConnState::Closed) return;
    for (auto& s : subflows_) {
        if (s->state_ != SubflowState::Dead) send_rst(*s);
    }
    close_with(reason);
}

void Connection::advertise_address(sim::Address addr) {
    if (state_ != ConnState::Established) {
        throw Error(ErrorCode::ConnectionClosed, "advertise_address on a connection that is not established");
    }
    if (!multipath_) return;
    if (std::any_of(adverts_.begin(), adverts_.end(), [&](const Advert& a) { return a.addr == addr; })) return;
    adverts_.push_back(Advert{addr, next_advert_id_++, false});
    send_advert(adverts_.back());
    Subflow* sf = control_subflow();
    advert_timer_.arm_in(sf ? sf->rto_ : cfg_.initial_rto);
}

void Connection::send_advert(const Advert& a) {
    Subflow* sf = control_subflow();
    if (!sf) return;
    sim::TcpSegment seg = make_segment(*sf, flags::kAck);
    seg.add_addr = sim::AddAddr{a.addr, a.id, false};
    log(sf->index_, "add_addr_tx", a.addr.ip);
    emit(*sf, std::move(seg));
}

void Connection::on_advert_timer() {
    if (state_ != ConnState::Established) return;
    bool pending = false;
    for (const auto& a : adverts_) {
        if (a.acked) continue;
        pending = true;
        send_advert(a);
    }
    if (pending) {
        Subflow* sf = control_subflow();
        advert_timer_.arm_in(sf ? sf->rto_ : cfg_.initial_rto);
    }
}

std::size_t Connection::join(sim::Endpoint local, sim::Endpoint remote) {
    if (state_ != ConnState::Established) {
        throw Error(ErrorCode::ConnectionClosed, "join on a connection that is not established");
    }
    if (!multipath_) throw Error(ErrorCode::InvalidArgument, "join on a plain connection");
    if (local.port == 0) local.port = stack_.ephemeral_port();
    Subflow& sf = new_subflow(local, remote, true);
    send_syn(sf);
    return sf.index_;
}

std::size_t Connection::active_subflows() const {
    return static_cast<std::size_t>(std::count_if(subflows_.begin(), subflows_.end(),
                                                  [](const auto& s) { return s->state_ == SubflowState::Active; }));
}

bool Connection::has_subflow_on(sim::Network net) const {
    return std::any_of(subflows_.begin(), subflows_.end(), [net](const auto& s) {
        return s->state_ != SubflowState::Dead && s->network() == net;
    });
}

// ---- Connection: control ---------------------------------------------------

sim::TcpSegment Connection::make_segment(Subflow& sf, std::uint8_t fl) {
    sim::TcpSegment seg;
    seg.src_port = sf.local_.port;
    seg.dst_port = sf.remote_.port;
    seg.seq = sf.snd_nxt_;
    seg.ack = sf.rcv_nxt_;
    seg.flags = fl;
    seg.window = rx_.window();
    seg.sack = sf.sack_blocks();
    if (multipath_ && state_ == ConnState::Established) seg.dss = sim::Dss{rx_.ack_point(), std::nullopt, false};
    advertised_edge_ = std::max(advertised_edge_, rx_.read_offset() + rx_.capacity());
    return seg;
}

void Connection::emit(Subflow& sf, sim::TcpSegment seg) {
    sim::Packet pkt;
    pkt.id = sim_.next_packet_id();
    pkt.src = sf.local_.addr;
    pkt.dst = sf.remote_.addr;
    pkt.size = sim::kTcpHeaderBytes + static_cast<std::uint32_t>(seg.data.size()) +
               (seg.has_mp_option() ? sim::kMpOptionBytes : 0);
    pkt.payload = std::move(seg);
    ++stats_.segments_sent;
    stats_.wire_bytes_sent += pkt.size;
    sf.wire_bytes_ += pkt.size;
    stack_.output(std::move(pkt));
}

void Connection::send_ack(Subflow& sf, bool probe) {
    sim::TcpSegment seg = make_segment(sf, flags::kAck);
    seg.probe = probe;
    emit(sf, std::move(seg));
}

void Connection::send_rst(Subflow& sf) {
    sim::TcpSegment seg = make_segment(sf, flags::kRst | flags::kAck);
    seg.dss.reset();
    seg.sack.clear();
    seg.mp_fastclose = multipath_;
    emit(sf, std::move(seg));
}

Subflow* Connection::control_subflow() {
    Subflow* best = nullptr;
    for (auto& s : subflows_) {
        if (s->state_ != SubflowState::Active) continue;
        if (!best || s->consecutive_rtos_ < best->consecutive_rtos_) best = s.get();
    }
    return best;
}

void Connection::on_keepalive() {
    if (state_ != ConnState::Established) return;
    if (keepalive_unanswered_ >= cfg_.keepalive_probes) {
        log(0, "keepalive_timeout", data_una_);
        fail(CloseReason::Timeout);
        return;
    }
    if (Subflow* sf = control_subflow()) send_ack(*sf, true);
    ++keepalive_unanswered_;
    keepalive_timer_.arm_in(cfg_.keepalive_interval);
}

void Connection::maybe_finish() {
    if (state_ == ConnState::Established && fin_acked_ && rx_.fin_reached()) close_with(CloseReason::Normal);
}

void Connection::close_with(CloseReason reason) {
    if (state_ == ConnState::Closed) return;
    state_ = ConnState::Closed;
    for (auto& s : subflows_) {
        s->handshake_timer_->cancel();
        s->rto_timer_->cancel();
    }
    keepalive_timer_.cancel();
    advert_timer_.cancel();
    persist_timer_.cancel();
    reinject_.clear();
    if (local_token_ != 0) stack_.unbind_token(local_token_);
    log(0, to_string(reason), data_una_);
    if (cb_.on_closed) cb_.on_closed(*this, reason);
}

void Connection::log(std::size_t sf, std::string_view event, std::uint64_t dsn) {
    std::ostream* out = stack_.conn_log();
    if (!out) return;
    const Subflow* s = sf < subflows_.size() ? subflows_[sf].get() : nullptr;
    *out << sim_.now().us << ' ' << id_ << ' ' << sf << ' ' << event << ' ' << dsn << ' ' << (s ? s->cc_.cwnd : 0)
         << ' ' << (s ? s->srtt_.us : 0) << '\n';
}

} // namespace hybsim::transport
