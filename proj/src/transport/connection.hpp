#pragma once

#include <cstdint>
#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "simcore/address.hpp"
#include "simcore/packet.hpp"
#include "simcore/simulator.hpp"
#include "transport/byte_buffer.hpp"
#include "transport/congestion.hpp"
#include "transport/reorder_buffer.hpp"
#include "transport/scheduler.hpp"

namespace hybsim::transport {

class Stack;
class Connection;

struct TransportConfig {
    std::uint32_t mss = 1400;
    std::uint32_t initial_window = 10; // segments
    sim::SimTime initial_rto = sim::SimTime::from_s(1);
    sim::SimTime min_rto = sim::SimTime::from_ms(200);
    sim::SimTime max_rto = sim::SimTime::from_s(60);
    int syn_retries = 3;
    int dead_after_rtos = 3;
    // Consecutive timeouts after which a connection with no other subflow gives up.
    int abort_after_rtos = 6;
    std::uint64_t receive_buffer = 2ULL << 20;
    std::uint64_t send_buffer = 64ULL << 10; // unsent bytes accepted from the application
    std::uint32_t dup_thresh = 3;
    sim::SimTime keepalive_interval = sim::SimTime::from_s(2);
    int keepalive_probes = 3;
    SchedulerPolicy scheduler = SchedulerPolicy::LowestRtt;
};

enum class ConnState { SynSent, SynReceived, Established, Closed };
enum class SubflowState { Joining, Active, Dead };
enum class CloseReason { Normal, Reset, HandshakeTimeout, Timeout, Aborted };

std::string_view to_string(ConnState s);
std::string_view to_string(SubflowState s);
std::string_view to_string(CloseReason r);

struct ConnStats {
    std::uint64_t segments_sent = 0;
    std::uint64_t wire_bytes_sent = 0;
    std::uint64_t retransmissions = 0; // data segments re-sent on their own subflow
    std::uint64_t reinjections = 0;    // data segments re-sent on another subflow
    std::uint64_t timeouts = 0;
    std::uint64_t loss_episodes = 0;
    std::uint64_t overflow_drops = 0; // segments refused by a full reorder buffer
    std::uint64_t joins_rejected = 0;
};

struct CcEvent {
    enum class Kind { Ack, Loss, Timeout };
    Kind kind = Kind::Ack;
    std::size_t subflow = 0;
    std::uint64_t acked = 0;
    std::uint64_t cwnd = 0; // after the event
    std::uint64_t ssthresh = 0;
    std::uint64_t flight = 0; // bytes outstanding when a timeout fired
};

struct ScheduleDecision {
    std::size_t subflow = 0;
    sim::Network net = sim::Network::Dsl;
    std::uint64_t len = 0;
    std::uint64_t dsl_space = 0; // largest cwnd space among DSL subflows at decision time
    bool reinjection = false;
};

struct ConnectionCallbacks {
    std::function<void(Connection&)> on_established;
    std::function<void(Connection&)> on_readable; // also fires when the peer's FIN is reached
    std::function<void(Connection&)> on_writable;
    std::function<void(Connection&, CloseReason)> on_closed;
    std::function<void(Connection&, sim::Address)> on_add_addr;
    std::function<void(Connection&, std::size_t)> on_subflow_active;
};

class Subflow {
public:
    std::size_t index() const { return index_; }
    SubflowState state() const { return state_; }
    const sim::Endpoint& local() const { return local_; }
    const sim::Endpoint& remote() const { return remote_; }
    sim::Network network() const { return local_.addr.net; }
    std::uint64_t cwnd() const { return cc_.cwnd; }
    std::uint64_t ssthresh() const { return cc_.ssthresh; }
    std::uint64_t pipe() const { return pipe_; }
    std::uint64_t space() const { return cc_.cwnd > pipe_ ? cc_.cwnd - pipe_ : 0; }
    sim::SimTime srtt() const { return srtt_; }
    sim::SimTime rto() const { return rto_; }
    bool has_rtt() const { return has_rtt_; }
    int consecutive_timeouts() const { return consecutive_rtos_; }
    std::uint64_t wire_bytes_sent() const { return wire_bytes_; }
    std::uint64_t data_bytes_sent() const { return data_bytes_; }

private:
    friend class Connection;

    struct Record {
        std::uint64_t ssn = 0;
        std::uint64_t dsn = 0;
        std::uint32_t data_len = 0;
        bool fin = false;
        bool sacked = false;
        bool lost = false;          // awaiting retransmission
        bool retransmitted = false; // Karn: no RTT sample
        bool in_pipe = true;
        sim::SimTime sent_at;

        std::uint64_t seq_len() const { return data_len + (fin ? 1 : 0); }
        std::uint64_t end() const { return ssn + seq_len(); }
    };

    Subflow(Connection& conn, std::size_t index, sim::Endpoint local, sim::Endpoint remote);

    void take_rtt_sample(sim::SimTime sample, const TransportConfig& cfg);
    void mark_received(std::uint64_t seq, std::uint64_t len);
    std::vector<sim::SackBlock> sack_blocks() const;
    void release_records();

    std::size_t index_;
    sim::Endpoint local_;
    sim::Endpoint remote_;
    SubflowState state_ = SubflowState::Joining;
    bool initial_ = false;
    bool opener_ = false; // sent the SYN

    // handshake
    int syn_tx_ = 0;
    sim::SimTime syn_sent_at_;
    bool syn_retransmitted_ = false;
    std::unique_ptr<sim::Timer> handshake_timer_;

    // sender
    std::uint64_t snd_una_ = 0;
    std::uint64_t snd_nxt_ = 0;
    std::deque<Record> records_;
    std::uint64_t pipe_ = 0;
    std::size_t lost_pending_ = 0;
    CongestionState cc_;
    bool in_recovery_ = false;
    std::uint64_t recovery_point_ = 0;
    sim::SimTime delivered_sent_at_; // newest send time among delivered segments
    bool fast_retransmit_ = false;   // first retransmission of an episode ignores cwnd
    sim::SimTime srtt_;
    sim::SimTime rttvar_;
    sim::SimTime rto_;
    bool has_rtt_ = false;
    int consecutive_rtos_ = 0;
    std::unique_ptr<sim::Timer> rto_timer_;

    // receiver
    std::uint64_t rcv_nxt_ = 0;
    std::map<std::uint64_t, std::uint64_t> ooo_; // begin -> end, disjoint, above rcv_nxt
    std::uint64_t last_block_begin_ = 0;

    std::uint64_t wire_bytes_ = 0;
    std::uint64_t data_bytes_ = 0;
};

// A stream connection, plain or multipath. Plain connections are the
// single-subflow special case without options; the data sequence number is
// then the subflow sequence number minus one (the SYN consumes one).
class Connection {
public:
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;
    ~Connection();

    std::uint64_t id() const { return id_; }
    ConnState state() const { return state_; }
    bool multipath() const { return multipath_; }
    // The client asked for multipath but the peer answered plain.
    bool fell_back() const { return fell_back_; }
    bool is_client() const { return client_; }
    std::uint64_t local_key() const { return local_key_; }
    std::uint64_t remote_key() const { return remote_key_; }
    std::uint32_t local_token() const { return local_token_; }
    std::uint32_t remote_token() const { return remote_token_; }
    const sim::Endpoint& local() const { return subflows_.front()->local(); }
    const sim::Endpoint& remote() const { return subflows_.front()->remote(); }

    void set_callbacks(ConnectionCallbacks cb) { cb_ = std::move(cb); }
    void set_scheduler(SchedulerPolicy p) { scheduler_ = p; }
    SchedulerPolicy scheduler() const { return scheduler_; }
    void set_cc_observer(std::function<void(const CcEvent&)> fn) { cc_observer_ = std::move(fn); }
    void set_schedule_observer(std::function<void(const ScheduleDecision&)> fn) { sched_observer_ = std::move(fn); }

    // Application side. `write` returns the number of bytes accepted; 0 means
    // the send queue is full and on_writable will fire once it drains.
    std::size_t write(std::span<const std::uint8_t> bytes);
    std::size_t writable() const;
    std::uint64_t unsent() const { return data_end_ - data_nxt_; }
    void shutdown();
    void abort();
    std::size_t readable() const { return rx_.readable(); }
    std::size_t read(std::span<std::uint8_t> out);
    std::size_t discard(std::size_t n);
    bool eof() const { return rx_.eof(); }
    bool peer_fin() const { return rx_.fin_reached(); }
    bool fin_acked() const { return fin_acked_; }
    bool send_closed() const { return fin_requested_; }
    std::uint64_t bytes_acked() const { return std::min(data_una_, data_end_) - syn_payload_; }
    std::uint64_t bytes_received() const { return rx_.cursor(); }

    // Multipath control.
    void advertise_address(sim::Address addr);
    std::size_t join(sim::Endpoint local, sim::Endpoint remote);
    const std::vector<sim::Address>& candidates() const { return candidates_; }
    std::size_t subflow_count() const { return subflows_.size(); }
    const Subflow& subflow(std::size_t i) const { return *subflows_.at(i); }
    std::size_t active_subflows() const;
    bool has_subflow_on(sim::Network net) const;

    const ConnStats& stats() const { return stats_; }
    const ReorderBuffer& receive_buffer() const { return rx_; }

private:
    friend class Stack;

    struct Reinject {
        std::uint64_t dsn = 0;
        std::uint32_t len = 0;
        bool fin = false;
        std::size_t origin = 0;
    };
    struct Advert {
        sim::Address addr;
        std::uint8_t id = 0;
        bool acked = false;
    };

    Connection(Stack& stack, std::uint64_t id, bool client, bool multipath, SchedulerPolicy policy);

    // Stack entry points.
    void start_connect(sim::Endpoint local, sim::Endpoint remote, std::vector<std::uint8_t> syn_payload);
    void start_accept(const sim::Packet& syn, bool allow_multipath);
    void start_join_accept(const sim::Packet& syn);
    void on_segment(std::size_t sf, const sim::Packet& pkt);

    Subflow& new_subflow(sim::Endpoint local, sim::Endpoint remote, bool opener);

    // Handshake.
    void send_syn(Subflow& sf);
    void send_synack(Subflow& sf);
    void on_synack(Subflow& sf, const sim::TcpSegment& seg);
    void on_handshake_timeout(std::size_t sf);
    void establish(Subflow& sf);
    void subflow_active(Subflow& sf);
    void on_reset(Subflow& sf, const sim::TcpSegment& seg);
    void on_add_addr(Subflow& sf, const sim::AddAddr& opt);

    // Data path.
    void pump();
    void pump_once(bool& progress);
    void enqueue_new(Subflow& sf, std::uint64_t dsn, std::uint32_t len, bool fin);
    void send_record(Subflow& sf, const Subflow::Record& rec);
    std::vector<SchedulerCandidate> candidates_excluding(std::optional<std::size_t> excluded) const;
    void notify_schedule(std::span<const SchedulerCandidate> cands, std::size_t chosen, std::uint64_t len,
                         bool reinjection);
    std::vector<std::uint8_t> payload_for(std::uint64_t dsn, std::uint32_t len) const;
    void on_ack(Subflow& sf, const sim::TcpSegment& seg);
    void on_data_ack(std::uint64_t ack, std::uint64_t window);
    void on_data(Subflow& sf, const sim::TcpSegment& seg);
    void on_rto(std::size_t sf);
    void detect_losses(Subflow& sf);
    void cc_ack(Subflow& sf, std::uint64_t acked);
    void kill_subflow(Subflow& sf, const char* why);
    void queue_reinjection(Subflow& sf);
    void arm_rto(Subflow& sf, bool restart);
    void arm_persist();

    // Control.
    void send_ack(Subflow& sf, bool probe = false);
    void send_rst(Subflow& sf);
    void send_advert(const Advert& a);
    sim::TcpSegment make_segment(Subflow& sf, std::uint8_t flags);
    void emit(Subflow& sf, sim::TcpSegment seg);
    Subflow* control_subflow();
    void on_keepalive();
    void on_advert_timer();
    void on_persist();
    void maybe_window_update();
    void maybe_finish();
    void fail(CloseReason reason);
    void close_with(CloseReason reason);
    void log(std::size_t sf, std::string_view event, std::uint64_t dsn);

    Stack& stack_;
    sim::Simulator& sim_;
    const TransportConfig& cfg_;
    std::uint64_t id_;
    bool client_;
    bool multipath_;
    bool fell_back_ = false;
    ConnState state_;
    SchedulerPolicy scheduler_;
    RoundRobinCursor rr_;
    ConnectionCallbacks cb_;
    std::function<void(const CcEvent&)> cc_observer_;
    std::function<void(const ScheduleDecision&)> sched_observer_;

    std::uint64_t local_key_ = 0;
    std::uint64_t remote_key_ = 0;
    std::uint32_t local_token_ = 0;
    std::uint32_t remote_token_ = 0;

    std::vector<std::unique_ptr<Subflow>> subflows_;

    // Data-level send state. send_buf_ holds bytes [buf_base_, data_end_).
    ByteBuffer send_buf_;
    std::uint64_t buf_base_ = 0;
    std::uint64_t data_una_ = 0;
    std::uint64_t data_nxt_ = 0;
    std::uint64_t data_end_ = 0;
    std::uint64_t syn_payload_ = 0;
    std::uint64_t right_edge_ = 0;
    bool fin_requested_ = false;
    bool fin_sent_ = false;
    bool fin_acked_ = false;
    bool writer_blocked_ = false;
    std::deque<Reinject> reinject_;

    // Data-level receive state.
    ReorderBuffer rx_;
    std::uint64_t advertised_edge_ = 0;

    std::vector<Advert> adverts_;
    std::uint8_t next_advert_id_ = 1;
    std::vector<sim::Address> candidates_;

    sim::Timer keepalive_timer_;
    sim::Timer advert_timer_;
    sim::Timer persist_timer_;
    int keepalive_unanswered_ = 0;
    sim::SimTime persist_backoff_;

    bool in_pump_ = false;
    bool pump_again_ = false;
    ConnStats stats_;
};

} // namespace hybsim::transport
