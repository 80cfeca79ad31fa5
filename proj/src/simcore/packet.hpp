#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "simcore/address.hpp"
#include "simcore/sim_time.hpp"

namespace hybsim::sim {

// ---- transport segment -----------------------------------------------------

namespace tcp_flags {
inline constexpr std::uint8_t kSyn = 0x01;
inline constexpr std::uint8_t kAck = 0x02;
inline constexpr std::uint8_t kFin = 0x04;
inline constexpr std::uint8_t kRst = 0x08;
} // namespace tcp_flags

struct MpCapable {
    std::uint64_t sender_key = 0;
    std::optional<std::uint64_t> receiver_key;
};

struct MpJoin {
    std::uint32_t token = 0;
};

// Data sequence mapping: `length` bytes starting at subflow sequence `ssn`
// carry connection-level bytes starting at `dsn`.
struct DssMapping {
    std::uint64_t dsn = 0;
    std::uint64_t ssn = 0;
    std::uint32_t length = 0;
};

struct Dss {
    std::optional<std::uint64_t> data_ack;
    std::optional<DssMapping> mapping;
    bool data_fin = false;
};

struct AddAddr {
    Address addr;
    std::uint8_t id = 0;
    bool echo = false;
};

struct SackBlock {
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

// Sequence numbers are 64-bit and never wrap inside a simulation run.
struct TcpSegment {
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint64_t seq = 0;
    std::uint64_t ack = 0;
    std::uint8_t flags = 0;
    // Receive window in bytes, relative to `ack` (plain) or the data-level
    // ack (multipath).
    std::uint64_t window = 0;
    // Zero-length probe that the receiver must acknowledge (keepalive and
    // zero-window probing).
    bool probe = false;
    std::vector<std::uint8_t> data;
    std::vector<SackBlock> sack;
    std::optional<MpCapable> mp_capable;
    std::optional<MpJoin> mp_join;
    std::optional<Dss> dss;
    std::optional<AddAddr> add_addr;
    bool mp_fastclose = false;

    bool has(std::uint8_t f) const { return (flags & f) != 0; }
    bool has_mp_option() const {
        return mp_capable || mp_join || dss || add_addr || mp_fastclose;
    }
};

// ---- GRE bonding -----------------------------------------------------------

struct Packet;

struct GreFrame {
    std::uint32_t seq = 0;
    std::uint8_t tunnel = 0;
    std::shared_ptr<const Packet> inner;
};

struct GreProbe {
    std::uint8_t tunnel = 0;
    std::uint32_t probe_id = 0;
    bool reply = false;
    SimTime sent_at;
};

struct RawPayload {};

using Payload = std::variant<RawPayload, TcpSegment, GreFrame, GreProbe>;

// ---- packet ----------------------------------------------------------------

struct Packet {
    std::uint64_t id = 0;
    Address src;
    Address dst;
    std::uint32_t size = 0; // bytes on the wire, headers included
    Payload payload;

    const TcpSegment* tcp() const { return std::get_if<TcpSegment>(&payload); }
    TcpSegment* tcp() { return std::get_if<TcpSegment>(&payload); }
};

inline constexpr std::uint32_t kTcpHeaderBytes = 40;
inline constexpr std::uint32_t kMpOptionBytes = 20;
inline constexpr std::uint32_t kGreOverheadBytes = 24;
inline constexpr std::uint32_t kProbeBytes = 64;

} // namespace hybsim::sim
