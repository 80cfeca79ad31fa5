#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace hybsim::sim {

enum class Network : std::uint8_t { Dsl, Lte, Lan, Internet };

std::string_view to_string(Network n);

// An interface address. `ip` is the routable identifier; `net` records which
// access network the attachment belongs to.
struct Address {
    std::uint32_t ip = 0;
    Network net = Network::Internet;

    friend constexpr bool operator==(Address a, Address b) { return a.ip == b.ip && a.net == b.net; }
};

struct Prefix {
    std::uint32_t base = 0;
    std::uint8_t length = 32;

    constexpr std::uint32_t mask() const {
        return length == 0 ? 0u : (~std::uint32_t{0} << (32 - length));
    }
    constexpr bool contains(std::uint32_t ip) const { return (ip & mask()) == (base & mask()); }
    constexpr bool contains(Address a) const { return contains(a.ip); }

    friend constexpr bool operator==(Prefix, Prefix) = default;
};

struct Endpoint {
    Address addr;
    std::uint16_t port = 0;
};

constexpr std::uint32_t make_ip(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    return (std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d;
}

std::string format_ip(std::uint32_t ip);
std::string to_string(Address a);
std::string to_string(Prefix p);

// Parses "a.b.c.d" or "a.b.c.d/len".
std::optional<std::uint32_t> parse_ip(std::string_view text);
std::optional<Prefix> parse_prefix(std::string_view text);

} // namespace hybsim::sim
