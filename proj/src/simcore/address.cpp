#include "simcore/address.hpp"

#include <charconv>

namespace hybsim::sim {

std::string_view to_string(Network n) {
    switch (n) {
    case Network::Dsl: return "dsl";
    case Network::Lte: return "lte";
    case Network::Lan: return "lan";
    case Network::Internet: return "internet";
    }
    return "?";
}

std::string format_ip(std::uint32_t ip) {
    return std::to_string(ip >> 24) + '.' + std::to_string((ip >> 16) & 0xff) + '.' +
           std::to_string((ip >> 8) & 0xff) + '.' + std::to_string(ip & 0xff);
}

std::string to_string(Address a) { return format_ip(a.ip); }

std::string to_string(Prefix p) { return format_ip(p.base) + '/' + std::to_string(p.length); }

std::optional<std::uint32_t> parse_ip(std::string_view text) {
    std::uint32_t ip = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int octet = 0; octet < 4; ++octet) {
        unsigned value = 0;
        auto [next, ec] = std::from_chars(p, end, value);
        if (ec != std::errc{} || next == p || value > 255) return std::nullopt;
        ip = (ip << 8) | value;
        p = next;
        if (octet < 3) {
            if (p == end || *p != '.') return std::nullopt;
            ++p;
        }
    }
    if (p != end) return std::nullopt;
    return ip;
}

std::optional<Prefix> parse_prefix(std::string_view text) {
    const auto slash = text.find('/');
    if (slash == std::string_view::npos) {
        auto ip = parse_ip(text);
        if (!ip) return std::nullopt;
        return Prefix{*ip, 32};
    }
    auto ip = parse_ip(text.substr(0, slash));
    if (!ip) return std::nullopt;
    const auto len_text = text.substr(slash + 1);
    unsigned len = 0;
    auto [next, ec] = std::from_chars(len_text.data(), len_text.data() + len_text.size(), len);
    if (ec != std::errc{} || next != len_text.data() + len_text.size() || len > 32) return std::nullopt;
    return Prefix{*ip, static_cast<std::uint8_t>(len)};
}

} // namespace hybsim::sim
