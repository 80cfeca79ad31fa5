#include "proxy/convert.hpp"

namespace hybsim::proxy {

std::vector<std::uint8_t> encode_convert(const ConvertRequest& req) {
    const std::uint32_t ip = req.target.addr.ip;
    const std::uint16_t port = req.target.port;
    return {kConvertVersion,
            kConvertKindConnect,
            0,
            7,
            kConvertFamilyIpv4,
            static_cast<std::uint8_t>(ip >> 24),
            static_cast<std::uint8_t>(ip >> 16),
            static_cast<std::uint8_t>(ip >> 8),
            static_cast<std::uint8_t>(ip),
            static_cast<std::uint8_t>(port >> 8),
            static_cast<std::uint8_t>(port)};
}

ConvertParse parse_convert(std::span<const std::uint8_t> b) {
    if (b.size() < 4) return ConvertIncomplete{};
    if (b[0] != kConvertVersion) return ConvertMalformed{"unsupported version"};
    if (b[1] != kConvertKindConnect) return ConvertMalformed{"unknown kind"};
    const std::size_t len = (std::size_t{b[2]} << 8) | b[3];
    if (len != 7) return ConvertMalformed{"bad length"};
    if (b.size() < 4 + len) return ConvertIncomplete{};
    if (b[4] != kConvertFamilyIpv4) return ConvertMalformed{"unsupported address family"};
    const std::uint32_t ip = (std::uint32_t{b[5]} << 24) | (std::uint32_t{b[6]} << 16) | (std::uint32_t{b[7]} << 8) | b[8];
    const std::uint16_t port = static_cast<std::uint16_t>((b[9] << 8) | b[10]);
    if (port == 0) return ConvertMalformed{"port 0"};
    ConvertParsed out;
    out.request.target = {{ip, sim::Network::Internet}, port};
    out.consumed = 4 + len;
    return out;
}

} // namespace hybsim::proxy
