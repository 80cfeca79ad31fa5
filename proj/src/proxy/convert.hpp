#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "simcore/address.hpp"

namespace hybsim::proxy {

// Convert request carried at the head of an explicit-mode connection:
//
//   offset 0  version   (1 byte, = 1)
//          1  kind      (1 byte, = 1, connect)
//          2  length    (2 bytes, big-endian, bytes after this field = 7)
//          4  family    (1 byte, = 1, IPv4)
//          5  address   (4 bytes, big-endian)
//          9  port      (2 bytes, big-endian)
struct ConvertRequest {
    sim::Endpoint target;
};

inline constexpr std::uint8_t kConvertVersion = 1;
inline constexpr std::uint8_t kConvertKindConnect = 1;
inline constexpr std::uint8_t kConvertFamilyIpv4 = 1;
inline constexpr std::size_t kConvertRequestBytes = 11;

std::vector<std::uint8_t> encode_convert(const ConvertRequest& req);

struct ConvertParsed {
    ConvertRequest request;
    std::size_t consumed = 0;
};
struct ConvertIncomplete {};
struct ConvertMalformed {
    const char* why = "";
};
using ConvertParse = std::variant<ConvertParsed, ConvertIncomplete, ConvertMalformed>;

ConvertParse parse_convert(std::span<const std::uint8_t> bytes);

} // namespace hybsim::proxy
