#include "transport/token.hpp"

#include "simcore/rng.hpp"

namespace hybsim::transport {

std::uint32_t derive_token(std::uint64_t key) { return static_cast<std::uint32_t>(sim::mix64(key) >> 32); }

} // namespace hybsim::transport
