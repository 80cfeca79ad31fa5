#pragma once

#include <cstdint>

namespace hybsim::transport {

// Connection token: the upper 32 bits of the splitmix64 finalizer applied to
// the 64-bit key. Deterministic and stable across runs and platforms.
std::uint32_t derive_token(std::uint64_t key);

} // namespace hybsim::transport
