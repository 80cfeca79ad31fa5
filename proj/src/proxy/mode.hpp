#pragma once

#include <optional>
#include <string_view>

namespace hybsim::proxy {

enum class Mode { MptcpImplicit, MptcpExplicit, GreBond, SinglePath, RoundRobinNaive };

std::string_view to_string(Mode m);
// Accepts "implicit", "explicit", "gre", "single_path", "round_robin_naive".
std::optional<Mode> parse_mode(std::string_view text);

inline bool is_mptcp(Mode m) { return m == Mode::MptcpImplicit || m == Mode::MptcpExplicit; }
inline bool is_tunneled(Mode m) { return m == Mode::GreBond || m == Mode::RoundRobinNaive; }

} // namespace hybsim::proxy
