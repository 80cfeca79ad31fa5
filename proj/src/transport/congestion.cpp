#include "transport/congestion.hpp"

#include <algorithm>
#include <cmath>

namespace hybsim::transport {

namespace {

// Index maximizing cwnd / rtt^2, compared exactly by cross-multiplication:
// c_a * rtt_b^2 > c_b * rtt_a^2. Ties keep the lower index.
std::size_t best_subflow(std::span<const CoupledView> sf) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sf.size(); ++i) {
        const unsigned __int128 lhs = static_cast<unsigned __int128>(sf[i].cwnd) * sf[best].srtt.us * sf[best].srtt.us;
        const unsigned __int128 rhs = static_cast<unsigned __int128>(sf[best].cwnd) * sf[i].srtt.us * sf[i].srtt.us;
        if (lhs > rhs) best = i;
    }
    return best;
}

long double coupled_sum(std::span<const CoupledView> sf, std::size_t best) {
    long double s = 0;
    const long double rb = static_cast<long double>(std::max<std::uint64_t>(sf[best].srtt.us, 1));
    for (std::size_t i = 0; i < sf.size(); ++i) {
        if (i == best) {
            s += static_cast<long double>(sf[i].cwnd);
        } else {
            const long double ri = static_cast<long double>(std::max<std::uint64_t>(sf[i].srtt.us, 1));
            s += static_cast<long double>(sf[i].cwnd) * rb / ri;
        }
    }
    return s;
}

} // namespace

double linked_alpha(std::span<const CoupledView> sf) {
    if (sf.empty()) return 0.0;
    const std::size_t best = best_subflow(sf);
    const long double s = coupled_sum(sf, best);
    long double total = 0;
    for (const auto& v : sf) total += static_cast<long double>(v.cwnd);
    if (s <= 0) return 0.0;
    return static_cast<double>(total * static_cast<long double>(sf[best].cwnd) / (s * s));
}

std::uint64_t linked_increase(std::span<const CoupledView> sf, std::size_t self, std::uint64_t acked,
                              std::uint32_t mss) {
    const std::uint64_t own = sf[self].cwnd == 0 ? 0 : (std::uint64_t{mss} * acked) / sf[self].cwnd;
    if (sf.size() == 1) return own;
    const std::size_t best = best_subflow(sf);
    const long double s = coupled_sum(sf, best);
    if (s <= 0) return own;
    const long double num = static_cast<long double>(mss) * static_cast<long double>(acked) *
                            static_cast<long double>(sf[best].cwnd);
    const auto coupled = static_cast<std::uint64_t>(std::floor(num / (s * s)));
    return std::min(coupled, own);
}

std::uint64_t cwnd_after_ack(const CongestionState& st, std::span<const CoupledView> sf, std::size_t self,
                             std::uint64_t acked, std::uint32_t mss) {
    if (st.cwnd < st.ssthresh) return st.cwnd + std::min<std::uint64_t>(acked, mss);
    return st.cwnd + linked_increase(sf, self, acked, mss);
}

void apply_loss(CongestionState& st, std::uint32_t mss) {
    st.cwnd = std::max<std::uint64_t>(st.cwnd / 2, mss);
    st.ssthresh = st.cwnd;
}

void apply_timeout(CongestionState& st, std::uint64_t flight, std::uint32_t mss) {
    st.ssthresh = std::max<std::uint64_t>(flight / 2, 2ULL * mss);
    st.cwnd = mss;
}

} // namespace hybsim::transport
