#pragma once

#include <span>
#include <vector>

namespace hybsim::grebond {

struct WeightConfig {
    double decrease = 0.8;   // multiplicative, on a degraded window
    double increase = 0.05;  // additive, on a healthy window
    double inflation = 1.5;  // srtt above baseline times this counts as degraded
    double snap_below = 0.05; // weights under this after a decrease drop to zero
};

// Degraded: probe loss or srtt inflation during the window. Dead: no probe
// answered for the liveness timeout; the weight is clamped to zero.
enum class Verdict { Healthy, Degraded, Dead };

// One controller step. The result sums to 1.
std::vector<double> update_weights(std::span<const double> weights, std::span<const Verdict> verdicts,
                                   const WeightConfig& cfg = {});

} // namespace hybsim::grebond
