#pragma once

#include <cstdint>
#include <optional>

#include "simcore/sim_time.hpp"

namespace hybsim::proxy {

struct OverflowConfig {
    bool enabled = true; // false: every Aggregate session uses LTE from the start
    double threshold = 0.80;
    double hysteresis = 0.10;
    double gain = 0.3;
    sim::SimTime period = sim::SimTime::from_ms(100);
    sim::SimTime sample_window = sim::SimTime::from_s(1);
    sim::SimTime hold_down = sim::SimTime::from_s(3);
};

enum class OverflowMode { DslOnly, Overflow };

// DSL load monitor. Fed one utilization sample per period; the mode only
// changes inside tick().
class OverflowController {
public:
    explicit OverflowController(OverflowConfig cfg = {}) : cfg_(cfg) {}

    // Returns true when the mode changed.
    bool tick(double sample, sim::SimTime now);

    OverflowMode mode() const { return mode_; }
    double ewma() const { return ewma_; }
    std::uint64_t transitions() const { return transitions_; }
    const OverflowConfig& config() const { return cfg_; }

private:
    OverflowConfig cfg_;
    OverflowMode mode_ = OverflowMode::DslOnly;
    double ewma_ = 0.0;
    std::optional<sim::SimTime> below_since_;
    std::uint64_t transitions_ = 0;
};

} // namespace hybsim::proxy
