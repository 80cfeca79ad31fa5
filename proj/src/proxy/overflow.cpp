#include "proxy/overflow.hpp"

namespace hybsim::proxy {

bool OverflowController::tick(double sample, sim::SimTime now) {
    ewma_ = cfg_.gain * sample + (1.0 - cfg_.gain) * ewma_;
    if (mode_ == OverflowMode::DslOnly) {
        if (ewma_ > cfg_.threshold) {
            mode_ = OverflowMode::Overflow;
            below_since_.reset();
            ++transitions_;
            return true;
        }
        return false;
    }
    if (ewma_ >= cfg_.threshold - cfg_.hysteresis) {
        below_since_.reset();
        return false;
    }
    if (!below_since_) below_since_ = now;
    if (now - *below_since_ >= cfg_.hold_down) {
        mode_ = OverflowMode::DslOnly;
        below_since_.reset();
        ++transitions_;
        return true;
    }
    return false;
}

} // namespace hybsim::proxy
