#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace hybsim::grebond {

// Weighted per-packet tunnel choice with deficit counters. Every pick credits
// each usable tunnel with its weight and charges the winner the total, so the
// long-run split follows the weights exactly and no randomness is involved.
class DeficitDistributor {
public:
    explicit DeficitDistributor(std::size_t tunnels);

    void set_weights(std::span<const double> weights);
    const std::vector<double>& weights() const { return weights_; }

    // `usable[i]` false excludes tunnel i. Returns nullopt when nothing is usable.
    std::optional<std::size_t> pick(std::span<const bool> usable);

private:
    std::vector<double> weights_;
    std::vector<double> credit_;
};

} // namespace hybsim::grebond
