#include "grebond/distributor.hpp"

#include <algorithm>

namespace hybsim::grebond {

DeficitDistributor::DeficitDistributor(std::size_t tunnels)
    : weights_(tunnels, tunnels ? 1.0 / static_cast<double>(tunnels) : 0.0), credit_(tunnels, 0.0) {}

void DeficitDistributor::set_weights(std::span<const double> weights) {
    weights_.assign(weights.begin(), weights.end());
    credit_.resize(weights_.size(), 0.0);
}

std::optional<std::size_t> DeficitDistributor::pick(std::span<const bool> usable) {
    double total = 0;
    std::optional<std::size_t> first_usable;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (i < usable.size() && usable[i]) {
            total += weights_[i];
            if (!first_usable) first_usable = i;
        }
    }
    if (!first_usable) return std::nullopt;
    // Every usable tunnel has weight zero: fall back to the first one.
    if (total <= 0) return first_usable;

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (!(i < usable.size() && usable[i]) || weights_[i] <= 0) continue;
        credit_[i] += weights_[i];
        if (!best || credit_[i] > credit_[*best]) best = i;
    }
    credit_[*best] -= total;
    return best;
}

} // namespace hybsim::grebond
