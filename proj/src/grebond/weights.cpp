#include "grebond/weights.hpp"

#include <algorithm>

namespace hybsim::grebond {

std::vector<double> update_weights(std::span<const double> weights, std::span<const Verdict> verdicts,
                                   const WeightConfig& cfg) {
    std::vector<double> w(weights.begin(), weights.end());
    double sum = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const Verdict v = i < verdicts.size() ? verdicts[i] : Verdict::Healthy;
        if (v == Verdict::Dead) {
            w[i] = 0.0;
            continue;
        }
        const bool bad = v == Verdict::Degraded;
        w[i] = std::clamp(bad ? w[i] * cfg.decrease : w[i] + cfg.increase, 0.0, 1.0);
        if (bad && w[i] < cfg.snap_below) w[i] = 0.0;
        sum += w[i];
    }
    if (sum <= 0) {
        std::fill(w.begin(), w.end(), w.empty() ? 0.0 : 1.0 / static_cast<double>(w.size()));
        return w;
    }
    for (double& x : w) x /= sum;
    return w;
}

} // namespace hybsim::grebond
