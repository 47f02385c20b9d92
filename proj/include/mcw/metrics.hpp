#pragma once

#include <cstdint>
#include <optional>
#include <span>

namespace mcw::eval {

// the positive class is class 0, ciphertexts of the first message
inline constexpr std::uint8_t kPositiveLabel = 0;

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Accuracy plus rates; tpr/tnr are absent (not NaN) when their
/// denominator is empty.
struct Metrics {
    double accuracy = 0.0;
    std::optional<double> tpr;
    std::optional<double> tnr;
};

/// Throws std::invalid_argument when total() is zero.
Metrics compute_metrics(const ConfusionCounts& counts);

/// Thresholds probabilities at exactly 0.5 (p >= 0.5 predicts class 1)
/// and tallies against labels.
template <typename T>
ConfusionCounts counts_from_predictions(std::span<const T> probs, std::span<const std::uint8_t> labels) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        bool predicted_one = probs[i] >= static_cast<T>(0.5);
        if (labels[i] == kPositiveLabel) {
            predicted_one ? ++c.fn : ++c.tp;
        } else {
            predicted_one ? ++c.tn : ++c.fp;
        }
    }
    return c;
}

} // namespace mcw::eval
