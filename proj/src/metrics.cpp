#include "mcw/metrics.hpp"

#include <stdexcept>

namespace mcw::eval {

Metrics compute_metrics(const ConfusionCounts& counts) {
    const std::uint64_t total = counts.total();
    if (total == 0) throw std::invalid_argument("compute_metrics: empty confusion counts");
    Metrics m;
    m.accuracy = static_cast<double>(counts.tp + counts.tn) / static_cast<double>(total);
    if (counts.tp + counts.fn > 0) {
        m.tpr = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
    }
    if (counts.tn + counts.fp > 0) {
        m.tnr = static_cast<double>(counts.tn) / static_cast<double>(counts.tn + counts.fp);
    }
    return m;
}

} // namespace mcw::eval
