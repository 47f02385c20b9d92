#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcw/gbdt.hpp"
#include "mcw/rng.hpp"

namespace mcw::gbdt {

/// Randomized search bounds. Defaults are the fixed tuning table:
/// log-uniform draws except the two uniform fractions and the two
/// integer ranges.
struct SearchSpace {
    std::pair<double, double> lambda{0.001, 10.0};
    std::pair<double, double> alpha{0.001, 10.0};
    std::pair<int, int> max_depth{3, 9};
    std::pair<int, int> n_estimators{50, 1000};
    std::pair<double, double> learning_rate{0.01, 1.0};
    std::pair<double, double> subsample{0.5, 1.0};
    std::pair<double, double> colsample_bytree{0.5, 1.0};
    std::pair<double, double> gamma{1e-8, 1.0};
    std::pair<double, double> min_child_weight{1.0, 10.0};
    std::pair<double, double> reg_alpha{1e-8, 1.0};
    std::pair<double, double> reg_lambda{1e-8, 1.0};

    bool contains(const GbdtHyperParams& hp) const;
};

GbdtHyperParams sample_hyperparams(const SearchSpace& space, SplitMix64& rng);

/// A trial is terminated once a checkpoint score falls strictly below the
/// median of scores that completed trials reported at the same checkpoint;
/// the first checkpoint never prunes.
class MedianPruner {
public:
    bool should_prune(int checkpoint, double value) const;
    void record_completed_trial(const std::vector<double>& checkpoint_values);

private:
    std::vector<std::vector<double>> completed_;
};

struct TrialRecord {
    int id = 0;
    GbdtHyperParams params;
    std::vector<double> checkpoint_scores;
    std::optional<double> final_score; // absent iff pruned
    bool pruned = false;
};

struct TuneConfig {
    int trials = 50;
    int checkpoints = 5;
    std::uint64_t seed = 0;
    SearchSpace space;
};

struct TuneResult {
    GbdtHyperParams best_params;
    int best_trial = -1;
    double best_score = 0.0;
    std::vector<TrialRecord> trials;
};

/// Sequential randomized search maximizing validation accuracy, with
/// median pruning at evenly spaced tree-count checkpoints.
TuneResult tune(const FeatureMatrix& train, const FeatureMatrix& val, const TuneConfig& cfg);

std::string trials_to_csv(const std::vector<TrialRecord>& trials);

} // namespace mcw::gbdt
