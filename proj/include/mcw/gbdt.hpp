#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mcw/dataset.hpp"
#include "mcw/metrics.hpp"
#include "mcw/train.hpp"

namespace mcw::gbdt {

struct FeatureMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<float> values; // row-major
    std::vector<std::uint8_t> labels;

    void validate() const;
};

/// Flatten-layer activations of the frozen distinguisher, one row per record.
FeatureMatrix extract_features(const nn::TrainedModel& model, const data::Dataset& ds);

// feature file: magic "MCFT", version, row/col counts, labels, f32 rows
void save_features(const FeatureMatrix& fm, const std::filesystem::path& path);
FeatureMatrix load_features(const std::filesystem::path& path);

struct GbdtHyperParams {
    double lambda = 1.0;
    double alpha = 0.0;
    int max_depth = 4;
    int n_estimators = 100;
    double learning_rate = 0.3;
    double subsample = 1.0;
    double colsample_bytree = 1.0;
    double gamma = 0.0;
    double min_child_weight = 1.0;
    double reg_alpha = 0.0;
    double reg_lambda = 0.0;

    // the search space lists both names; they act as one effective term
    double l2() const { return lambda + reg_lambda; }
    double l1() const { return alpha + reg_alpha; }

    void validate() const;
    bool operator==(const GbdtHyperParams&) const = default;
};

struct TreeNode {
    std::int32_t feature = -1; // -1 marks a leaf
    float threshold = 0.0f;
    std::int32_t left = -1, right = -1;
    double value = 0.0; // leaf weight, unshrunk log-odds contribution

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Nodes in preorder, root at index 0.
struct RegressionTree {
    std::vector<TreeNode> nodes;

    double eval(const float* row) const;
    int depth() const;
    bool operator==(const RegressionTree&) const = default;
};

/// prediction = sigmoid(base_score + learning_rate * sum of tree outputs)
struct BoostedEnsemble {
    std::size_t feature_dim = 0;
    double base_score = 0.0; // log-odds
    double learning_rate = 0.3;
    GbdtHyperParams params;
    std::vector<RegressionTree> trees;

    bool operator==(const BoostedEnsemble&) const = default;
};

/// Second-order boosting of logistic loss with exact greedy splits.
/// Supports one round at a time for tuning checkpoints.
class GbdtTrainer {
public:
    GbdtTrainer(const FeatureMatrix& train, const GbdtHyperParams& hp, std::uint64_t seed);

    void boost_round();
    int rounds_done() const { return static_cast<int>(ensemble_.trees.size()); }
    double train_logloss() const;
    const BoostedEnsemble& ensemble() const { return ensemble_; }

private:
    const FeatureMatrix& train_;
    GbdtHyperParams hp_;
    std::uint64_t seed_;
    BoostedEnsemble ensemble_;
    std::vector<std::vector<std::uint32_t>> sorted_; // per feature, rows by ascending value
    std::vector<double> margins_;
    std::vector<double> grad_, hess_;
};

BoostedEnsemble fit_gbdt(const FeatureMatrix& features, const GbdtHyperParams& hp, std::uint64_t seed);

std::vector<double> predict_margin(const BoostedEnsemble& ens, const FeatureMatrix& features);
std::vector<double> predict_proba(const BoostedEnsemble& ens, const FeatureMatrix& features);
/// Labels thresholded at exactly 0.5.
std::vector<std::uint8_t> predict_labels(const BoostedEnsemble& ens, const FeatureMatrix& features);

eval::ConfusionCounts evaluate_ensemble(const BoostedEnsemble& ens, const FeatureMatrix& features);

double logloss(const BoostedEnsemble& ens, const FeatureMatrix& features);

// ensemble file: magic "MCGB", version, hyperparameters, base score,
// preorder node records per tree
void save_ensemble(const BoostedEnsemble& ens, const std::filesystem::path& path);
BoostedEnsemble load_ensemble(const std::filesystem::path& path);

} // namespace mcw::gbdt
