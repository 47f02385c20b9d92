#include "doctest.h"

#include "mcw/rng.hpp"
#include "mcw/tune.hpp"

using namespace mcw;
using namespace mcw::gbdt;

namespace {

FeatureMatrix separable_matrix(std::size_t per_class, std::uint64_t seed) {
    FeatureMatrix fm;
    fm.rows = 2 * per_class;
    fm.cols = 4;
    fm.values.resize(fm.rows * fm.cols);
    fm.labels.resize(fm.rows);
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < fm.rows; ++i) {
        std::uint8_t label = i < per_class ? 0 : 1;
        fm.labels[i] = label;
        double shift = label == 0 ? -1.0 : 1.0;
        for (std::size_t c = 0; c < fm.cols; ++c) {
            fm.values[i * fm.cols + c] = static_cast<float>(shift + 0.5 * (rng.next_unit() - 0.5));
        }
    }
    return fm;
}

} // namespace

TEST_CASE("hyperparameter draws stay inside the search table") {
    SearchSpace space;
    SplitMix64 rng(1);
    bool saw_depth[10] = {};
    for (int i = 0; i < 10000; ++i) {
        auto hp = sample_hyperparams(space, rng);
        REQUIRE(space.contains(hp));
        REQUIRE(hp.max_depth >= 3);
        REQUIRE(hp.max_depth <= 9);
        REQUIRE(hp.n_estimators >= 50);
        REQUIRE(hp.n_estimators <= 1000);
        REQUIRE(hp.lambda >= 0.001);
        REQUIRE(hp.lambda <= 10.0);
        saw_depth[hp.max_depth] = true;
    }
    for (int d = 3; d <= 9; ++d) CHECK(saw_depth[d]);
}

TEST_CASE("median pruner semantics") {
    MedianPruner pruner;
    // first checkpoint never prunes, and no completed peers means no pruning
    CHECK(!pruner.should_prune(0, 0.0));
    CHECK(!pruner.should_prune(1, 0.0));

    pruner.record_completed_trial({0.80, 0.90, 0.95});
    pruner.record_completed_trial({0.70, 0.85, 0.96});

    // median at checkpoint 1 is 0.875
    CHECK(pruner.should_prune(1, 0.60));
    CHECK(pruner.should_prune(1, 0.874));
    CHECK(!pruner.should_prune(1, 0.875)); // strictly below prunes, equal does not
    CHECK(!pruner.should_prune(1, 0.90));
    CHECK(!pruner.should_prune(0, 0.0001));

    // a trial dominated at every checkpoint by the two completed ones
    CHECK(pruner.should_prune(1, 0.5));
    CHECK(pruner.should_prune(2, 0.5));
}

TEST_CASE("single trial is never pruned and wins") {
    auto train = separable_matrix(40, 3);
    auto val = separable_matrix(20, 4);
    TuneConfig cfg;
    cfg.trials = 1;
    cfg.checkpoints = 3;
    cfg.seed = 5;
    cfg.space.n_estimators = {10, 20}; // keep the test quick
    auto result = tune(train, val, cfg);
    REQUIRE(result.trials.size() == 1);
    CHECK(!result.trials[0].pruned);
    REQUIRE(result.trials[0].final_score.has_value());
    CHECK(result.best_trial == 0);
    CHECK(result.best_score == *result.trials[0].final_score);
}

TEST_CASE("tuning is deterministic and best is the max over unpruned finals") {
    auto train = separable_matrix(40, 7);
    auto val = separable_matrix(20, 8);
    TuneConfig cfg;
    cfg.trials = 5;
    cfg.checkpoints = 3;
    cfg.seed = 21;
    cfg.space.n_estimators = {8, 16};

    auto a = tune(train, val, cfg);
    auto b = tune(train, val, cfg);
    REQUIRE(a.trials.size() == b.trials.size());
    for (std::size_t i = 0; i < a.trials.size(); ++i) {
        CHECK(a.trials[i].params == b.trials[i].params);
        CHECK(a.trials[i].checkpoint_scores == b.trials[i].checkpoint_scores);
        CHECK(a.trials[i].pruned == b.trials[i].pruned);
    }

    double best = -1.0;
    int best_id = -1;
    for (const auto& t : a.trials) {
        if (t.final_score && *t.final_score > best) {
            best = *t.final_score;
            best_id = t.id;
        }
        if (t.pruned) CHECK(!t.final_score.has_value());
    }
    CHECK(a.best_trial == best_id);
    CHECK(a.best_score == best);
}

TEST_CASE("trial csv export") {
    auto train = separable_matrix(30, 9);
    auto val = separable_matrix(15, 10);
    TuneConfig cfg;
    cfg.trials = 3;
    cfg.checkpoints = 2;
    cfg.seed = 2;
    cfg.space.n_estimators = {6, 10};
    auto result = tune(train, val, cfg);
    auto csv = trials_to_csv(result.trials);

    std::size_t lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
    CHECK(lines == result.trials.size() + 1);
    CHECK(csv.rfind("trial_id,lambda,alpha,max_depth,n_estimators,", 0) == 0);
}
