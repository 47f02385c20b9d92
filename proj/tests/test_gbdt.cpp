#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mcw/errors.hpp"
#include "mcw/gbdt.hpp"
#include "mcw/rng.hpp"

using namespace mcw;
using namespace mcw::gbdt;

namespace {

FeatureMatrix make_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    FeatureMatrix fm;
    fm.rows = rows;
    fm.cols = cols;
    fm.values.resize(rows * cols);
    fm.labels.resize(rows);
    SplitMix64 rng(seed);
    for (auto& v : fm.values) v = static_cast<float>(rng.next_unit() * 2.0 - 1.0);
    for (auto& l : fm.labels) l = static_cast<std::uint8_t>(rng.next() & 1);
    return fm;
}

// independently coded second-order stump search over all features and all
// midpoints, same regularized objective
struct StumpOracle {
    int feature = -1;
    double threshold = 0.0;
    double left_weight = 0.0, right_weight = 0.0;
};

double oracle_t1(double g, double a) { return g > a ? g - a : (g < -a ? g + a : 0.0); }
double oracle_score(double g, double h, double a, double l) {
    double t = oracle_t1(g, a);
    return t * t / (h + l);
}

StumpOracle brute_force_stump(const FeatureMatrix& fm, const GbdtHyperParams& hp) {
    std::vector<double> g(fm.rows), h(fm.rows);
    for (std::size_t i = 0; i < fm.rows; ++i) {
        g[i] = 0.5 - (fm.labels[i] != 0 ? 1.0 : 0.0);
        h[i] = 0.25;
    }
    double g_all = 0, h_all = 0;
    for (std::size_t i = 0; i < fm.rows; ++i) {
        g_all += g[i];
        h_all += h[i];
    }
    const double a = hp.alpha + hp.reg_alpha, l = hp.lambda + hp.reg_lambda;
    double best_gain = 0.0;
    StumpOracle best;
    for (std::size_t f = 0; f < fm.cols; ++f) {
        std::vector<double> values;
        for (std::size_t i = 0; i < fm.rows; ++i) values.push_back(fm.values[i * fm.cols + f]);
        std::vector<double> uniq = values;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (std::size_t k = 0; k + 1 < uniq.size(); ++k) {
            double thr = 0.5 * (uniq[k] + uniq[k + 1]);
            double gl = 0, hl = 0;
            for (std::size_t i = 0; i < fm.rows; ++i) {
                if (values[i] < thr) {
                    gl += g[i];
                    hl += h[i];
                }
            }
            double gr = g_all - gl, hr = h_all - hl;
            if (hl < hp.min_child_weight || hr < hp.min_child_weight) continue;
            double gain = 0.5 * (oracle_score(gl, hl, a, l) + oracle_score(gr, hr, a, l) -
                                 oracle_score(g_all, h_all, a, l)) -
                          hp.gamma;
            if (gain > best_gain) {
                best_gain = gain;
                best.feature = static_cast<int>(f);
                best.threshold = thr;
                best.left_weight = -oracle_t1(gl, a) / (hl + l);
                best.right_weight = -oracle_t1(gr, a) / (hr + l);
            }
        }
    }
    return best;
}

// independent recursive interpreter for the prediction oracle
double walk_tree(const RegressionTree& t, std::size_t node, const float* row) {
    const TreeNode& n = t.nodes[node];
    if (n.is_leaf()) return n.value;
    if (row[n.feature] < n.threshold) return walk_tree(t, static_cast<std::size_t>(n.left), row);
    return walk_tree(t, static_cast<std::size_t>(n.right), row);
}

RegressionTree random_tree(SplitMix64& rng, std::size_t cols, int depth_left) {
    RegressionTree t;
    auto build = [&](auto&& self, int d) -> std::int32_t {
        std::int32_t idx = static_cast<std::int32_t>(t.nodes.size());
        t.nodes.push_back(TreeNode{});
        if (d == 0 || rng.next_unit() < 0.3) {
            t.nodes[static_cast<std::size_t>(idx)].value = rng.next_unit() * 2.0 - 1.0;
            return idx;
        }
        t.nodes[static_cast<std::size_t>(idx)].feature = static_cast<std::int32_t>(rng.next_below(cols));
        t.nodes[static_cast<std::size_t>(idx)].threshold = static_cast<float>(rng.next_unit() - 0.5);
        std::int32_t l = self(self, d - 1);
        std::int32_t r = self(self, d - 1);
        t.nodes[static_cast<std::size_t>(idx)].left = l;
        t.nodes[static_cast<std::size_t>(idx)].right = r;
        return idx;
    };
    build(build, depth_left);
    return t;
}

} // namespace

TEST_CASE("single stump separates two clusters") {
    FeatureMatrix fm;
    fm.rows = 10;
    fm.cols = 1;
    for (int i = 0; i < 10; ++i) {
        fm.values.push_back(i < 5 ? -1.0f - 0.1f * static_cast<float>(i) : 1.0f + 0.1f * static_cast<float>(i));
        fm.labels.push_back(i < 5 ? 0 : 1);
    }
    GbdtHyperParams hp;
    hp.max_depth = 1;
    hp.n_estimators = 1;
    hp.learning_rate = 1.0;
    auto ens = fit_gbdt(fm, hp, 0);
    auto labels = predict_labels(ens, fm);
    CHECK(labels == fm.labels);
}

TEST_CASE("depth-1 fit matches the exhaustive stump oracle") {
    SplitMix64 seeds(99);
    for (int trial = 0; trial < 20; ++trial) {
        auto fm = make_matrix(8, 3, seeds.next());
        bool has0 = false, has1 = false;
        for (auto l : fm.labels) (l == 0 ? has0 : has1) = true;
        if (!has0 || !has1) continue;

        GbdtHyperParams hp;
        hp.max_depth = 1;
        hp.n_estimators = 1;
        hp.lambda = 0.7;
        hp.reg_lambda = 0.05;
        hp.alpha = 0.01;
        hp.reg_alpha = 0.02;
        hp.gamma = 1e-4;
        hp.min_child_weight = 0.25;

        auto oracle = brute_force_stump(fm, hp);
        auto ens = fit_gbdt(fm, hp, 1);
        const auto& tree = ens.trees[0];

        if (oracle.feature < 0) {
            CHECK(tree.nodes[0].is_leaf());
            continue;
        }
        REQUIRE(!tree.nodes[0].is_leaf());
        CHECK(tree.nodes[0].feature == oracle.feature);
        CHECK(tree.nodes[0].threshold == doctest::Approx(oracle.threshold).epsilon(1e-6));
        CHECK(tree.nodes[static_cast<std::size_t>(tree.nodes[0].left)].value ==
              doctest::Approx(oracle.left_weight).epsilon(1e-12));
        CHECK(tree.nodes[static_cast<std::size_t>(tree.nodes[0].right)].value ==
              doctest::Approx(oracle.right_weight).epsilon(1e-12));
    }
}

TEST_CASE("full-batch training logloss never increases") {
    auto fm = make_matrix(300, 6, 5);
    GbdtHyperParams hp;
    hp.max_depth = 3;
    hp.n_estimators = 1;
    GbdtTrainer trainer(fm, hp, 7);
    double prev = trainer.train_logloss();
    for (int r = 0; r < 100; ++r) {
        trainer.boost_round();
        double cur = trainer.train_logloss();
        REQUIRE(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("prediction matches an independent tree interpreter") {
    SplitMix64 rng(17);
    BoostedEnsemble ens;
    ens.feature_dim = 5;
    ens.base_score = 0.2;
    ens.learning_rate = 0.4;
    for (int t = 0; t < 8; ++t) ens.trees.push_back(random_tree(rng, 5, 4));

    auto fm = make_matrix(64, 5, 23);
    auto margins = predict_margin(ens, fm);
    for (std::size_t i = 0; i < fm.rows; ++i) {
        double expected = ens.base_score;
        double sum = 0;
        for (const auto& t : ens.trees) sum += walk_tree(t, 0, &fm.values[i * fm.cols]);
        expected += ens.learning_rate * sum;
        REQUIRE(margins[i] == doctest::Approx(expected).epsilon(1e-12));
    }

    auto probs = predict_proba(ens, fm);
    for (double p : probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("empty and trivial ensembles fall back to the base score") {
    BoostedEnsemble ens;
    ens.feature_dim = 2;
    ens.base_score = -0.3;
    auto fm = make_matrix(4, 2, 31);
    for (double m : predict_margin(ens, fm)) CHECK(m == -0.3);

    RegressionTree zero;
    zero.nodes.push_back(TreeNode{0, 0.0f, 1, 2, 0.0});
    zero.nodes.push_back(TreeNode{});
    zero.nodes.push_back(TreeNode{});
    ens.trees.push_back(zero);
    for (double m : predict_margin(ens, fm)) CHECK(m == -0.3);
}

TEST_CASE("depth bound and child hessian mass are honored") {
    auto fm = make_matrix(200, 4, 37);
    GbdtHyperParams hp;
    hp.max_depth = 3;
    hp.n_estimators = 5;
    hp.min_child_weight = 1.0; // needs >= 4 rows per child at hessian 0.25
    auto ens = fit_gbdt(fm, hp, 3);
    for (const auto& tree : ens.trees) CHECK(tree.depth() <= 3);

    // first tree grows on uniform hessians of 0.25, so leaf row counts bound the mass
    const auto& tree = ens.trees[0];
    std::vector<int> rows_in_leaf(tree.nodes.size(), 0);
    for (std::size_t i = 0; i < fm.rows; ++i) {
        std::int32_t n = 0;
        while (!tree.nodes[static_cast<std::size_t>(n)].is_leaf()) {
            const auto& node = tree.nodes[static_cast<std::size_t>(n)];
            n = fm.values[i * fm.cols + static_cast<std::size_t>(node.feature)] < node.threshold
                    ? node.left
                    : node.right;
        }
        ++rows_in_leaf[static_cast<std::size_t>(n)];
    }
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        if (tree.nodes[n].is_leaf() && n != 0 && tree.nodes.size() > 1) {
            CHECK(0.25 * rows_in_leaf[n] >= hp.min_child_weight);
        }
    }
}

TEST_CASE("subsampling is deterministic per seed") {
    auto fm = make_matrix(120, 4, 41);
    GbdtHyperParams hp;
    hp.max_depth = 3;
    hp.n_estimators = 10;
    hp.subsample = 0.7;
    hp.colsample_bytree = 0.6;
    auto a = fit_gbdt(fm, hp, 11);
    auto b = fit_gbdt(fm, hp, 11);
    CHECK(a == b);
    auto c = fit_gbdt(fm, hp, 12);
    CHECK(!(a == c));
}

TEST_CASE("input validation") {
    auto fm = make_matrix(10, 2, 43);
    GbdtHyperParams hp;
    std::fill(fm.labels.begin(), fm.labels.end(), std::uint8_t{1});
    CHECK_THROWS_AS(fit_gbdt(fm, hp, 0), std::invalid_argument);

    auto good = make_matrix(10, 2, 47);
    good.labels[0] = 0;
    good.labels[1] = 1;
    hp.n_estimators = 2;
    auto ens = fit_gbdt(good, hp, 0);
    auto wrong_dim = make_matrix(4, 3, 51);
    CHECK_THROWS_AS(predict_margin(ens, wrong_dim), IncompatibleError);
}

TEST_CASE("ensemble files roundtrip") {
    auto fm = make_matrix(60, 3, 53);
    fm.labels[0] = 0;
    fm.labels[1] = 1;
    GbdtHyperParams hp;
    hp.max_depth = 3;
    hp.n_estimators = 7;
    hp.subsample = 0.9;
    auto ens = fit_gbdt(fm, hp, 9);

    auto path = std::filesystem::temp_directory_path() / "mcw_test_ens.mcgb";
    save_ensemble(ens, path);
    auto loaded = load_ensemble(path);
    CHECK(loaded == ens);

    // errors
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto write_bytes = [&](const std::string& s) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    std::string bad = bytes;
    bad[1] = 'x';
    write_bytes(bad);
    CHECK_THROWS_AS(load_ensemble(path), FormatError);
    write_bytes(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_ensemble(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("feature extraction is frozen and shape-correct") {
    nn::ModelConfig cfg;
    cfg.block1_filters = 4;
    cfg.residual_blocks = 1;
    cfg.dense_widths = {6, 5};

    nn::TrainedModel model;
    model.config = cfg;
    model.params = nn::init_params(cfg, 77);

    data::GeneratorConfig gen;
    gen.key = data::default_keys().first;
    gen.key_id = data::KeyId::k1;
    gen.rounds = 5;
    gen.samples_per_class = 30;
    gen.seed = 4;
    auto ds = data::generate_dataset(gen);

    std::uint64_t before = nn::param_hash(model.params);
    auto fm = extract_features(model, ds);
    auto fm2 = extract_features(model, ds);
    CHECK(nn::param_hash(model.params) == before);

    CHECK(fm.rows == 60);
    CHECK(fm.cols == 16u * 4u);
    CHECK(fm.values == fm2.values);
    CHECK(fm.labels == fm2.labels);

    // identical ciphertexts map to identical feature rows
    data::Dataset twin = ds;
    twin.records[1] = twin.records[0];
    auto fm3 = extract_features(model, twin);
    for (std::size_t c = 0; c < fm3.cols; ++c) {
        REQUIRE(fm3.values[0 * fm3.cols + c] == fm3.values[1 * fm3.cols + c]);
    }

    // feature files roundtrip
    auto path = std::filesystem::temp_directory_path() / "mcw_test_feat.mcft";
    save_features(fm, path);
    auto loaded = load_features(path);
    CHECK(loaded.rows == fm.rows);
    CHECK(loaded.cols == fm.cols);
    CHECK(loaded.values == fm.values);
    CHECK(loaded.labels == fm.labels);
    std::filesystem::remove(path);
}
