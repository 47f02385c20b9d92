#include "mcw/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "mcw/errors.hpp"
#include "mcw/rng.hpp"

namespace mcw::gbdt {

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// L1 soft-threshold of the gradient sum
double threshold_l1(double g, double a) {
    if (g > a) return g - a;
    if (g < -a) return g + a;
    return 0.0;
}

double leaf_score(double g, double h, double l1, double l2) {
    double t = threshold_l1(g, l1);
    return t * t / (h + l2);
}

double leaf_weight(double g, double h, double l1, double l2) {
    return -threshold_l1(g, l1) / (h + l2);
}

struct SplitChoice {
    double gain = 0.0;
    std::int32_t feature = -1;
    float threshold = 0.0f;
};

} // namespace

void FeatureMatrix::validate() const {
    if (values.size() != rows * cols) throw ConfigError("feature matrix size mismatch");
    if (labels.size() != rows) throw ConfigError("feature labels must align with rows");
    for (float v : values) {
        if (!std::isfinite(v)) throw ConfigError("feature matrix contains non-finite values");
    }
}

void GbdtHyperParams::validate() const {
    if (max_depth < 1) throw ConfigError("max_depth must be positive");
    if (n_estimators < 1) throw ConfigError("n_estimators must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("subsample must be in (0, 1]");
    if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0)) {
        throw ConfigError("colsample_bytree must be in (0, 1]");
    }
    if (lambda < 0 || alpha < 0 || reg_alpha < 0 || reg_lambda < 0 || gamma < 0 || min_child_weight < 0) {
        throw ConfigError("regularization terms must be non-negative");
    }
}

FeatureMatrix extract_features(const nn::TrainedModel& model, const data::Dataset& ds) {
    if (ds.records.empty()) throw ConfigError("cannot extract features from an empty dataset");
    constexpr std::size_t kBatch = 8192;
    FeatureMatrix fm;
    fm.rows = ds.records.size();
    fm.cols = static_cast<std::size_t>(model.config.flatten_dim());
    fm.values.resize(fm.rows * fm.cols);
    fm.labels = nn::labels_from_records(ds.records);

    for (std::size_t start = 0; start < fm.rows; start += kBatch) {
        std::size_t stop = std::min(fm.rows, start + kBatch);
        auto batch = nn::batch_from_records<float>(
            {ds.records.data() + start, stop - start});
        auto flat = nn::flatten_activations(model.config, model.params, batch);
        std::copy(flat.begin(), flat.end(), fm.values.begin() + static_cast<std::ptrdiff_t>(start * fm.cols));
    }
    return fm;
}

void save_features(const FeatureMatrix& fm, const std::filesystem::path& path) {
    fm.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write("MCFT", 4);
    std::uint16_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 2);
    std::uint64_t rows = fm.rows;
    std::uint32_t cols = static_cast<std::uint32_t>(fm.cols);
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    out.write(reinterpret_cast<const char*>(fm.labels.data()), static_cast<std::streamsize>(fm.labels.size()));
    out.write(reinterpret_cast<const char*>(fm.values.data()),
              static_cast<std::streamsize>(fm.values.size() * 4));
    if (!out) throw IoError("write failed: " + path.string());
}

FeatureMatrix load_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    auto need = [&](void* dst, std::size_t n) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) {
            throw FormatError(FormatError::Kind::truncated, "feature file truncated: " + path.string());
        }
    };
    char magic[4];
    need(magic, 4);
    if (std::memcmp(magic, "MCFT", 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "not a feature file: " + path.string());
    }
    std::uint16_t version;
    need(&version, 2);
    if (version != 1) {
        throw FormatError(FormatError::Kind::bad_version, "unsupported feature file version");
    }
    FeatureMatrix fm;
    std::uint64_t rows;
    std::uint32_t cols;
    need(&rows, 8);
    need(&cols, 4);
    fm.rows = rows;
    fm.cols = cols;
    fm.labels.resize(fm.rows);
    need(fm.labels.data(), fm.labels.size());
    fm.values.resize(fm.rows * fm.cols);
    need(fm.values.data(), fm.values.size() * 4);
    fm.validate();
    return fm;
}

double RegressionTree::eval(const float* row) const {
    std::int32_t i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
        const TreeNode& n = nodes[static_cast<std::size_t>(i)];
        i = row[n.feature] < n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
}

int RegressionTree::depth() const {
    // nodes are preorder; walk explicitly
    int max_d = 0;
    std::vector<std::pair<std::int32_t, int>> stack{{0, 0}};
    while (!stack.empty()) {
        auto [i, d] = stack.back();
        stack.pop_back();
        max_d = std::max(max_d, d);
        const TreeNode& n = nodes[static_cast<std::size_t>(i)];
        if (!n.is_leaf()) {
            stack.push_back({n.left, d + 1});
            stack.push_back({n.right, d + 1});
        }
    }
    return max_d;
}

GbdtTrainer::GbdtTrainer(const FeatureMatrix& train, const GbdtHyperParams& hp, std::uint64_t seed)
    : train_(train), hp_(hp), seed_(seed) {
    train.validate();
    hp.validate();
    if (train.rows < 2) throw std::invalid_argument("gbdt training needs at least 2 rows");
    bool has0 = false, has1 = false;
    for (std::uint8_t l : train.labels) (l == 0 ? has0 : has1) = true;
    if (!has0 || !has1) throw std::invalid_argument("degenerate labels: both classes must be present");

    ensemble_.feature_dim = train.cols;
    ensemble_.base_score = 0.0;
    ensemble_.learning_rate = hp.learning_rate;
    ensemble_.params = hp;

    sorted_.resize(train.cols);
    for (std::size_t f = 0; f < train.cols; ++f) {
        auto& order = sorted_[f];
        order.resize(train.rows);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return train.values[a * train.cols + f] < train.values[b * train.cols + f];
        });
    }
    margins_.assign(train.rows, ensemble_.base_score);
    grad_.resize(train.rows);
    hess_.resize(train.rows);
}

void GbdtTrainer::boost_round() {
    const std::size_t rows = train_.rows;
    const std::size_t cols = train_.cols;
    const double l1 = hp_.l1();
    const double l2 = hp_.l2();
    const int round = rounds_done();

    for (std::size_t i = 0; i < rows; ++i) {
        double p = sigmoid(margins_[i]);
        double y = train_.labels[i] != 0 ? 1.0 : 0.0;
        grad_[i] = p - y;
        hess_[i] = p * (1.0 - p);
    }

    // row subsample: Bernoulli per row from a per-round stream
    std::vector<char> in_sample(rows, 1);
    if (hp_.subsample < 1.0) {
        SplitMix64 rng(substream_seed(seed_, "rowsample", static_cast<std::uint64_t>(round)));
        for (std::size_t i = 0; i < rows; ++i) in_sample[i] = rng.next_unit() < hp_.subsample ? 1 : 0;
    }

    // feature subsample per tree, kept in ascending order for the tie rules
    std::vector<std::uint32_t> features(cols);
    std::iota(features.begin(), features.end(), 0u);
    if (hp_.colsample_bytree < 1.0) {
        SplitMix64 rng(substream_seed(seed_, "colsample", static_cast<std::uint64_t>(round)));
        deterministic_shuffle(features, rng);
        std::size_t keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(hp_.colsample_bytree * static_cast<double>(cols))));
        features.resize(keep);
        std::sort(features.begin(), features.end());
    }

    RegressionTree tree;
    std::vector<char> in_node(rows, 0);

    // recursive exact greedy growth; nodes appended in preorder
    auto grow = [&](auto&& self, std::vector<std::uint32_t>& node_rows, int depth) -> std::int32_t {
        double g_sum = 0.0, h_sum = 0.0;
        for (std::uint32_t r : node_rows) {
            g_sum += grad_[r];
            h_sum += hess_[r];
        }

        std::int32_t index = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes.back().value = leaf_weight(g_sum, h_sum, l1, l2);
        if (depth >= hp_.max_depth || node_rows.size() < 2) return index;

        for (std::uint32_t r : node_rows) in_node[r] = 1;
        const double parent_score = leaf_score(g_sum, h_sum, l1, l2);
        SplitChoice best;

        for (std::uint32_t f : features) {
            const auto& order = sorted_[f];
            double gl = 0.0, hl = 0.0;
            double prev_value = 0.0;
            bool have_prev = false;
            for (std::uint32_t r : order) {
                if (!in_node[r]) continue;
                double v = train_.values[r * cols + f];
                if (have_prev && v > prev_value) {
                    double gr = g_sum - gl, hr = h_sum - hl;
                    if (hl >= hp_.min_child_weight && hr >= hp_.min_child_weight) {
                        double gain = 0.5 * (leaf_score(gl, hl, l1, l2) + leaf_score(gr, hr, l1, l2) -
                                             parent_score) -
                                      hp_.gamma;
                        if (gain > best.gain) {
                            best.gain = gain;
                            best.feature = static_cast<std::int32_t>(f);
                            best.threshold = static_cast<float>(0.5 * (prev_value + v));
                        }
                    }
                }
                gl += grad_[r];
                hl += hess_[r];
                prev_value = v;
                have_prev = true;
            }
        }
        for (std::uint32_t r : node_rows) in_node[r] = 0;

        if (best.feature < 0 || !(best.gain > 0.0)) return index;

        std::vector<std::uint32_t> left_rows, right_rows;
        for (std::uint32_t r : node_rows) {
            if (train_.values[r * cols + static_cast<std::size_t>(best.feature)] < best.threshold) {
                left_rows.push_back(r);
            } else {
                right_rows.push_back(r);
            }
        }
        node_rows.clear();
        node_rows.shrink_to_fit();

        tree.nodes[static_cast<std::size_t>(index)].feature = best.feature;
        tree.nodes[static_cast<std::size_t>(index)].threshold = best.threshold;
        std::int32_t left = self(self, left_rows, depth + 1);
        std::int32_t right = self(self, right_rows, depth + 1);
        tree.nodes[static_cast<std::size_t>(index)].left = left;
        tree.nodes[static_cast<std::size_t>(index)].right = right;
        return index;
    };

    std::vector<std::uint32_t> root_rows;
    root_rows.reserve(rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
        if (in_sample[r]) root_rows.push_back(r);
    }
    if (root_rows.empty()) root_rows.push_back(0);
    grow(grow, root_rows, 0);

    for (std::size_t i = 0; i < rows; ++i) {
        margins_[i] += ensemble_.learning_rate * tree.eval(&train_.values[i * cols]);
    }
    ensemble_.trees.push_back(std::move(tree));
}

double GbdtTrainer::train_logloss() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < train_.rows; ++i) {
        double p = sigmoid(margins_[i]);
        p = std::min(std::max(p, 1e-15), 1.0 - 1e-15);
        acc += train_.labels[i] != 0 ? -std::log(p) : -std::log1p(-p);
    }
    return acc / static_cast<double>(train_.rows);
}

BoostedEnsemble fit_gbdt(const FeatureMatrix& features, const GbdtHyperParams& hp, std::uint64_t seed) {
    GbdtTrainer trainer(features, hp, seed);
    for (int r = 0; r < hp.n_estimators; ++r) trainer.boost_round();
    return trainer.ensemble();
}

std::vector<double> predict_margin(const BoostedEnsemble& ens, const FeatureMatrix& features) {
    if (features.cols != ens.feature_dim) {
        throw IncompatibleError("feature dimension does not match the trained ensemble");
    }
    std::vector<double> out(features.rows, ens.base_score);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const float* row = &features.values[i * features.cols];
        double sum = 0.0;
        for (const auto& tree : ens.trees) sum += tree.eval(row);
        out[i] += ens.learning_rate * sum;
    }
    return out;
}

std::vector<double> predict_proba(const BoostedEnsemble& ens, const FeatureMatrix& features) {
    std::vector<double> out = predict_margin(ens, features);
    for (auto& v : out) v = sigmoid(v);
    return out;
}

std::vector<std::uint8_t> predict_labels(const BoostedEnsemble& ens, const FeatureMatrix& features) {
    std::vector<double> probs = predict_proba(ens, features);
    std::vector<std::uint8_t> labels(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) labels[i] = probs[i] >= 0.5 ? 1 : 0;
    return labels;
}

eval::ConfusionCounts evaluate_ensemble(const BoostedEnsemble& ens, const FeatureMatrix& features) {
    std::vector<double> probs = predict_proba(ens, features);
    return eval::counts_from_predictions<double>(probs, features.labels);
}

double logloss(const BoostedEnsemble& ens, const FeatureMatrix& features) {
    std::vector<double> probs = predict_proba(ens, features);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double p = std::min(std::max(probs[i], 1e-15), 1.0 - 1e-15);
        acc += features.labels[i] != 0 ? -std::log(p) : -std::log1p(-p);
    }
    return acc / static_cast<double>(probs.size());
}

void save_ensemble(const BoostedEnsemble& ens, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };

    out.write("MCGB", 4);
    std::uint16_t version = 1;
    put(version);
    std::uint64_t dim = ens.feature_dim;
    put(dim);
    put(ens.base_score);
    put(ens.learning_rate);

    const GbdtHyperParams& h = ens.params;
    put(h.lambda);
    put(h.alpha);
    std::int32_t depth = h.max_depth, n_est = h.n_estimators;
    put(depth);
    put(n_est);
    put(h.learning_rate);
    put(h.subsample);
    put(h.colsample_bytree);
    put(h.gamma);
    put(h.min_child_weight);
    put(h.reg_alpha);
    put(h.reg_lambda);

    std::uint32_t n_trees = static_cast<std::uint32_t>(ens.trees.size());
    put(n_trees);
    for (const auto& tree : ens.trees) {
        std::uint32_t n_nodes = static_cast<std::uint32_t>(tree.nodes.size());
        put(n_nodes);
        for (const auto& n : tree.nodes) {
            put(n.feature);
            put(n.threshold);
            put(n.left);
            put(n.right);
            put(n.value);
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

BoostedEnsemble load_ensemble(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    auto need = [&](void* dst, std::size_t n) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) {
            throw FormatError(FormatError::Kind::truncated, "ensemble file truncated: " + path.string());
        }
    };
    auto get = [&](auto& v) { need(&v, sizeof v); };

    char magic[4];
    need(magic, 4);
    if (std::memcmp(magic, "MCGB", 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "not an ensemble file: " + path.string());
    }
    std::uint16_t version;
    get(version);
    if (version != 1) {
        throw FormatError(FormatError::Kind::bad_version, "unsupported ensemble version");
    }

    BoostedEnsemble ens;
    std::uint64_t dim;
    get(dim);
    ens.feature_dim = dim;
    get(ens.base_score);
    get(ens.learning_rate);

    GbdtHyperParams& h = ens.params;
    get(h.lambda);
    get(h.alpha);
    std::int32_t depth, n_est;
    get(depth);
    get(n_est);
    h.max_depth = depth;
    h.n_estimators = n_est;
    get(h.learning_rate);
    get(h.subsample);
    get(h.colsample_bytree);
    get(h.gamma);
    get(h.min_child_weight);
    get(h.reg_alpha);
    get(h.reg_lambda);

    std::uint32_t n_trees;
    get(n_trees);
    ens.trees.resize(n_trees);
    for (auto& tree : ens.trees) {
        std::uint32_t n_nodes;
        get(n_nodes);
        tree.nodes.resize(n_nodes);
        for (auto& n : tree.nodes) {
            get(n.feature);
            get(n.threshold);
            get(n.left);
            get(n.right);
            get(n.value);
            if (!n.is_leaf() && ens.feature_dim > 0 &&
                n.feature >= static_cast<std::int32_t>(ens.feature_dim)) {
                throw FormatError(FormatError::Kind::inconsistent, "tree references missing feature");
            }
        }
    }
    return ens;
}

} // namespace mcw::gbdt
