// Acceptance suite: one pass/fail line per criterion, every tolerance
// pinned here. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <vector>

#include "mcw/dataset.hpp"
#include "mcw/gbdt.hpp"
#include "mcw/harness.hpp"
#include "mcw/metrics.hpp"
#include "mcw/net.hpp"
#include "mcw/rng.hpp"
#include "mcw/speck.hpp"
#include "mcw/train.hpp"
#include "mcw/tune.hpp"

using namespace mcw;

namespace {

// ---------------------------------------------------------------- criterion 1

// independent reference implementation of the cipher (in-place style with
// on-the-fly key expansion), kept apart from the library code it checks
void ref_mix(std::uint16_t& x, std::uint16_t& y, std::uint16_t k) {
    x = static_cast<std::uint16_t>((x >> 7) | (x << 9));
    x = static_cast<std::uint16_t>(x + y);
    x ^= k;
    y = static_cast<std::uint16_t>((y << 2) | (y >> 14));
    y ^= x;
}

std::uint32_t ref_encrypt(std::uint32_t pt, const std::array<std::uint16_t, 4>& key, int rounds) {
    std::uint16_t a = key[3];
    std::uint16_t b[3] = {key[2], key[1], key[0]};
    std::uint16_t x = static_cast<std::uint16_t>(pt >> 16);
    std::uint16_t y = static_cast<std::uint16_t>(pt & 0xffff);
    for (int i = 0; i < rounds; ++i) {
        ref_mix(x, y, a);
        ref_mix(b[i % 3], a, static_cast<std::uint16_t>(i));
    }
    return (static_cast<std::uint32_t>(x) << 16) | y;
}

bool criterion_cipher(std::ostream& log) {
    const speck::Key reference_key{{0x1918, 0x1110, 0x0908, 0x0100}};
    auto sched = speck::key_schedule(reference_key, 22);
    std::uint32_t ct = speck::to_u32(speck::encrypt_block(speck::block_from_u32(0x6574694c), sched));
    if (ct != 0xa86842f2) {
        log << "test vector mismatch: got " << std::hex << ct;
        return false;
    }
    if (ref_encrypt(0x6574694c, reference_key.words, 22) != 0xa86842f2) {
        log << "reference implementation disagrees with the published vector";
        return false;
    }

    SplitMix64 rng(101);
    for (int trial = 0; trial < 10000; ++trial) {
        speck::Key key;
        for (auto& w : key.words) w = static_cast<speck::Word>(rng.next());
        int rounds = 1 + static_cast<int>(rng.next_below(speck::kMaxRounds));
        std::uint32_t pt = static_cast<std::uint32_t>(rng.next());
        auto s = speck::key_schedule(key, rounds);
        speck::Block enc = speck::encrypt_block(speck::block_from_u32(pt), s);
        if (speck::to_u32(enc) != ref_encrypt(pt, key.words, rounds)) {
            log << "mismatch vs reference at trial " << trial;
            return false;
        }
        if (speck::to_u32(speck::decrypt_block(enc, s)) != pt) {
            log << "roundtrip failure at trial " << trial;
            return false;
        }
    }

    for (int trial = 0; trial < 1000; ++trial) {
        speck::Key key;
        for (auto& w : key.words) w = static_cast<speck::Word>(rng.next());
        int rounds = 1 + static_cast<int>(rng.next_below(speck::kMaxRounds));
        std::size_t len = 1 + rng.next_below(8);
        std::vector<speck::Block> pt(len);
        for (auto& b : pt) b = speck::block_from_u32(static_cast<std::uint32_t>(rng.next()));
        speck::Block iv = speck::block_from_u32(static_cast<std::uint32_t>(rng.next()));
        auto cbc = speck::cbc_encrypt(pt, key, rounds, iv);
        if (speck::cbc_decrypt(cbc, key, rounds) != pt) {
            log << "cbc roundtrip failure at trial " << trial;
            return false;
        }
    }
    log << "test vector, 10^4 block roundtrips vs reference, 10^3 cbc roundtrips";
    return true;
}

// ---------------------------------------------------------------- criterion 2

bool criterion_dataset_audit(std::ostream& log) {
    data::GeneratorConfig cfg;
    cfg.key = data::default_keys().first;
    cfg.key_id = data::KeyId::k1;
    cfg.rounds = 5;
    cfg.samples_per_class = 5000; // 10^4 records
    cfg.seed = 7;
    cfg.store_ivs = true;
    data::Dataset ds = data::generate_dataset(cfg);
    if (ds.records.size() != 10000) {
        log << "unexpected record count " << ds.records.size();
        return false;
    }
    if (!data::audit_roundtrip(ds)) {
        log << "a record failed to decrypt to its labeled message";
        return false;
    }
    log << "all 10^4 records decrypt to their labeled plaintexts";
    return true;
}

// ---------------------------------------------------------------- criterion 3

template <typename T>
nn::TensorT<T> random_bits_batch(std::size_t n, std::uint64_t seed) {
    nn::TensorT<T> t({n, 2, 16});
    SplitMix64 rng(seed);
    for (auto& v : t.data) v = static_cast<T>(rng.next() & 1);
    return t;
}

template <typename T>
std::vector<std::vector<T>*> weight_arrays(nn::ModelParamsT<T>& p) {
    std::vector<std::vector<T>*> out;
    nn::visit_params(p, [&](std::vector<T>& arr, nn::ArrayKind kind) {
        if (kind == nn::ArrayKind::weights) out.push_back(&arr);
    });
    return out;
}

double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// worst relative error of backward() vs central differences; the finite
// differences always run on the 64-bit copy as the low-noise reference
template <typename T>
double gradcheck_worst(const nn::ModelConfig& cfg, const nn::ModelParamsT<float>& params32,
                       std::uint64_t batch_seed, double h, double floor) {
    auto batch = random_bits_batch<T>(4, batch_seed);
    std::vector<std::uint8_t> labels = {0, 1, 1, 0};

    auto params = nn::convert_params<T>(params32);
    nn::ForwardCacheT<T> cache;
    nn::forward(cfg, params, batch, nn::Mode::train, &cache);
    auto grads = nn::backward(cfg, params, cache, labels);
    auto garrays = weight_arrays(grads);

    auto params64 = nn::convert_params<double>(params32);
    auto batch64 = random_bits_batch<double>(4, batch_seed);
    auto parrays64 = weight_arrays(params64);
    auto loss_at = [&] {
        auto probs = nn::forward(cfg, params64, batch64, nn::Mode::train);
        return nn::bce_loss<double>(probs, labels);
    };

    double worst = 0.0;
    for (std::size_t a = 0; a < parrays64.size(); ++a) {
        auto& arr = *parrays64[a];
        for (std::size_t i = 0; i < arr.size(); ++i) {
            double saved = arr[i];
            arr[i] = saved + h;
            double lp = loss_at();
            arr[i] = saved - h;
            double lm = loss_at();
            arr[i] = saved;
            double fd = (lp - lm) / (2.0 * h);
            worst = std::max(worst, rel_err(fd, static_cast<double>((*garrays[a])[i]), floor));
        }
    }
    return worst;
}

bool criterion_gradients(std::ostream& log) {
    std::vector<nn::ModelConfig> configs(2);
    configs[0].block1_filters = 4;
    configs[0].residual_blocks = 1;
    configs[0].dense_widths = {6, 5};
    configs[1].block1_filters = 3;
    configs[1].residual_blocks = 2;
    configs[1].dense_widths = {7};

    double worst32 = 0.0, worst64 = 0.0;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        auto params = nn::init_params(configs[i], 2024 + i);
        worst32 = std::max(worst32, gradcheck_worst<float>(configs[i], params, 55 + i, 1e-5, 1e-3));
        worst64 = std::max(worst64, gradcheck_worst<double>(configs[i], params, 55 + i, 1e-5, 1e-3));
    }
    log << "max rel err: " << worst32 << " (32-bit, limit 1e-3), " << worst64
        << " (64-bit, limit 1e-6)";
    return worst32 <= 1e-3 && worst64 <= 1e-6;
}

// ---------------------------------------------------------------- criterion 4

bool criterion_learnability(std::ostream& log) {
    eval::HarnessConfig cfg;
    cfg.master_seed = 31; // frozen: deterministic pipeline
    cfg.trainer.epochs = 10;
    cfg.trainer.batch_size = 500;
    auto result = eval::fixed_iv_learnability_oracle(data::KeyId::k1, 5, 3000, cfg);

    log << "dl " << result.dl.accuracy << ", tl " << result.tl.accuracy << " (>= 0.99); controls "
        << result.dl_control.accuracy << ", " << result.tl_control.accuracy << " (0.50 +/- 0.03)";
    bool ok = result.dl.accuracy >= 0.99 && result.tl.accuracy >= 0.99;
    ok = ok && std::abs(result.dl_control.accuracy - 0.5) <= 0.03;
    ok = ok && std::abs(result.tl_control.accuracy - 0.5) <= 0.03;
    return ok;
}

// ---------------------------------------------------------- criteria 5 and 8

struct SharedModel {
    eval::HarnessConfig cfg;
    std::optional<nn::TrainedModel> model;

    SharedModel() {
        cfg.master_seed = 2024;
        cfg.train_samples_per_class = 10000;
        cfg.eval_samples_per_class = 10000;
        cfg.trainer.epochs = 6;
        cfg.trainer.batch_size = 500;
    }

    const nn::TrainedModel& get() {
        if (!model) {
            eval::Scenario base{data::KeyId::k1, data::KeyId::k1, 5, 5};
            model = eval::train_scenario_model(base, cfg);
        }
        return *model;
    }
};

bool criterion_null_result(SharedModel& shared, std::ostream& log) {
    const nn::TrainedModel& model = shared.get();

    eval::Scenario diff_key{data::KeyId::k1, data::KeyId::k2, 5, 5};
    auto key_report = eval::run_experiment_a(diff_key, shared.cfg, model);

    eval::Scenario diff_round{data::KeyId::k1, data::KeyId::k1, 5, 6};
    auto round_report = eval::run_experiment_a(diff_round, shared.cfg, model);

    log << "same-round-diff-key " << key_report.accuracy << ", diff-round-same-key "
        << round_report.accuracy << " (0.50 +/- 0.02 on " << key_report.eval_samples << " samples)";
    return key_report.eval_samples >= 10000 && round_report.eval_samples >= 10000 &&
           std::abs(key_report.accuracy - 0.5) <= 0.02 &&
           std::abs(round_report.accuracy - 0.5) <= 0.02;
}

bool criterion_sweep(SharedModel& shared, std::ostream& log) {
    const nn::TrainedModel& model = shared.get();

    eval::Scenario scenario{data::KeyId::k1, data::KeyId::k2, 5, 5};
    eval::SweepSpec sweep;
    sweep.scale = 0.01; // sweep smoke at 1/100 scale
    eval::TlConfig tl;
    tl.tuning.trials = 3;
    tl.tuning.checkpoints = 3;

    auto reports = eval::run_experiment_b(scenario, sweep, model, tl, shared.cfg);
    if (reports.size() != 5) {
        log << "expected 5 sweep rows, got " << reports.size();
        return false;
    }

    // rows must carry the table schema and parse back
    std::ostringstream csv;
    emit_report(reports, eval::ReportFormat::machine, csv);
    std::istringstream in(csv.str());
    auto rows = eval::parse_report_rows(in);
    if (rows.size() != 5) {
        log << "machine rows failed to parse";
        return false;
    }
    std::vector<std::uint64_t> expected = {50, 100, 1000, 2000, 2900};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].samples_per_class != expected[i] || rows[i].pipeline != "tl" ||
            !rows[i].tpr.has_value() || !rows[i].tnr.has_value()) {
            log << "row " << i << " violates the table schema";
            return false;
        }
    }

    bool trend = true;
    for (std::size_t i = 1; i < reports.size(); ++i) {
        if (reports[i].accuracy < reports[i - 1].accuracy - 0.02) trend = false;
    }
    log << "accuracies";
    for (const auto& r : reports) log << ' ' << r.accuracy;
    log << " (non-decreasing within 0.02)";
    return trend;
}

// ---------------------------------------------------------------- criterion 6

double stump_t1(double g, double a) { return g > a ? g - a : (g < -a ? g + a : 0.0); }
double stump_score(double g, double h, double a, double l) {
    double t = stump_t1(g, a);
    return t * t / (h + l);
}

bool criterion_boosting(std::ostream& log) {
    // monotone logloss over 100 full-batch rounds
    gbdt::FeatureMatrix fm;
    fm.rows = 300;
    fm.cols = 6;
    SplitMix64 rng(5);
    fm.values.resize(fm.rows * fm.cols);
    fm.labels.resize(fm.rows);
    for (auto& v : fm.values) v = static_cast<float>(rng.next_unit() * 2 - 1);
    for (auto& l : fm.labels) l = static_cast<std::uint8_t>(rng.next() & 1);

    gbdt::GbdtHyperParams hp;
    hp.max_depth = 3;
    gbdt::GbdtTrainer trainer(fm, hp, 7);
    double prev = trainer.train_logloss();
    for (int r = 0; r < 100; ++r) {
        trainer.boost_round();
        double cur = trainer.train_logloss();
        if (cur > prev + 1e-12) {
            log << "logloss increased at round " << r << ": " << prev << " -> " << cur;
            return false;
        }
        prev = cur;
    }

    // depth-1 single tree vs exhaustive stump search on an 8-sample instance
    gbdt::FeatureMatrix small;
    small.rows = 8;
    small.cols = 3;
    SplitMix64 srng(42);
    small.values.resize(24);
    for (auto& v : small.values) v = static_cast<float>(srng.next_unit() * 2 - 1);
    small.labels = {0, 1, 1, 0, 1, 0, 0, 1};

    gbdt::GbdtHyperParams shp;
    shp.max_depth = 1;
    shp.n_estimators = 1;
    shp.lambda = 0.8;
    shp.alpha = 0.05;
    shp.gamma = 1e-5;
    shp.min_child_weight = 0.25;

    const double a = shp.alpha + shp.reg_alpha, l = shp.lambda + shp.reg_lambda;
    double g_all = 0, h_all = 0;
    std::vector<double> g(8), h(8);
    for (std::size_t i = 0; i < 8; ++i) {
        g[i] = 0.5 - (small.labels[i] != 0 ? 1.0 : 0.0);
        h[i] = 0.25;
        g_all += g[i];
        h_all += h[i];
    }
    double best_gain = 0;
    int best_f = -1;
    double best_thr = 0, best_lw = 0, best_rw = 0;
    for (std::size_t f = 0; f < 3; ++f) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < 8; ++i) vals.push_back(small.values[i * 3 + f]);
        auto uniq = vals;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (std::size_t k = 0; k + 1 < uniq.size(); ++k) {
            double thr = 0.5 * (uniq[k] + uniq[k + 1]);
            double gl = 0, hl = 0;
            for (std::size_t i = 0; i < 8; ++i) {
                if (vals[i] < thr) {
                    gl += g[i];
                    hl += h[i];
                }
            }
            double gr = g_all - gl, hr = h_all - hl;
            if (hl < shp.min_child_weight || hr < shp.min_child_weight) continue;
            double gain = 0.5 * (stump_score(gl, hl, a, l) + stump_score(gr, hr, a, l) -
                                 stump_score(g_all, h_all, a, l)) -
                          shp.gamma;
            if (gain > best_gain) {
                best_gain = gain;
                best_f = static_cast<int>(f);
                best_thr = thr;
                best_lw = -stump_t1(gl, a) / (hl + l);
                best_rw = -stump_t1(gr, a) / (hr + l);
            }
        }
    }
    auto ens = gbdt::fit_gbdt(small, shp, 1);
    const auto& root = ens.trees[0].nodes[0];
    if (best_f < 0) {
        if (!root.is_leaf()) {
            log << "oracle found no split but the tree split";
            return false;
        }
    } else {
        if (root.is_leaf() || root.feature != best_f ||
            root.threshold != static_cast<float>(best_thr)) {
            log << "stump disagrees with the exhaustive oracle";
            return false;
        }
        double lw = ens.trees[0].nodes[static_cast<std::size_t>(root.left)].value;
        double rw = ens.trees[0].nodes[static_cast<std::size_t>(root.right)].value;
        if (std::abs(lw - best_lw) > 1e-12 || std::abs(rw - best_rw) > 1e-12) {
            log << "leaf weights disagree with the exhaustive oracle";
            return false;
        }
    }

    // sampled hyperparameters respect the table bounds over 10^4 draws
    gbdt::SearchSpace space;
    SplitMix64 hrng(77);
    for (int i = 0; i < 10000; ++i) {
        if (!space.contains(gbdt::sample_hyperparams(space, hrng))) {
            log << "hyperparameter draw escaped the search space at " << i;
            return false;
        }
    }

    log << "monotone logloss (100 rounds), exact stump match, 10^4 in-bounds draws";
    return true;
}

// ---------------------------------------------------------------- criterion 7

bool criterion_metrics(std::ostream& log) {
    struct Case {
        eval::ConfusionCounts c;
        double accuracy;
        std::optional<double> tpr, tnr;
    };
    std::vector<Case> cases = {
        {{50, 50, 0, 0}, 1.0, 1.0, 1.0},
        {{25, 25, 25, 25}, 0.5, 0.5, 0.5},
        {{9933, 9954, 46, 67}, 0.99435, 0.9933, 0.9954}, // the near-saturated table row
        {{8, 3, 7, 2}, 0.55, 0.8, 0.3},
        {{0, 5, 0, 1}, 5.0 / 6.0, 0.0, 1.0},
        {{0, 7, 3, 0}, 0.7, std::nullopt, 0.7},
    };
    for (std::size_t i = 0; i < cases.size(); ++i) {
        auto m = eval::compute_metrics(cases[i].c);
        if (m.accuracy != cases[i].accuracy || m.tpr != cases[i].tpr || m.tnr != cases[i].tnr) {
            log << "mismatch on matrix " << i;
            return false;
        }
    }
    log << cases.size() << " confusion matrices reproduced exactly";
    return true;
}

} // namespace

int main() {
    SharedModel shared;
    struct Criterion {
        int id;
        const char* name;
        std::function<bool(std::ostream&)> run;
    };
    std::vector<Criterion> criteria = {
        {1, "cipher exactness", criterion_cipher},
        {2, "dataset correctness audit", criterion_dataset_audit},
        {3, "gradient fidelity", criterion_gradients},
        {4, "learnability oracle", criterion_learnability},
        {5, "null-result reproduction", [&](std::ostream& log) { return criterion_null_result(shared, log); }},
        {6, "boosting correctness", criterion_boosting},
        {7, "metric identities", criterion_metrics},
        {8, "transfer sweep format and trend", [&](std::ostream& log) { return criterion_sweep(shared, log); }},
    };

    int failed = 0;
    for (auto& c : criteria) {
        std::ostringstream detail;
        bool ok = false;
        auto start = std::chrono::steady_clock::now();
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail << "exception: " << e.what();
        }
        auto seconds =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
                .count() /
            1000.0;
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << ", "
                  << seconds << "s): " << detail.str() << "\n";
        if (!ok) ++failed;
    }
    if (failed == 0) {
        std::cout << "all " << criteria.size() << " acceptance criteria passed\n";
    } else {
        std::cout << failed << " acceptance criteria FAILED\n";
    }
    return failed;
}
