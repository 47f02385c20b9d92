#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcw/config.hpp"
#include "mcw/errors.hpp"
#include "mcw/gbdt.hpp"
#include "mcw/harness.hpp"
#include "mcw/rng.hpp"
#include "mcw/train.hpp"
#include "mcw/tune.hpp"

namespace {

using namespace mcw;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitIncompatible = 5;

struct KeyChoice {
    speck::Key key;
    data::KeyId id = data::KeyId::k1;
};

KeyChoice parse_key(const std::string& text) {
    if (auto id = data::key_id_from_name(text); id && *id != data::KeyId::custom) {
        return {data::key_for(*id), *id};
    }
    std::string hex = text;
    if (hex.rfind("0x", 0) == 0 || hex.rfind("0X", 0) == 0) hex = hex.substr(2);
    if (hex.size() != 16) {
        throw ConfigError("--key expects k1, k2, or 16 hex digits, got '" + text + "'");
    }
    std::array<std::uint8_t, 8> bytes{};
    for (int i = 0; i < 8; ++i) {
        bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(
            std::stoul(hex.substr(2 * static_cast<std::size_t>(i), 2), nullptr, 16));
    }
    return {speck::key_from_bytes(bytes), data::KeyId::custom};
}

std::uint32_t parse_block(const std::string& text) {
    return static_cast<std::uint32_t>(std::stoul(text, nullptr, 0));
}

void echo_config(const cli::RunConfig& cfg) {
    std::cout << "# resolved configuration\n" << cfg.to_ini() << std::flush;
}

void append_report_rows(const std::vector<eval::MetricsReport>& reports, const fs::path& path) {
    bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open report file: " + path.string());
    std::ostringstream buffer;
    emit_report(reports, eval::ReportFormat::machine, buffer);
    std::string text = buffer.str();
    if (!fresh) text = text.substr(text.find('\n') + 1); // drop the header
    out << text;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
}

// deterministic per-class row split for feature matrices
std::pair<gbdt::FeatureMatrix, gbdt::FeatureMatrix> split_features(const gbdt::FeatureMatrix& fm,
                                                                   double fraction,
                                                                   std::uint64_t seed) {
    std::array<std::vector<std::uint32_t>, 2> by_class;
    for (std::uint32_t i = 0; i < fm.rows; ++i) by_class[fm.labels[i]].push_back(i);
    gbdt::FeatureMatrix a, b;
    a.cols = b.cols = fm.cols;
    auto push = [&](gbdt::FeatureMatrix& dst, std::uint32_t row) {
        dst.values.insert(dst.values.end(), fm.values.begin() + row * fm.cols,
                          fm.values.begin() + (row + 1) * fm.cols);
        dst.labels.push_back(fm.labels[row]);
        ++dst.rows;
    };
    for (int c = 0; c < 2; ++c) {
        auto& rows = by_class[static_cast<std::size_t>(c)];
        SplitMix64 rng(substream_seed(seed, "feature-split", static_cast<std::uint64_t>(c)));
        deterministic_shuffle(rows, rng);
        std::size_t keep = static_cast<std::size_t>(fraction * static_cast<double>(rows.size()) + 0.5);
        for (std::size_t i = 0; i < rows.size(); ++i) push(i < keep ? a : b, rows[i]);
    }
    return {a, b};
}

// rounds pair for the different-round scenarios: the adjacent round from the
// configured set when available, otherwise the in-range neighbor
int partner_rounds(int rounds, const std::vector<int>& rounds_set) {
    auto in_set = [&](int r) { return std::find(rounds_set.begin(), rounds_set.end(), r) != rounds_set.end(); };
    if (rounds + 1 <= speck::kMaxRounds && in_set(rounds + 1)) return rounds + 1;
    if (rounds - 1 >= 1 && in_set(rounds - 1)) return rounds - 1;
    return rounds + 1 <= speck::kMaxRounds ? rounds + 1 : rounds - 1;
}

eval::Scenario scenario_for(eval::ScenarioKind kind, int rounds, const std::vector<int>& rounds_set) {
    eval::Scenario s;
    s.train_rounds = rounds;
    s.eval_rounds = rounds;
    s.train_key = data::KeyId::k1;
    s.eval_key = data::KeyId::k1;
    switch (kind) {
        case eval::ScenarioKind::same_key_same_round: break;
        case eval::ScenarioKind::same_round_diff_key: s.eval_key = data::KeyId::k2; break;
        case eval::ScenarioKind::diff_round_same_key:
            s.eval_rounds = partner_rounds(rounds, rounds_set);
            break;
        case eval::ScenarioKind::diff_round_diff_key:
            s.eval_key = data::KeyId::k2;
            s.eval_rounds = partner_rounds(rounds, rounds_set);
            break;
    }
    return s;
}

int run_experiment_command(const cli::RunConfig& cfg) {
    echo_config(cfg);
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "config_echo.ini", cfg.to_ini());

    eval::HarnessConfig harness = cfg.harness_config();
    harness.log = &std::cout;

    bool run_a = std::find(cfg.experiments.begin(), cfg.experiments.end(), "a") != cfg.experiments.end();
    bool run_b = std::find(cfg.experiments.begin(), cfg.experiments.end(), "b") != cfg.experiments.end();

    std::map<int, nn::TrainedModel> models; // per train-round, key 1 side
    auto model_for = [&](int rounds) -> const nn::TrainedModel& {
        auto it = models.find(rounds);
        if (it == models.end()) {
            eval::Scenario base{data::KeyId::k1, data::KeyId::k1, rounds, rounds};
            std::cout << "training distinguisher on k1, " << rounds << " rounds\n";
            it = models.emplace(rounds, eval::train_scenario_model(base, harness)).first;
        }
        return it->second;
    };

    std::vector<eval::MetricsReport> dl_reports, tl_reports;
    std::vector<std::string> failures;
    int first_failure_code = kExitOk;
    std::ofstream provenance(fs::path(cfg.out_dir) / "provenance.jsonl", std::ios::trunc);

    auto guard = [&](const std::string& what, int code, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            failures.push_back(what + ": " + e.what());
            if (first_failure_code == kExitOk) first_failure_code = code;
            std::cout << "FAILED " << what << ": " << e.what() << "\n";
        }
    };

    for (int rounds : cfg.rounds_set) {
        for (const auto& kind_name : cfg.scenario_kinds) {
            eval::ScenarioKind kind = *eval::scenario_kind_from_name(kind_name);
            eval::Scenario scenario = scenario_for(kind, rounds, cfg.rounds_set);
            if (run_a) {
                guard("experiment a " + kind_name + " r" + std::to_string(rounds), kExitOther, [&] {
                    auto report = eval::run_experiment_a(scenario, harness, model_for(rounds));
                    provenance << report.provenance_json << "\n";
                    dl_reports.push_back(std::move(report));
                });
            }
            if (run_b && kind != eval::ScenarioKind::same_key_same_round) {
                guard("experiment b " + kind_name + " r" + std::to_string(rounds), kExitOther, [&] {
                    auto reports = eval::run_experiment_b(scenario, cfg.sweep_spec(), model_for(rounds),
                                                          cfg.tl_config(), harness);
                    for (auto& r : reports) {
                        provenance << r.provenance_json << "\n";
                        tl_reports.push_back(std::move(r));
                    }
                });
            }
        }
    }

    if (!dl_reports.empty()) {
        std::ofstream out(fs::path(cfg.out_dir) / "report_dl.csv", std::ios::trunc);
        emit_report(dl_reports, eval::ReportFormat::machine, out);
        emit_report(dl_reports, eval::ReportFormat::human, std::cout);
    }
    if (!tl_reports.empty()) {
        std::ofstream out(fs::path(cfg.out_dir) / "report_tl.csv", std::ios::trunc);
        emit_report(tl_reports, eval::ReportFormat::machine, out);
        emit_report(tl_reports, eval::ReportFormat::human, std::cout);
    }
    if (!failures.empty()) {
        std::ostringstream all;
        for (const auto& f : failures) all << f << "\n";
        write_text(fs::path(cfg.out_dir) / "failures.txt", all.str());
        std::cout << failures.size() << " scenario(s) failed; see failures.txt\n";
    }
    return first_failure_code;
}

int dispatch_errors(const std::function<void()>& fn) {
    try {
        fn();
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IncompatibleError& e) {
        std::cerr << "compatibility error: " << e.what() << "\n";
        return kExitIncompatible;
    } catch (const DivergenceError& e) {
        std::cerr << "numerical divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const FormatError& e) {
        std::cerr << "file format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"machine-learning indistinguishability workbench for round-reduced SPECK32/64-CBC"};
    app.require_subcommand(1);

    std::function<int()> action;

    std::string config_path;
    std::uint64_t seed_flag = 0;
    bool seed_set = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration file (ini)");
        sub->add_option("--seed", seed_flag, "master seed override")->each([&](const std::string&) {
            seed_set = true;
        });
    };
    auto load_config = [&]() {
        cli::RunConfig cfg = config_path.empty() ? cli::RunConfig{} : cli::RunConfig::load(config_path);
        if (seed_set) cfg.master_seed = seed_flag;
        return cfg;
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a labeled ciphertext dataset");
    std::string gen_key = "k1", gen_out, gen_p1 = "0x00000000", gen_p2 = "0x00000001";
    int gen_rounds = 5;
    std::uint64_t gen_count = 1000;
    bool gen_store_ivs = false;
    add_common(gen);
    gen->add_option("--key", gen_key, "k1, k2, or 16 hex digits");
    gen->add_option("--rounds", gen_rounds, "encryption rounds (1..22)");
    gen->add_option("--samples-per-class", gen_count, "samples per class");
    gen->add_option("--p1", gen_p1, "first message block (hex)");
    gen->add_option("--p2", gen_p2, "second message block (hex)");
    gen->add_flag("--store-ivs", gen_store_ivs, "persist per-record IVs for the correctness audit");
    gen->add_option("--out", gen_out, "output dataset path")->required();
    gen->callback([&] {
        action = [&]() -> int {
            cli::RunConfig cfg = load_config();
            data::GeneratorConfig g;
            KeyChoice kc = parse_key(gen_key);
            g.key = kc.key;
            g.key_id = kc.id;
            g.rounds = gen_rounds;
            g.samples_per_class = gen_count;
            g.seed = derive_seed(cfg.master_seed, "gen-data");
            g.messages = data::MessagePair{parse_block(gen_p1), parse_block(gen_p2)};
            g.store_ivs = gen_store_ivs;
            data::Dataset ds = data::generate_dataset(g);
            data::save_dataset(ds, gen_out);
            echo_config(cfg);
            std::cout << "wrote " << ds.header.record_count << " records ("
                      << ds.header.class_counts[0] << " + " << ds.header.class_counts[1] << ") to "
                      << gen_out << "\n"
                      << "key " << data::key_id_name(ds.header.key_id) << ", rounds "
                      << ds.header.rounds << ", seed " << ds.header.seed << ", ivs "
                      << (ds.header.store_ivs ? "stored" : "omitted") << "\n";
            return kExitOk;
        };
    });

    // train-dl
    auto* tdl = app.add_subcommand("train-dl", "train the deep distinguisher on a dataset");
    std::string tdl_data, tdl_out;
    add_common(tdl);
    tdl->add_option("--data", tdl_data, "training dataset (.mcds)")->required();
    tdl->add_option("--out", tdl_out, "output model path (.mcnn)")->required();
    tdl->callback([&] {
        action = [&]() -> int {
            cli::RunConfig cfg = load_config();
            echo_config(cfg);
            data::Dataset full = data::load_dataset(tdl_data);
            auto [train_ds, val_ds] = data::split_dataset(
                full, 1.0 - cfg.val_fraction, derive_seed(cfg.master_seed, "val-split"));
            nn::TrainConfig tc = cfg.train_config();
            nn::TrainedModel model = nn::train(cfg.model_config(), tc, train_ds, val_ds, &std::cout);
            nn::save_model(model, tdl_out);
            std::cout << "saved model to " << tdl_out << " (hash " << nn::param_hash(model.params)
                      << ")\n";
            return kExitOk;
        };
    });

    // eval-dl
    auto* edl = app.add_subcommand("eval-dl", "evaluate a deep model on a dataset");
    std::string edl_model, edl_data, edl_out;
    add_common(edl);
    edl->add_option("--model", edl_model, "model path (.mcnn)")->required();
    edl->add_option("--data", edl_data, "evaluation dataset (.mcds)")->required();
    edl->add_option("--out", edl_out, "append a machine report row to this csv");
    edl->callback([&] {
        action = [&]() -> int {
            nn::TrainedModel model = nn::load_model(edl_model);
            data::Dataset ds = data::load_dataset(edl_data);
            nn::EvalOutcome outcome = nn::evaluate(model, ds);

            auto prov = nlohmann::json::parse(model.provenance_json);
            eval::Scenario scenario;
            scenario.train_key =
                data::key_id_from_name(prov["train_dataset"]["key_id"].get<std::string>())
                    .value_or(data::KeyId::custom);
            scenario.train_rounds = static_cast<int>(prov["train_dataset"]["rounds"].get<std::uint32_t>());
            scenario.eval_key = ds.header.key_id;
            scenario.eval_rounds = static_cast<int>(ds.header.rounds);

            nlohmann::json rprov{{"model_hash", nn::param_hash(model.params)},
                                 {"eval_dataset_seed", ds.header.seed}};
            auto report = eval::make_report(
                eval::Pipeline::dl, scenario, outcome.counts,
                prov["train_dataset"]["class_counts"][0].get<std::uint64_t>(), ds.header.seed,
                rprov.dump());
            emit_report({report}, eval::ReportFormat::human, std::cout);
            if (!edl_out.empty()) append_report_rows({report}, edl_out);
            return kExitOk;
        };
    });

    // extract-features
    auto* ext = app.add_subcommand("extract-features", "extract flatten-layer features");
    std::string ext_model, ext_data, ext_out;
    add_common(ext);
    ext->add_option("--model", ext_model, "frozen model path (.mcnn)")->required();
    ext->add_option("--data", ext_data, "dataset path (.mcds)")->required();
    ext->add_option("--out", ext_out, "output feature file (.mcft)")->required();
    ext->callback([&] {
        action = [&]() -> int {
            nn::TrainedModel model = nn::load_model(ext_model);
            data::Dataset ds = data::load_dataset(ext_data);
            gbdt::FeatureMatrix fm = gbdt::extract_features(model, ds);
            gbdt::save_features(fm, ext_out);
            std::cout << "wrote " << fm.rows << " x " << fm.cols << " features to " << ext_out << "\n";
            return kExitOk;
        };
    });

    // train-tl
    auto* ttl = app.add_subcommand("train-tl", "tune and fit the boosted classifier on features");
    std::string ttl_features, ttl_val_features, ttl_out, ttl_trials_csv;
    int ttl_trials = 0, ttl_checkpoints = 0;
    add_common(ttl);
    ttl->add_option("--features", ttl_features, "training feature file (.mcft)")->required();
    ttl->add_option("--val-features", ttl_val_features, "validation feature file for tuning");
    ttl->add_option("--trials", ttl_trials, "tuning trials override");
    ttl->add_option("--checkpoints", ttl_checkpoints, "pruning checkpoints override");
    ttl->add_option("--trials-csv", ttl_trials_csv, "write trial records as csv");
    ttl->add_option("--out", ttl_out, "output ensemble path (.mcgb)")->required();
    ttl->callback([&] {
        action = [&]() -> int {
            cli::RunConfig cfg = load_config();
            echo_config(cfg);
            gbdt::FeatureMatrix train_fm = gbdt::load_features(ttl_features);
            gbdt::FeatureMatrix tune_train, tune_val;
            if (ttl_val_features.empty()) {
                std::tie(tune_train, tune_val) = split_features(
                    train_fm, 1.0 - cfg.inner_val_fraction, derive_seed(cfg.master_seed, "tl-inner"));
            } else {
                tune_train = train_fm;
                tune_val = gbdt::load_features(ttl_val_features);
                if (tune_val.cols != train_fm.cols) {
                    throw IncompatibleError("validation features have a different dimension");
                }
            }
            gbdt::TuneConfig tc = cfg.tl_config().tuning;
            if (ttl_trials > 0) tc.trials = ttl_trials;
            if (ttl_checkpoints > 0) tc.checkpoints = ttl_checkpoints;
            gbdt::TuneResult tuned = gbdt::tune(tune_train, tune_val, tc);
            if (!ttl_trials_csv.empty()) write_text(ttl_trials_csv, gbdt::trials_to_csv(tuned.trials));

            gbdt::BoostedEnsemble ens =
                gbdt::fit_gbdt(train_fm, tuned.best_params, derive_seed(cfg.master_seed, "tl-fit"));
            gbdt::save_ensemble(ens, ttl_out);
            std::cout << "best trial " << tuned.best_trial << " (validation accuracy "
                      << tuned.best_score << "), " << ens.trees.size() << " trees -> " << ttl_out
                      << "\n";
            return kExitOk;
        };
    });

    // eval-tl
    auto* etl = app.add_subcommand("eval-tl", "evaluate a boosted classifier on features");
    std::string etl_model, etl_features, etl_out;
    std::string etl_train_key = "k1", etl_eval_key = "k1";
    int etl_train_rounds = 5, etl_eval_rounds = 5;
    add_common(etl);
    etl->add_option("--model", etl_model, "ensemble path (.mcgb)")->required();
    etl->add_option("--features", etl_features, "evaluation feature file (.mcft)")->required();
    etl->add_option("--out", etl_out, "append a machine report row to this csv");
    etl->add_option("--train-key", etl_train_key, "report label: extractor training key");
    etl->add_option("--eval-key", etl_eval_key, "report label: evaluation key");
    etl->add_option("--train-rounds", etl_train_rounds, "report label: extractor training rounds");
    etl->add_option("--eval-rounds", etl_eval_rounds, "report label: evaluation rounds");
    etl->callback([&] {
        action = [&]() -> int {
            gbdt::BoostedEnsemble ens = gbdt::load_ensemble(etl_model);
            gbdt::FeatureMatrix fm = gbdt::load_features(etl_features);
            eval::ConfusionCounts counts = gbdt::evaluate_ensemble(ens, fm);

            eval::Scenario scenario;
            scenario.train_key = data::key_id_from_name(etl_train_key).value_or(data::KeyId::custom);
            scenario.eval_key = data::key_id_from_name(etl_eval_key).value_or(data::KeyId::custom);
            scenario.train_rounds = etl_train_rounds;
            scenario.eval_rounds = etl_eval_rounds;
            nlohmann::json prov{{"trees", ens.trees.size()}, {"feature_dim", ens.feature_dim}};
            auto report = eval::make_report(eval::Pipeline::tl, scenario, counts, fm.rows / 2, 0,
                                            prov.dump());
            emit_report({report}, eval::ReportFormat::human, std::cout);
            if (!etl_out.empty()) append_report_rows({report}, etl_out);
            return kExitOk;
        };
    });

    // run-experiment
    auto* run = app.add_subcommand("run-experiment", "run the scenario matrix and sweeps");
    std::string run_out;
    add_common(run);
    run->add_option("--out", run_out, "output directory override");
    run->callback([&] {
        action = [&]() -> int {
            cli::RunConfig cfg = load_config();
            if (!run_out.empty()) cfg.out_dir = run_out;
            return run_experiment_command(cfg);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    int code = kExitOk;
    int mapped = dispatch_errors([&] { code = action(); });
    return mapped != kExitOk ? mapped : code;
}
