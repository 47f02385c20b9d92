#include "mcw/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "mcw/errors.hpp"
#include "mcw/rng.hpp"

namespace mcw::eval {

namespace {

using json = nlohmann::json;

std::string seed_label(const char* role, const Scenario& s, data::KeyId key, int rounds,
                       std::uint64_t per_class) {
    std::ostringstream out;
    out << "data/" << role << '/' << scenario_kind_name(s.kind()) << '/' << data::key_id_name(key)
        << "/r" << rounds << "/n" << per_class;
    return out.str();
}

data::Dataset generate_side(const HarnessConfig& cfg, const Scenario& s, const char* role,
                            data::KeyId key, int rounds, std::uint64_t per_class) {
    data::GeneratorConfig gen;
    gen.key = data::key_for(key);
    gen.key_id = key;
    gen.rounds = rounds;
    gen.samples_per_class = per_class;
    gen.messages = cfg.messages;
    gen.seed = scenario_dataset_seed(cfg.master_seed, role, s, key, rounds, per_class);
    return data::generate_dataset(gen);
}

// evaluation must never touch training data
void assert_disjoint(const data::DatasetHeader& train, const data::DatasetHeader& eval_h) {
    if (train.key_bytes == eval_h.key_bytes && train.rounds == eval_h.rounds &&
        train.seed == eval_h.seed) {
        throw Error("train and eval datasets share key, rounds, and seed");
    }
}

json scenario_json(const Scenario& s) {
    return json{{"kind", scenario_kind_name(s.kind())},
                {"train_key", data::key_id_name(s.train_key)},
                {"eval_key", data::key_id_name(s.eval_key)},
                {"train_rounds", s.train_rounds},
                {"eval_rounds", s.eval_rounds}};
}

json hp_json(const gbdt::GbdtHyperParams& hp) {
    return json{{"lambda", hp.lambda},
                {"alpha", hp.alpha},
                {"max_depth", hp.max_depth},
                {"n_estimators", hp.n_estimators},
                {"learning_rate", hp.learning_rate},
                {"subsample", hp.subsample},
                {"colsample_bytree", hp.colsample_bytree},
                {"gamma", hp.gamma},
                {"min_child_weight", hp.min_child_weight},
                {"reg_alpha", hp.reg_alpha},
                {"reg_lambda", hp.reg_lambda}};
}

std::string double_to_string(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

double double_from_string(std::string_view s) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw FormatError(FormatError::Kind::inconsistent, "bad numeric field in report row");
    }
    return v;
}

gbdt::FeatureMatrix extract_for(const nn::TrainedModel& model, const data::Dataset& ds) {
    return gbdt::extract_features(model, ds);
}

} // namespace

const char* pipeline_name(Pipeline p) { return p == Pipeline::dl ? "dl" : "tl"; }

const char* scenario_kind_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::same_key_same_round: return "same_key_same_round";
        case ScenarioKind::same_round_diff_key: return "same_round_diff_key";
        case ScenarioKind::diff_round_same_key: return "diff_round_same_key";
        default: return "diff_round_diff_key";
    }
}

std::optional<Pipeline> pipeline_from_name(std::string_view name) {
    if (name == "dl") return Pipeline::dl;
    if (name == "tl") return Pipeline::tl;
    return std::nullopt;
}

std::optional<ScenarioKind> scenario_kind_from_name(std::string_view name) {
    for (ScenarioKind k : {ScenarioKind::same_key_same_round, ScenarioKind::same_round_diff_key,
                           ScenarioKind::diff_round_same_key, ScenarioKind::diff_round_diff_key}) {
        if (name == scenario_kind_name(k)) return k;
    }
    return std::nullopt;
}

std::uint64_t scenario_dataset_seed(std::uint64_t master_seed, const char* role,
                                    const Scenario& scenario, data::KeyId key, int rounds,
                                    std::uint64_t samples_per_class) {
    return derive_seed(master_seed, seed_label(role, scenario, key, rounds, samples_per_class));
}

ScenarioKind Scenario::kind() const {
    bool same_key = train_key == eval_key;
    bool same_round = train_rounds == eval_rounds;
    if (same_key && same_round) return ScenarioKind::same_key_same_round;
    if (same_key) return ScenarioKind::diff_round_same_key;
    if (same_round) return ScenarioKind::same_round_diff_key;
    return ScenarioKind::diff_round_diff_key;
}

void Scenario::validate() const {
    if (train_rounds < 1 || train_rounds > speck::kMaxRounds || eval_rounds < 1 ||
        eval_rounds > speck::kMaxRounds) {
        throw ConfigError("scenario rounds must be in 1..22");
    }
    if (std::abs(train_rounds - eval_rounds) > 1) {
        throw ConfigError("eval rounds must equal the train rounds or differ by one");
    }
}

MetricsReport make_report(Pipeline pipeline, const Scenario& scenario, const ConfusionCounts& counts,
                          std::uint64_t samples_per_class, std::uint64_t seed,
                          std::string provenance_json) {
    Metrics m = compute_metrics(counts);
    MetricsReport r;
    r.pipeline = pipeline;
    r.scenario = scenario;
    r.samples_per_class = samples_per_class;
    r.eval_samples = counts.total();
    r.counts = counts;
    r.accuracy = m.accuracy;
    r.tpr = m.tpr;
    r.tnr = m.tnr;
    r.seed = seed;
    r.provenance_json = std::move(provenance_json);
    return r;
}

nn::TrainedModel train_scenario_model(const Scenario& scenario, const HarnessConfig& cfg) {
    scenario.validate();
    data::Dataset full = generate_side(cfg, scenario, "train", scenario.train_key,
                                       scenario.train_rounds, cfg.train_samples_per_class);
    auto [fit_ds, val_ds] =
        data::split_dataset(full, 1.0 - cfg.val_fraction, derive_seed(cfg.master_seed, "val-split"));
    nn::TrainConfig tc = cfg.trainer;
    tc.seed = derive_seed(cfg.master_seed, "train/" + std::string(data::key_id_name(scenario.train_key)) +
                                               "/r" + std::to_string(scenario.train_rounds));
    return nn::train(cfg.model, tc, fit_ds, val_ds, cfg.log);
}

MetricsReport run_experiment_a(const Scenario& scenario, const HarnessConfig& cfg) {
    return run_experiment_a(scenario, cfg, train_scenario_model(scenario, cfg));
}

MetricsReport run_experiment_a(const Scenario& scenario, const HarnessConfig& cfg,
                               const nn::TrainedModel& model) {
    scenario.validate();
    data::Dataset eval_ds = generate_side(cfg, scenario, "eval", scenario.eval_key,
                                          scenario.eval_rounds, cfg.eval_samples_per_class);

    auto train_header = json::parse(model.provenance_json)["train_dataset"];
    data::DatasetHeader synthetic{};
    // disjointness is checked on (key, rounds, seed)
    {
        std::string hex = train_header["key_bytes"].get<std::string>();
        for (int i = 0; i < 8; ++i) {
            synthetic.key_bytes[static_cast<std::size_t>(i)] =
                static_cast<std::uint8_t>(std::stoul(hex.substr(2 * static_cast<std::size_t>(i), 2), nullptr, 16));
        }
        synthetic.rounds = train_header["rounds"].get<std::uint32_t>();
        synthetic.seed = train_header["seed"].get<std::uint64_t>();
    }
    assert_disjoint(synthetic, eval_ds.header);

    nn::EvalOutcome outcome = nn::evaluate(model, eval_ds);

    json prov{{"scenario", scenario_json(scenario)},
              {"model_hash", nn::param_hash(model.params)},
              {"model_provenance", json::parse(model.provenance_json)},
              {"eval_dataset_seed", eval_ds.header.seed},
              {"eval_records", eval_ds.header.record_count}};
    return make_report(Pipeline::dl, scenario, outcome.counts, cfg.train_samples_per_class,
                       cfg.master_seed, prov.dump());
}

std::vector<std::uint64_t> SweepSpec::scaled() const {
    std::vector<std::uint64_t> out;
    for (std::uint64_t c : samples_per_class) {
        auto v = static_cast<std::uint64_t>(std::llround(static_cast<double>(c) * scale));
        out.push_back(std::max<std::uint64_t>(v, 2));
    }
    return out;
}

void SweepSpec::validate() const {
    if (samples_per_class.empty()) throw ConfigError("sweep needs at least one sample count");
    for (std::size_t i = 0; i < samples_per_class.size(); ++i) {
        if (samples_per_class[i] == 0) throw ConfigError("sweep counts must be positive");
        if (i > 0 && samples_per_class[i] <= samples_per_class[i - 1]) {
            throw ConfigError("sweep counts must be ascending");
        }
    }
    if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("sweep scale must be in (0, 1]");
}

std::vector<MetricsReport> run_experiment_b(const Scenario& scenario, const SweepSpec& sweep,
                                            const nn::TrainedModel& frozen, const TlConfig& tl,
                                            const HarnessConfig& cfg) {
    scenario.validate();
    sweep.validate();
    std::vector<MetricsReport> reports;

    for (std::uint64_t per_class : sweep.scaled()) {
        data::Dataset ds =
            generate_side(cfg, scenario, "tl", scenario.eval_key, scenario.eval_rounds, per_class);
        auto [train_ds, holdout_ds] = data::split_dataset(
            ds, 1.0 - tl.holdout_fraction,
            substream_seed(cfg.master_seed, "tl-holdout", per_class));
        auto [inner_train_ds, inner_val_ds] = data::split_dataset(
            train_ds, 1.0 - tl.inner_val_fraction,
            substream_seed(cfg.master_seed, "tl-inner", per_class));

        gbdt::FeatureMatrix f_inner_train = extract_for(frozen, inner_train_ds);
        gbdt::FeatureMatrix f_inner_val = extract_for(frozen, inner_val_ds);

        gbdt::TuneConfig tc = tl.tuning;
        tc.seed = substream_seed(cfg.master_seed, "tl-tune", per_class);
        gbdt::TuneResult tuned = gbdt::tune(f_inner_train, f_inner_val, tc);

        gbdt::FeatureMatrix f_train = extract_for(frozen, train_ds);
        gbdt::FeatureMatrix f_holdout = extract_for(frozen, holdout_ds);
        gbdt::BoostedEnsemble ens = gbdt::fit_gbdt(f_train, tuned.best_params,
                                                   substream_seed(cfg.master_seed, "tl-fit", per_class));
        ConfusionCounts counts = gbdt::evaluate_ensemble(ens, f_holdout);

        json prov{{"scenario", scenario_json(scenario)},
                  {"extractor_hash", nn::param_hash(frozen.params)},
                  {"dataset_seed", ds.header.seed},
                  {"holdout_records", holdout_ds.header.record_count},
                  {"tuning_trials", tc.trials},
                  {"tuning_checkpoints", tc.checkpoints},
                  {"best_trial", tuned.best_trial},
                  {"best_params", hp_json(tuned.best_params)}};
        reports.push_back(make_report(Pipeline::tl, scenario, counts, per_class, cfg.master_seed,
                                      prov.dump()));
        if (cfg.log != nullptr) {
            (*cfg.log) << "tl sweep " << per_class << "/class acc " << reports.back().accuracy << "\n";
        }
    }
    return reports;
}

LearnabilityReport fixed_iv_learnability_oracle(data::KeyId key, int rounds,
                                                std::uint64_t samples_per_class,
                                                const HarnessConfig& cfg) {
    if (samples_per_class < 100) throw ConfigError("learnability oracle needs at least 100 per class");

    speck::Key k = data::key_for(key);
    auto sched = speck::key_schedule(k, rounds);
    std::uint32_t iv = static_cast<std::uint32_t>(derive_seed(cfg.master_seed, "oracle-iv"));

    data::Dataset ds;
    ds.header.key_id = key;
    ds.header.key_bytes = speck::key_to_bytes(k);
    ds.header.rounds = static_cast<std::uint32_t>(rounds);
    ds.header.messages = cfg.messages;
    ds.header.seed = derive_seed(cfg.master_seed, "oracle-data");
    ds.header.store_ivs = true;
    for (std::uint64_t i = 0; i < 2 * samples_per_class; ++i) {
        std::uint8_t label = i < samples_per_class ? data::kClassP1 : data::kClassP2;
        std::uint32_t msg = label == data::kClassP1 ? cfg.messages.p1 : cfg.messages.p2;
        speck::Block ct =
            speck::encrypt_block(speck::block_from_u32(msg) ^ speck::block_from_u32(iv), sched);
        ds.records.push_back({speck::to_u32(ct), label});
        ds.ivs.push_back(iv);
    }
    {
        std::vector<std::uint32_t> perm(ds.records.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(i);
        SplitMix64 rng(derive_seed(ds.header.seed, "shuffle"));
        deterministic_shuffle(perm, rng);
        data::Dataset shuffled = ds;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            shuffled.records[i] = ds.records[perm[i]];
            shuffled.ivs[i] = ds.ivs[perm[i]];
        }
        ds = std::move(shuffled);
    }
    ds.header.record_count = ds.records.size();
    ds.header.class_counts = {samples_per_class, samples_per_class};

    Scenario scenario{key, key, rounds, rounds};
    auto split_seed = derive_seed(cfg.master_seed, "oracle-split");
    auto [train_ds, holdout_ds] = data::split_dataset(ds, 0.8, split_seed);

    nn::TrainConfig tc = cfg.trainer;
    tc.seed = derive_seed(cfg.master_seed, "oracle-train");
    nn::TrainedModel model = nn::train(cfg.model, tc, train_ds, holdout_ds, cfg.log);
    nn::EvalOutcome dl_outcome = nn::evaluate(model, holdout_ds);

    gbdt::GbdtHyperParams hp;
    hp.max_depth = 3;
    hp.n_estimators = 20;
    gbdt::FeatureMatrix f_train = extract_for(model, train_ds);
    gbdt::FeatureMatrix f_holdout = extract_for(model, holdout_ds);
    gbdt::BoostedEnsemble ens = gbdt::fit_gbdt(f_train, hp, derive_seed(cfg.master_seed, "oracle-gbdt"));
    ConfusionCounts tl_counts = gbdt::evaluate_ensemble(ens, f_holdout);

    // shuffled-label controls: same inputs, labels detached from them
    data::Dataset control = ds;
    {
        std::vector<std::uint8_t> labels;
        labels.reserve(control.records.size());
        for (const auto& r : control.records) labels.push_back(r.label);
        SplitMix64 rng(derive_seed(cfg.master_seed, "oracle-label-shuffle"));
        deterministic_shuffle(labels, rng);
        for (std::size_t i = 0; i < labels.size(); ++i) control.records[i].label = labels[i];
    }
    auto [ctl_train, ctl_holdout] = data::split_dataset(control, 0.8, split_seed);
    nn::TrainConfig ctl_tc = tc;
    ctl_tc.seed = derive_seed(cfg.master_seed, "oracle-control-train");
    nn::TrainedModel ctl_model = nn::train(cfg.model, ctl_tc, ctl_train, ctl_holdout, cfg.log);
    nn::EvalOutcome ctl_outcome = nn::evaluate(ctl_model, ctl_holdout);

    gbdt::FeatureMatrix cf_train = extract_for(model, ctl_train);
    gbdt::FeatureMatrix cf_holdout = extract_for(model, ctl_holdout);
    gbdt::BoostedEnsemble ctl_ens =
        gbdt::fit_gbdt(cf_train, hp, derive_seed(cfg.master_seed, "oracle-gbdt-control"));
    ConfusionCounts ctl_tl_counts = gbdt::evaluate_ensemble(ctl_ens, cf_holdout);

    json base{{"oracle", "fixed_iv"}, {"iv", iv}, {"rounds", rounds},
              {"samples_per_class", samples_per_class}};
    LearnabilityReport report{
        make_report(Pipeline::dl, scenario, dl_outcome.counts, samples_per_class, cfg.master_seed,
                    base.dump()),
        make_report(Pipeline::tl, scenario, tl_counts, samples_per_class, cfg.master_seed, base.dump()),
        make_report(Pipeline::dl, scenario, ctl_outcome.counts, samples_per_class, cfg.master_seed,
                    base.dump()),
        make_report(Pipeline::tl, scenario, ctl_tl_counts, samples_per_class, cfg.master_seed,
                    base.dump())};
    return report;
}

ReportRow to_row(const MetricsReport& r) {
    ReportRow row;
    row.pipeline = pipeline_name(r.pipeline);
    row.scenario = scenario_kind_name(r.scenario.kind());
    row.train_key = data::key_id_name(r.scenario.train_key);
    row.eval_key = data::key_id_name(r.scenario.eval_key);
    row.train_rounds = r.scenario.train_rounds;
    row.eval_rounds = r.scenario.eval_rounds;
    row.samples_per_class = r.samples_per_class;
    row.accuracy = r.accuracy;
    row.tpr = r.tpr;
    row.tnr = r.tnr;
    row.seed = r.seed;
    return row;
}

std::string report_csv_header() {
    return "pipeline,scenario,train_key,eval_key,train_rounds,eval_rounds,"
           "samples_per_class,accuracy,tpr,tnr,seed";
}

void emit_report(std::vector<MetricsReport> reports, ReportFormat format, std::ostream& out) {
    std::stable_sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
        auto key = [](const MetricsReport& r) {
            return std::tuple(static_cast<int>(r.pipeline), static_cast<int>(r.scenario.kind()),
                              r.scenario.train_rounds, r.scenario.eval_rounds, r.samples_per_class);
        };
        return key(a) < key(b);
    });

    if (format == ReportFormat::machine) {
        out << report_csv_header() << "\n";
        for (const auto& r : reports) {
            ReportRow row = to_row(r);
            out << row.pipeline << ',' << row.scenario << ',' << row.train_key << ',' << row.eval_key
                << ',' << row.train_rounds << ',' << row.eval_rounds << ',' << row.samples_per_class
                << ',' << double_to_string(row.accuracy) << ','
                << (row.tpr ? double_to_string(*row.tpr) : "na") << ','
                << (row.tnr ? double_to_string(*row.tnr) : "na") << ',' << row.seed << "\n";
        }
        return;
    }

    // human tables grouped like the result tables: one block per
    // (pipeline, scenario), rows by rounds and sample count
    std::size_t i = 0;
    while (i < reports.size()) {
        std::size_t j = i;
        while (j < reports.size() && reports[j].pipeline == reports[i].pipeline &&
               reports[j].scenario.kind() == reports[i].scenario.kind()) {
            ++j;
        }
        const auto& head = reports[i];
        out << "== pipeline " << pipeline_name(head.pipeline) << " | "
            << scenario_kind_name(head.scenario.kind()) << " ==\n";
        out << std::left << std::setw(14) << "rounds" << std::setw(18) << "samples/class"
            << std::setw(12) << "accuracy" << std::setw(12) << "tpr" << std::setw(12) << "tnr"
            << "\n";
        for (std::size_t k = i; k < j; ++k) {
            const auto& r = reports[k];
            std::ostringstream rounds;
            rounds << r.scenario.train_rounds;
            if (r.scenario.eval_rounds != r.scenario.train_rounds) {
                rounds << "->" << r.scenario.eval_rounds;
            }
            auto fmt = [](const std::optional<double>& v) {
                if (!v) return std::string("n/a");
                std::ostringstream s;
                s << std::fixed << std::setprecision(4) << *v;
                return s.str();
            };
            out << std::left << std::setw(14) << rounds.str() << std::setw(18) << r.samples_per_class
                << std::setw(12) << fmt(r.accuracy) << std::setw(12) << fmt(r.tpr) << std::setw(12)
                << fmt(r.tnr) << "\n";
        }
        i = j;
    }
}

std::vector<ReportRow> parse_report_rows(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != report_csv_header()) {
        throw FormatError(FormatError::Kind::bad_magic, "missing report header row");
    }
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (true) {
            std::size_t comma = line.find(',', pos);
            fields.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (fields.size() != 11) {
            throw FormatError(FormatError::Kind::inconsistent, "report row has wrong column count");
        }
        ReportRow row;
        row.pipeline = fields[0];
        row.scenario = fields[1];
        row.train_key = fields[2];
        row.eval_key = fields[3];
        row.train_rounds = std::stoi(fields[4]);
        row.eval_rounds = std::stoi(fields[5]);
        row.samples_per_class = std::stoull(fields[6]);
        row.accuracy = double_from_string(fields[7]);
        if (fields[8] != "na") row.tpr = double_from_string(fields[8]);
        if (fields[9] != "na") row.tnr = double_from_string(fields[9]);
        row.seed = std::stoull(fields[10]);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace mcw::eval
