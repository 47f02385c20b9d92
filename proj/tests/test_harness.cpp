#include "doctest.h"

#include <sstream>

#include "json.hpp"

#include "mcw/errors.hpp"
#include "mcw/harness.hpp"

using namespace mcw;
using namespace mcw::eval;

namespace {

HarnessConfig tiny_harness(std::uint64_t seed) {
    HarnessConfig cfg;
    cfg.master_seed = seed;
    cfg.train_samples_per_class = 400;
    cfg.eval_samples_per_class = 250;
    cfg.model.block1_filters = 4;
    cfg.model.residual_blocks = 1;
    cfg.model.dense_widths = {8, 8};
    cfg.trainer.epochs = 3;
    cfg.trainer.batch_size = 100;
    return cfg;
}

MetricsReport sample_report(Pipeline p, Scenario s, std::uint64_t count, double acc) {
    ConfusionCounts c;
    c.tp = static_cast<std::uint64_t>(acc * 1000);
    c.tn = static_cast<std::uint64_t>(acc * 1000);
    c.fp = 1000 - c.tn;
    c.fn = 1000 - c.tp;
    return make_report(p, s, c, count, 7, "{}");
}

} // namespace

TEST_CASE("scenario kinds derive from key and round equality") {
    CHECK(Scenario{data::KeyId::k1, data::KeyId::k1, 5, 5}.kind() ==
          ScenarioKind::same_key_same_round);
    CHECK(Scenario{data::KeyId::k1, data::KeyId::k2, 5, 5}.kind() ==
          ScenarioKind::same_round_diff_key);
    CHECK(Scenario{data::KeyId::k1, data::KeyId::k1, 5, 6}.kind() ==
          ScenarioKind::diff_round_same_key);
    CHECK(Scenario{data::KeyId::k1, data::KeyId::k2, 6, 5}.kind() ==
          ScenarioKind::diff_round_diff_key);

    CHECK_THROWS_AS((Scenario{data::KeyId::k1, data::KeyId::k1, 0, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((Scenario{data::KeyId::k1, data::KeyId::k1, 5, 23}.validate()), ConfigError);
    CHECK_THROWS_AS((Scenario{data::KeyId::k1, data::KeyId::k1, 5, 7}.validate()), ConfigError);
    CHECK_NOTHROW((Scenario{data::KeyId::k1, data::KeyId::k1, 22, 21}.validate()));
}

TEST_CASE("machine report rows roundtrip through emit and parse") {
    Scenario s1{data::KeyId::k1, data::KeyId::k1, 5, 5};
    Scenario s2{data::KeyId::k1, data::KeyId::k2, 5, 5};
    Scenario s3{data::KeyId::k1, data::KeyId::k1, 6, 5};
    std::vector<MetricsReport> reports = {
        sample_report(Pipeline::tl, s2, 5000, 0.5372),
        sample_report(Pipeline::dl, s1, 50000, 0.9944),
        sample_report(Pipeline::dl, s3, 50000, 0.5016),
        sample_report(Pipeline::tl, s2, 10000, 0.5693),
    };

    std::ostringstream out;
    emit_report(reports, ReportFormat::machine, out);
    std::istringstream in(out.str());
    auto rows = parse_report_rows(in);

    REQUIRE(rows.size() == 4);
    // deterministic ordering: pipeline, scenario kind, rounds, count
    CHECK(rows[0].pipeline == "dl");
    CHECK(rows[0].scenario == "same_key_same_round");
    CHECK(rows[1].scenario == "diff_round_same_key");
    CHECK(rows[2].pipeline == "tl");
    CHECK(rows[2].samples_per_class == 5000);
    CHECK(rows[3].samples_per_class == 10000);

    // exact roundtrip of every carried field
    std::vector<MetricsReport> sorted = {reports[1], reports[2], reports[0], reports[3]};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i] == to_row(sorted[i]));
    }

    // column count matches the fixed schema
    std::istringstream header(out.str());
    std::string first;
    std::getline(header, first);
    CHECK(std::count(first.begin(), first.end(), ',') == 10);
}

TEST_CASE("golden machine report for fixed inputs") {
    Scenario s{data::KeyId::k1, data::KeyId::k2, 5, 5};
    ConfusionCounts c{5372, 5372, 4628, 4628};
    auto report = make_report(Pipeline::tl, s, c, 5000, 42, "{}");
    std::ostringstream out;
    emit_report({report}, ReportFormat::machine, out);
    CHECK(out.str() ==
          "pipeline,scenario,train_key,eval_key,train_rounds,eval_rounds,"
          "samples_per_class,accuracy,tpr,tnr,seed\n"
          "tl,same_round_diff_key,k1,k2,5,5,5000,0.5372,0.5372,0.5372,42\n");
}

TEST_CASE("human report mirrors the table structure") {
    Scenario s{data::KeyId::k1, data::KeyId::k1, 5, 6};
    auto report = sample_report(Pipeline::dl, s, 1000, 0.4990);
    std::ostringstream out;
    emit_report({report}, ReportFormat::human, out);
    std::string text = out.str();
    CHECK(text.find("pipeline dl") != std::string::npos);
    CHECK(text.find("diff_round_same_key") != std::string::npos);
    CHECK(text.find("5->6") != std::string::npos);
    CHECK(text.find("0.4990") != std::string::npos);
}

TEST_CASE("undefined rates print as na and parse back as absent") {
    Scenario s{data::KeyId::k1, data::KeyId::k1, 5, 5};
    ConfusionCounts c{0, 10, 5, 0}; // no positive-class samples
    auto report = make_report(Pipeline::dl, s, c, 10, 1, "{}");

    std::ostringstream out;
    emit_report({report}, ReportFormat::machine, out);
    CHECK(out.str().find(",na,") != std::string::npos);
    std::istringstream in(out.str());
    auto rows = parse_report_rows(in);
    CHECK(!rows[0].tpr.has_value());
    CHECK(rows[0].tnr.has_value());
}

TEST_CASE("experiment a runs end to end at desk scale") {
    HarnessConfig cfg = tiny_harness(11);
    Scenario s{data::KeyId::k1, data::KeyId::k1, 5, 5};
    auto report = run_experiment_a(s, cfg);
    CHECK(report.pipeline == Pipeline::dl);
    CHECK(report.accuracy >= 0.0);
    CHECK(report.accuracy <= 1.0);
    CHECK(report.eval_samples == 500);
    CHECK(report.samples_per_class == 400);

    auto prov = nlohmann::json::parse(report.provenance_json);
    CHECK(prov.contains("model_hash"));
    CHECK(prov.contains("scenario"));
    CHECK(prov["model_provenance"].contains("train_dataset"));
}

TEST_CASE("evaluation never reuses the training dataset") {
    HarnessConfig cfg = tiny_harness(13);
    Scenario s{data::KeyId::k1, data::KeyId::k1, 5, 5};
    auto model = train_scenario_model(s, cfg);

    // the same-condition eval dataset is generated under a distinct seed
    auto prov = nlohmann::json::parse(model.provenance_json);
    std::uint64_t train_seed = prov["train_dataset"]["seed"].get<std::uint64_t>();
    std::uint64_t eval_seed = scenario_dataset_seed(cfg.master_seed, "eval", s, s.eval_key,
                                                    s.eval_rounds, cfg.eval_samples_per_class);
    CHECK(train_seed != eval_seed);

    // a forged model trained on exactly the eval data must be rejected
    nn::TrainedModel forged = model;
    auto forged_prov = nlohmann::json::parse(forged.provenance_json);
    forged_prov["train_dataset"]["seed"] = eval_seed;
    forged_prov["train_dataset"]["rounds"] = s.eval_rounds;
    char key_hex[17];
    auto bytes = speck::key_to_bytes(data::key_for(s.eval_key));
    for (int i = 0; i < 8; ++i) std::snprintf(key_hex + 2 * i, 3, "%02x", bytes[static_cast<std::size_t>(i)]);
    forged_prov["train_dataset"]["key_bytes"] = key_hex;
    forged.provenance_json = forged_prov.dump();
    CHECK_THROWS_AS(run_experiment_a(s, cfg, forged), Error);
}

TEST_CASE("experiment b sweep emits one row per count with provenance") {
    HarnessConfig cfg = tiny_harness(17);
    cfg.train_samples_per_class = 300;
    Scenario s{data::KeyId::k1, data::KeyId::k2, 5, 5};
    auto model = train_scenario_model(s, cfg);

    SweepSpec sweep;
    sweep.samples_per_class = {60, 120};
    TlConfig tl;
    tl.tuning.trials = 2;
    tl.tuning.checkpoints = 2;
    tl.tuning.space.n_estimators = {5, 10};

    auto reports = run_experiment_b(s, sweep, model, tl, cfg);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].samples_per_class == 60);
    CHECK(reports[1].samples_per_class == 120);
    for (const auto& r : reports) {
        CHECK(r.pipeline == Pipeline::tl);
        CHECK(r.eval_samples > 0);
        auto prov = nlohmann::json::parse(r.provenance_json);
        CHECK(prov.contains("best_params"));
        CHECK(prov.contains("extractor_hash"));
        CHECK(prov["tuning_trials"] == 2);
    }

    // sweep scaling maps the tabulated counts down
    SweepSpec scaled;
    scaled.scale = 0.01;
    CHECK(scaled.scaled() == std::vector<std::uint64_t>{50, 100, 1000, 2000, 2900});
    CHECK_THROWS_AS((SweepSpec{{10, 5}, 1.0}.validate()), ConfigError);
}

TEST_CASE("fixed-iv oracle saturates and its control sits at chance") {
    HarnessConfig cfg = tiny_harness(23);
    cfg.trainer.epochs = 6;
    auto result = fixed_iv_learnability_oracle(data::KeyId::k1, 5, 2000, cfg);

    CHECK(result.dl.accuracy >= 0.99);
    CHECK(result.tl.accuracy >= 0.99);
    CHECK(result.dl_control.accuracy > 0.45);
    CHECK(result.dl_control.accuracy < 0.55);
    CHECK(result.tl_control.accuracy > 0.45);
    CHECK(result.tl_control.accuracy < 0.55);
    CHECK_THROWS_AS(fixed_iv_learnability_oracle(data::KeyId::k1, 5, 10, cfg), ConfigError);
}
