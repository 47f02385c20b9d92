#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mcw/dataset.hpp"
#include "mcw/gbdt.hpp"
#include "mcw/metrics.hpp"
#include "mcw/train.hpp"
#include "mcw/tune.hpp"

namespace mcw::eval {

enum class Pipeline { dl, tl };

enum class ScenarioKind {
    same_key_same_round,
    same_round_diff_key,
    diff_round_same_key,
    diff_round_diff_key,
};

const char* pipeline_name(Pipeline p);
const char* scenario_kind_name(ScenarioKind k);
std::optional<Pipeline> pipeline_from_name(std::string_view name);
std::optional<ScenarioKind> scenario_kind_from_name(std::string_view name);

/// Train-side and eval-side cryptographic condition. The kind is fully
/// determined by the key/round equalities.
struct Scenario {
    data::KeyId train_key = data::KeyId::k1;
    data::KeyId eval_key = data::KeyId::k1;
    int train_rounds = 5;
    int eval_rounds = 5;

    ScenarioKind kind() const;
    void validate() const; // rounds in range, eval rounds within one of train

    bool operator==(const Scenario&) const = default;
};

struct MetricsReport {
    Pipeline pipeline = Pipeline::dl;
    Scenario scenario;
    std::uint64_t samples_per_class = 0; // training-side samples per class
    std::uint64_t eval_samples = 0;
    ConfusionCounts counts;
    double accuracy = 0.0;
    std::optional<double> tpr, tnr;
    std::uint64_t seed = 0;
    std::string provenance_json;
};

MetricsReport make_report(Pipeline pipeline, const Scenario& scenario, const ConfusionCounts& counts,
                          std::uint64_t samples_per_class, std::uint64_t seed,
                          std::string provenance_json);

struct HarnessConfig {
    std::uint64_t master_seed = 42;
    std::uint64_t train_samples_per_class = 50000;
    std::uint64_t eval_samples_per_class = 10000;
    data::MessagePair messages;
    nn::ModelConfig model;
    nn::TrainConfig trainer;
    double val_fraction = 0.1;
    std::ostream* log = nullptr;
};

/// Seed a scenario-side dataset derives from the master seed; exposed so
/// any artifact can be regenerated from its provenance.
std::uint64_t scenario_dataset_seed(std::uint64_t master_seed, const char* role,
                                    const Scenario& scenario, data::KeyId key, int rounds,
                                    std::uint64_t samples_per_class);

/// Trains the deep distinguisher on the scenario's train side.
nn::TrainedModel train_scenario_model(const Scenario& scenario, const HarnessConfig& cfg);

/// Deep pipeline: train (or reuse) on the train side, evaluate on freshly
/// generated eval-side data.
MetricsReport run_experiment_a(const Scenario& scenario, const HarnessConfig& cfg);
MetricsReport run_experiment_a(const Scenario& scenario, const HarnessConfig& cfg,
                               const nn::TrainedModel& model);

struct SweepSpec {
    std::vector<std::uint64_t> samples_per_class = {5000, 10000, 100000, 200000, 290000};
    double scale = 1.0; // desk runs shrink the tabulated counts

    std::vector<std::uint64_t> scaled() const;
    void validate() const; // positive, ascending
};

struct TlConfig {
    gbdt::TuneConfig tuning;
    double holdout_fraction = 0.2;    // evaluation holdout per sweep point
    double inner_val_fraction = 0.25; // of the training portion, for pruning checkpoints
};

/// Transfer pipeline sweep: per sample count, generate eval-condition data,
/// extract frozen features, tune and fit the boosted classifier, and
/// evaluate on the held-out slice. One report per count.
std::vector<MetricsReport> run_experiment_b(const Scenario& scenario, const SweepSpec& sweep,
                                            const nn::TrainedModel& frozen, const TlConfig& tl,
                                            const HarnessConfig& cfg);

struct LearnabilityReport {
    MetricsReport dl, tl, dl_control, tl_control;
};

/// Degenerate single-IV data (each class one constant vector): both
/// pipelines must saturate, shuffled-label controls must sit at chance.
LearnabilityReport fixed_iv_learnability_oracle(data::KeyId key, int rounds,
                                                std::uint64_t samples_per_class,
                                                const HarnessConfig& cfg);

enum class ReportFormat { human, machine };

/// One machine row per report, fixed header and ordering.
struct ReportRow {
    std::string pipeline, scenario, train_key, eval_key;
    int train_rounds = 0, eval_rounds = 0;
    std::uint64_t samples_per_class = 0;
    double accuracy = 0.0;
    std::optional<double> tpr, tnr;
    std::uint64_t seed = 0;

    bool operator==(const ReportRow&) const = default;
};

ReportRow to_row(const MetricsReport& report);
std::string report_csv_header();

void emit_report(std::vector<MetricsReport> reports, ReportFormat format, std::ostream& out);
std::vector<ReportRow> parse_report_rows(std::istream& in);

} // namespace mcw::eval
