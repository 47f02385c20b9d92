#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "mcw/dataset.hpp"
#include "mcw/metrics.hpp"
#include "mcw/net.hpp"

namespace mcw::nn {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 500;
    double lr_high = 2e-3;
    double lr_low = 1e-4;
    int lr_cycle_epochs = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Sawtooth schedule: lr_high at the start of every cycle, decaying
/// linearly toward lr_low across lr_cycle_epochs.
double cyclic_lr(int epoch_index, const TrainConfig& cfg);

struct TrainedModel {
    ModelConfig config;
    ModelParamsT<float> params;
    std::string provenance_json;
};

struct EvalOutcome {
    eval::ConfusionCounts counts;
    double accuracy = 0.0;
};

/// Adam over the cyclic schedule; parameters from the best-validation
/// epoch (ties keep the earlier epoch). Deterministic given the seed.
/// Throws DivergenceError when the loss leaves the finite range.
TrainedModel train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                   const data::Dataset& train_ds, const data::Dataset& val_ds,
                   std::ostream* log = nullptr);

EvalOutcome evaluate(const ModelConfig& cfg, const ModelParamsT<float>& params,
                     const data::Dataset& ds);
EvalOutcome evaluate(const TrainedModel& model, const data::Dataset& ds);

std::uint64_t param_hash(const ModelParamsT<float>& params);
bool params_equal(const ModelParamsT<float>& a, const ModelParamsT<float>& b);

// model file: magic "MCNN", version, config block, parameter blobs in
// declared layer order (f32 little-endian), length-prefixed provenance
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

} // namespace mcw::nn
