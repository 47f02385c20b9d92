#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcw/harness.hpp"

namespace mcw::cli {

// Flat sectioned key-value document. Unknown keys are rejected; the fully
// resolved form (defaults included) is echoed back by to_ini so every run
// is regenerable from its log.
struct RunConfig {
    // [run]
    std::uint64_t master_seed = 42;
    std::string out_dir = "out";
    std::vector<std::string> experiments = {"a", "b"};

    // [data]
    std::vector<int> rounds_set = {5, 6, 21, 22};
    std::vector<std::string> scenario_kinds = {"same_key_same_round", "same_round_diff_key",
                                               "diff_round_same_key", "diff_round_diff_key"};
    std::uint64_t train_samples_per_class = 50000;
    std::uint64_t eval_samples_per_class = 10000;
    std::uint32_t message_p1 = 0x00000000;
    std::uint32_t message_p2 = 0x00000001;
    bool store_ivs = false;

    // [model]
    int block1_filters = 32;
    int residual_blocks = 1;
    std::vector<int> dense_widths = {64, 64};

    // [train]
    int epochs = 20;
    int batch_size = 500;
    double lr_high = 2e-3;
    double lr_low = 1e-4;
    int lr_cycle_epochs = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double val_fraction = 0.1;

    // [gbdt]
    int trials = 50;
    int checkpoints = 5;
    double holdout_fraction = 0.2;
    double inner_val_fraction = 0.25;

    // [sweep]
    std::vector<std::uint64_t> sweep_counts = {5000, 10000, 100000, 200000, 290000};
    double sweep_scale = 1.0;

    bool operator==(const RunConfig&) const = default;

    static RunConfig from_ini(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    std::string to_ini() const;
    void validate() const;

    nn::ModelConfig model_config() const;
    nn::TrainConfig train_config() const;
    eval::HarnessConfig harness_config() const;
    eval::SweepSpec sweep_spec() const;
    eval::TlConfig tl_config() const;
};

} // namespace mcw::cli
