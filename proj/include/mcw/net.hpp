#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mcw/dataset.hpp"
#include "mcw/tensor.hpp"

namespace mcw::nn {

// The distinguisher is a one-dimensional residual network over the two
// cipher words: a kernel-1 convolution front (block 1), a stack of
// two-convolution residual blocks (block 2), and a dense classification
// head ending in a single sigmoid unit (block 3). Batch normalization and
// ReLU follow every convolution and hidden dense layer.
struct ModelConfig {
    int input_bits = 32;
    int words = 2;
    int word_size = 16;
    int block1_filters = 32;
    int residual_blocks = 1;
    std::vector<int> dense_widths = {64, 64};

    int flatten_dim() const { return word_size * block1_filters; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

inline constexpr int kBlock1Kernel = 1;
inline constexpr int kResidualKernel = 3;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;
inline constexpr double kProbClamp = 1e-7;

template <typename T>
struct ConvLayerT {
    int in_ch = 0, out_ch = 0, kernel = 0;
    std::vector<T> w; // [out_ch][in_ch][kernel]
    std::vector<T> b; // [out_ch]
};

template <typename T>
struct BatchNormT {
    int channels = 0;
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
};

template <typename T>
struct DenseLayerT {
    int in_dim = 0, out_dim = 0;
    std::vector<T> w; // [out_dim][in_dim]
    std::vector<T> b; // [out_dim]
};

template <typename T>
struct ResidualBlockT {
    ConvLayerT<T> conv_a, conv_b;
    BatchNormT<T> bn_a, bn_b;
};

template <typename T>
struct ModelParamsT {
    ConvLayerT<T> conv1;
    BatchNormT<T> bn1;
    std::vector<ResidualBlockT<T>> blocks;
    std::vector<DenseLayerT<T>> dense;
    std::vector<BatchNormT<T>> dense_bn;
    DenseLayerT<T> head;
};

using ModelParams = ModelParamsT<float>;

enum class ArrayKind { weights, stats };

// Declared parameter order; serialization, the optimizer, and the
// gradient checker all walk arrays through here.
template <typename T, typename F>
void visit_params(ModelParamsT<T>& p, F&& f) {
    auto bn = [&](BatchNormT<T>& b) {
        f(b.gamma, ArrayKind::weights);
        f(b.beta, ArrayKind::weights);
        f(b.running_mean, ArrayKind::stats);
        f(b.running_var, ArrayKind::stats);
    };
    f(p.conv1.w, ArrayKind::weights);
    f(p.conv1.b, ArrayKind::weights);
    bn(p.bn1);
    for (auto& blk : p.blocks) {
        f(blk.conv_a.w, ArrayKind::weights);
        f(blk.conv_a.b, ArrayKind::weights);
        bn(blk.bn_a);
        f(blk.conv_b.w, ArrayKind::weights);
        f(blk.conv_b.b, ArrayKind::weights);
        bn(blk.bn_b);
    }
    for (std::size_t i = 0; i < p.dense.size(); ++i) {
        f(p.dense[i].w, ArrayKind::weights);
        f(p.dense[i].b, ArrayKind::weights);
        bn(p.dense_bn[i]);
    }
    f(p.head.w, ArrayKind::weights);
    f(p.head.b, ArrayKind::weights);
}

template <typename T, typename F>
void visit_params(const ModelParamsT<T>& p, F&& f) {
    visit_params(const_cast<ModelParamsT<T>&>(p),
                 [&](auto& arr, ArrayKind kind) { f(static_cast<const std::vector<T>&>(arr), kind); });
}

enum class Mode { train, inference };

template <typename T>
struct BnCacheT {
    std::vector<T> x;       // layer input
    std::vector<T> xhat;    // normalized input
    std::vector<T> inv_std; // per channel, batch (train) or running (inference)
    std::vector<T> y;       // scaled/shifted output, the ReLU input
    std::vector<T> batch_mean, batch_var; // train mode only
};

template <typename T>
struct ForwardCacheT {
    Mode mode = Mode::train;
    int n = 0;
    std::vector<T> input; // [n][words][word_size]
    BnCacheT<T> bn1;
    std::vector<T> block1_act;
    struct ResCache {
        BnCacheT<T> bn_a, bn_b;
        std::vector<T> act_a;      // relu output between the two convolutions
        std::vector<T> branch_act; // relu output of the second convolution
        std::vector<T> out;        // skip + branch
    };
    std::vector<ResCache> blocks;
    std::vector<T> flat; // position-major flatten of the last block output
    struct DenseCache {
        BnCacheT<T> bn;
        std::vector<T> act;
    };
    std::vector<DenseCache> dense;
    std::vector<T> logits;
    std::vector<T> probs;
};

/// Model input layout: one row per cipher word, MSB-first bits.
template <typename T>
TensorT<T> reshape_input(const data::BitVector32& bits);

/// Packs dataset records into a [n][words][word_size] batch plus labels.
template <typename T>
TensorT<T> batch_from_records(std::span<const data::DatasetRecord> records);
std::vector<std::uint8_t> labels_from_records(std::span<const data::DatasetRecord> records);

/// Zero-initialized parameter set with the shapes the config dictates.
template <typename T>
ModelParamsT<T> allocate_params(const ModelConfig& cfg);

ModelParamsT<float> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
ModelParamsT<To> convert_params(const ModelParamsT<From>& p);

template <typename T>
ModelParamsT<T> zero_like(const ModelParamsT<T>& p);

std::size_t trainable_count(const ModelConfig& cfg);

/// Runs the network over a batch; probabilities land in (0, 1). Train mode
/// normalizes with batch statistics (n >= 2 required) and fills `cache` for
/// backward; running statistics are only changed by update_running_stats.
template <typename T>
std::vector<T> forward(const ModelConfig& cfg, const ModelParamsT<T>& params,
                       const TensorT<T>& batch, Mode mode, ForwardCacheT<T>* cache = nullptr);

/// Folds the cached batch statistics into the running estimates.
template <typename T>
void update_running_stats(ModelParamsT<T>& params, const ForwardCacheT<T>& cache,
                          double momentum = kBatchNormMomentum);

/// Mean binary cross-entropy, accumulated in 64-bit; probabilities are
/// clamped to [1e-7, 1 - 1e-7].
template <typename T>
double bce_loss(std::span<const T> probs, std::span<const std::uint8_t> labels);

/// Exact reverse-mode gradients of bce_loss over the cached forward pass.
/// Gradients of running statistics are identically zero.
template <typename T>
ModelParamsT<T> backward(const ModelConfig& cfg, const ModelParamsT<T>& params,
                         const ForwardCacheT<T>& cache, std::span<const std::uint8_t> labels);

/// Activations at the flatten boundary (block 2 output, position-major),
/// inference mode. One row of flatten_dim() values per sample.
template <typename T>
std::vector<T> flatten_activations(const ModelConfig& cfg, const ModelParamsT<T>& params,
                                   const TensorT<T>& batch);

} // namespace mcw::nn
