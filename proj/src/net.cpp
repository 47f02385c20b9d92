#include "mcw/net.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mcw/errors.hpp"
#include "mcw/parallel.hpp"
#include "mcw/rng.hpp"

namespace mcw::nn {

namespace {

template <typename T>
void conv_alloc(ConvLayerT<T>& c, int in_ch, int out_ch, int kernel) {
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.kernel = kernel;
    c.w.assign(static_cast<std::size_t>(out_ch) * in_ch * kernel, T{0});
    c.b.assign(static_cast<std::size_t>(out_ch), T{0});
}

template <typename T>
void bn_alloc(BatchNormT<T>& b, int channels) {
    b.channels = channels;
    b.gamma.assign(static_cast<std::size_t>(channels), T{1});
    b.beta.assign(static_cast<std::size_t>(channels), T{0});
    b.running_mean.assign(static_cast<std::size_t>(channels), T{0});
    b.running_var.assign(static_cast<std::size_t>(channels), T{1});
}

template <typename T>
void dense_alloc(DenseLayerT<T>& d, int in_dim, int out_dim) {
    d.in_dim = in_dim;
    d.out_dim = out_dim;
    d.w.assign(static_cast<std::size_t>(out_dim) * in_dim, T{0});
    d.b.assign(static_cast<std::size_t>(out_dim), T{0});
}

template <typename T>
ModelParamsT<T> make_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParamsT<T> p;
    conv_alloc(p.conv1, cfg.words, cfg.block1_filters, kBlock1Kernel);
    bn_alloc(p.bn1, cfg.block1_filters);
    p.blocks.resize(static_cast<std::size_t>(cfg.residual_blocks));
    for (auto& blk : p.blocks) {
        conv_alloc(blk.conv_a, cfg.block1_filters, cfg.block1_filters, kResidualKernel);
        bn_alloc(blk.bn_a, cfg.block1_filters);
        conv_alloc(blk.conv_b, cfg.block1_filters, cfg.block1_filters, kResidualKernel);
        bn_alloc(blk.bn_b, cfg.block1_filters);
    }
    int prev = cfg.flatten_dim();
    p.dense.resize(cfg.dense_widths.size());
    p.dense_bn.resize(cfg.dense_widths.size());
    for (std::size_t i = 0; i < cfg.dense_widths.size(); ++i) {
        dense_alloc(p.dense[i], prev, cfg.dense_widths[i]);
        bn_alloc(p.dense_bn[i], cfg.dense_widths[i]);
        prev = cfg.dense_widths[i];
    }
    dense_alloc(p.head, prev, 1);
    return p;
}

// out[n][co][x] = b[co] + sum_{ci,k} w[co][ci][k] * in[n][ci][x+k-pad]
template <typename T>
void conv_forward(const ConvLayerT<T>& c, const std::vector<T>& in, std::vector<T>& out, int n,
                  int len) {
    const int pad = (c.kernel - 1) / 2;
    const std::size_t in_stride = static_cast<std::size_t>(c.in_ch) * len;
    const std::size_t out_stride = static_cast<std::size_t>(c.out_ch) * len;
    out.assign(static_cast<std::size_t>(n) * out_stride, T{0});
    parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t b0, std::size_t b1, std::size_t) {
        for (std::size_t s = b0; s < b1; ++s) {
            const T* xin = in.data() + s * in_stride;
            T* xout = out.data() + s * out_stride;
            for (int co = 0; co < c.out_ch; ++co) {
                const T* wrow = c.w.data() + static_cast<std::size_t>(co) * c.in_ch * c.kernel;
                for (int x = 0; x < len; ++x) {
                    T acc = c.b[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < c.in_ch; ++ci) {
                        for (int k = 0; k < c.kernel; ++k) {
                            int t = x + k - pad;
                            if (t < 0 || t >= len) continue;
                            acc += wrow[static_cast<std::size_t>(ci) * c.kernel + k] *
                                   xin[static_cast<std::size_t>(ci) * len + t];
                        }
                    }
                    xout[static_cast<std::size_t>(co) * len + x] = acc;
                }
            }
        }
    });
}

template <typename T>
void conv_backward(const ConvLayerT<T>& c, const std::vector<T>& in, const std::vector<T>& dout,
                   std::vector<T>* din, ConvLayerT<T>& grad, int n, int len) {
    const int pad = (c.kernel - 1) / 2;
    const std::size_t in_stride = static_cast<std::size_t>(c.in_ch) * len;
    const std::size_t out_stride = static_cast<std::size_t>(c.out_ch) * len;
    if (din != nullptr) din->assign(in.size(), T{0});

    const std::size_t wn = c.w.size(), bcount = c.b.size();
    std::size_t chunks = chunk_count(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(wn + bcount, 0.0));

    parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t b0, std::size_t b1, std::size_t chunk) {
        std::vector<double>& acc = partial[chunk];
        for (std::size_t s = b0; s < b1; ++s) {
            const T* xin = in.data() + s * in_stride;
            const T* dy = dout.data() + s * out_stride;
            for (int co = 0; co < c.out_ch; ++co) {
                const T* dyc = dy + static_cast<std::size_t>(co) * len;
                double bsum = 0;
                for (int x = 0; x < len; ++x) bsum += dyc[x];
                acc[wn + static_cast<std::size_t>(co)] += bsum;
                for (int ci = 0; ci < c.in_ch; ++ci) {
                    for (int k = 0; k < c.kernel; ++k) {
                        double sum = 0;
                        for (int x = 0; x < len; ++x) {
                            int t = x + k - pad;
                            if (t < 0 || t >= len) continue;
                            sum += static_cast<double>(dyc[x]) * xin[static_cast<std::size_t>(ci) * len + t];
                        }
                        acc[(static_cast<std::size_t>(co) * c.in_ch + ci) * c.kernel + k] += sum;
                    }
                }
            }
            if (din != nullptr) {
                T* dx = din->data() + s * in_stride;
                for (int ci = 0; ci < c.in_ch; ++ci) {
                    for (int t = 0; t < len; ++t) {
                        T acc_x{0};
                        for (int co = 0; co < c.out_ch; ++co) {
                            for (int k = 0; k < c.kernel; ++k) {
                                int x = t - k + pad;
                                if (x < 0 || x >= len) continue;
                                acc_x += c.w[(static_cast<std::size_t>(co) * c.in_ch + ci) * c.kernel + k] *
                                         dy[static_cast<std::size_t>(co) * len + x];
                            }
                        }
                        dx[static_cast<std::size_t>(ci) * len + t] = acc_x;
                    }
                }
            }
        }
    });

    // combine chunk partials in chunk order
    for (std::size_t j = 0; j < wn; ++j) {
        double sum = 0;
        for (std::size_t ch = 0; ch < chunks; ++ch) sum += partial[ch][j];
        grad.w[j] = static_cast<T>(sum);
    }
    for (std::size_t j = 0; j < bcount; ++j) {
        double sum = 0;
        for (std::size_t ch = 0; ch < chunks; ++ch) sum += partial[ch][wn + j];
        grad.b[j] = static_cast<T>(sum);
    }
}

template <typename T>
void dense_forward(const DenseLayerT<T>& d, const std::vector<T>& in, std::vector<T>& out, int n) {
    out.assign(static_cast<std::size_t>(n) * d.out_dim, T{0});
    parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t b0, std::size_t b1, std::size_t) {
        for (std::size_t s = b0; s < b1; ++s) {
            const T* xin = in.data() + s * static_cast<std::size_t>(d.in_dim);
            T* xout = out.data() + s * static_cast<std::size_t>(d.out_dim);
            for (int o = 0; o < d.out_dim; ++o) {
                const T* row = d.w.data() + static_cast<std::size_t>(o) * d.in_dim;
                T acc = d.b[static_cast<std::size_t>(o)];
                for (int i = 0; i < d.in_dim; ++i) acc += row[i] * xin[i];
                xout[o] = acc;
            }
        }
    });
}

template <typename T>
void dense_backward(const DenseLayerT<T>& d, const std::vector<T>& in, const std::vector<T>& dout,
                    std::vector<T>* din, DenseLayerT<T>& grad, int n) {
    if (din != nullptr) din->assign(in.size(), T{0});
    const std::size_t wn = d.w.size(), bcount = d.b.size();
    std::size_t chunks = chunk_count(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(wn + bcount, 0.0));

    parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t b0, std::size_t b1, std::size_t chunk) {
        std::vector<double>& acc = partial[chunk];
        for (std::size_t s = b0; s < b1; ++s) {
            const T* xin = in.data() + s * static_cast<std::size_t>(d.in_dim);
            const T* dy = dout.data() + s * static_cast<std::size_t>(d.out_dim);
            for (int o = 0; o < d.out_dim; ++o) {
                double g = dy[o];
                acc[wn + static_cast<std::size_t>(o)] += g;
                double* wrow = acc.data() + static_cast<std::size_t>(o) * d.in_dim;
                for (int i = 0; i < d.in_dim; ++i) wrow[i] += g * xin[i];
            }
            if (din != nullptr) {
                T* dx = din->data() + s * static_cast<std::size_t>(d.in_dim);
                for (int o = 0; o < d.out_dim; ++o) {
                    const T* row = d.w.data() + static_cast<std::size_t>(o) * d.in_dim;
                    T g = dy[o];
                    for (int i = 0; i < d.in_dim; ++i) dx[i] += row[i] * g;
                }
            }
        }
    });

    for (std::size_t j = 0; j < wn; ++j) {
        double sum = 0;
        for (std::size_t ch = 0; ch < chunks; ++ch) sum += partial[ch][j];
        grad.w[j] = static_cast<T>(sum);
    }
    for (std::size_t j = 0; j < bcount; ++j) {
        double sum = 0;
        for (std::size_t ch = 0; ch < chunks; ++ch) sum += partial[ch][wn + j];
        grad.b[j] = static_cast<T>(sum);
    }
}

// Per-channel normalization; reduction spans `span` contiguous positions per
// channel per sample (the word length for conv activations, 1 for dense).
template <typename T>
void bn_forward(const BatchNormT<T>& bn, const std::vector<T>& x, int n, int span, Mode mode,
                BnCacheT<T>& cache) {
    const int C = bn.channels;
    const std::size_t stride = static_cast<std::size_t>(C) * span;
    const double m = static_cast<double>(n) * span;

    cache.x = x;
    cache.xhat.assign(x.size(), T{0});
    cache.y.assign(x.size(), T{0});

    std::vector<double> mean(static_cast<std::size_t>(C), 0.0), var(static_cast<std::size_t>(C), 0.0);
    if (mode == Mode::train) {
        for (int s = 0; s < n; ++s) {
            const T* row = x.data() + static_cast<std::size_t>(s) * stride;
            for (std::size_t j = 0; j < stride; ++j) mean[j / static_cast<std::size_t>(span)] += row[j];
        }
        for (auto& v : mean) v /= m;
        for (int s = 0; s < n; ++s) {
            const T* row = x.data() + static_cast<std::size_t>(s) * stride;
            for (std::size_t j = 0; j < stride; ++j) {
                double d = row[j] - mean[j / static_cast<std::size_t>(span)];
                var[j / static_cast<std::size_t>(span)] += d * d;
            }
        }
        for (auto& v : var) v /= m;
        cache.batch_mean.assign(mean.begin(), mean.end());
        cache.batch_var.assign(var.begin(), var.end());
    } else {
        for (int c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = bn.running_mean[static_cast<std::size_t>(c)];
            var[static_cast<std::size_t>(c)] = bn.running_var[static_cast<std::size_t>(c)];
        }
    }

    cache.inv_std.resize(static_cast<std::size_t>(C));
    std::vector<T> mean_t(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        auto i = static_cast<std::size_t>(c);
        mean_t[i] = static_cast<T>(mean[i]);
        cache.inv_std[i] = static_cast<T>(1.0 / std::sqrt(var[i] + kBatchNormEpsilon));
    }

    for (int s = 0; s < n; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * stride;
        for (int c = 0; c < C; ++c) {
            auto ci = static_cast<std::size_t>(c);
            const T g = bn.gamma[ci], b = bn.beta[ci], mu = mean_t[ci], istd = cache.inv_std[ci];
            for (int l = 0; l < span; ++l) {
                std::size_t i = base + ci * span + static_cast<std::size_t>(l);
                T xh = (x[i] - mu) * istd;
                cache.xhat[i] = xh;
                cache.y[i] = g * xh + b;
            }
        }
    }
}

// Train mode differentiates through the batch statistics; inference mode
// treats them as constants (frozen normalization).
template <typename T>
void bn_backward(const BatchNormT<T>& bn, const BnCacheT<T>& cache, const std::vector<T>& dy,
                 int n, int span, Mode mode, std::vector<T>& dx, BatchNormT<T>& grad) {
    const int C = bn.channels;
    const std::size_t stride = static_cast<std::size_t>(C) * span;
    const double m = static_cast<double>(n) * span;

    std::vector<double> sum_dy(static_cast<std::size_t>(C), 0.0);
    std::vector<double> sum_dy_xhat(static_cast<std::size_t>(C), 0.0);
    for (int s = 0; s < n; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * stride;
        for (int c = 0; c < C; ++c) {
            auto ci = static_cast<std::size_t>(c);
            for (int l = 0; l < span; ++l) {
                std::size_t i = base + ci * span + static_cast<std::size_t>(l);
                sum_dy[ci] += dy[i];
                sum_dy_xhat[ci] += static_cast<double>(dy[i]) * cache.xhat[i];
            }
        }
    }
    for (int c = 0; c < C; ++c) {
        auto ci = static_cast<std::size_t>(c);
        grad.gamma[ci] = static_cast<T>(sum_dy_xhat[ci]);
        grad.beta[ci] = static_cast<T>(sum_dy[ci]);
    }

    dx.assign(dy.size(), T{0});
    for (int s = 0; s < n; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * stride;
        for (int c = 0; c < C; ++c) {
            auto ci = static_cast<std::size_t>(c);
            const double g_istd = static_cast<double>(bn.gamma[ci]) * cache.inv_std[ci];
            const double mean_dy = sum_dy[ci] / m;
            const double mean_dy_xhat = sum_dy_xhat[ci] / m;
            for (int l = 0; l < span; ++l) {
                std::size_t i = base + ci * span + static_cast<std::size_t>(l);
                double v = dy[i];
                if (mode == Mode::train) v -= mean_dy + cache.xhat[i] * mean_dy_xhat;
                dx[i] = static_cast<T>(g_istd * v);
            }
        }
    }
}

template <typename T>
void relu(const std::vector<T>& in, std::vector<T>& out) {
    out.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
}

template <typename T>
void relu_backward(const std::vector<T>& pre, const std::vector<T>& dout, std::vector<T>& din) {
    din.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) din[i] = pre[i] > T{0} ? dout[i] : T{0};
}

template <typename T>
T stable_sigmoid(T z) {
    if (z >= T{0}) {
        T e = std::exp(-z);
        return T{1} / (T{1} + e);
    }
    T e = std::exp(z);
    return e / (T{1} + e);
}

} // namespace

void ModelConfig::validate() const {
    if (words * word_size != input_bits) throw ConfigError("words * word_size must equal input_bits");
    if (dense_widths.empty()) throw ConfigError("dense_widths must be nonempty");
    if (block1_filters < 1) throw ConfigError("block1_filters must be positive");
    if (residual_blocks < 0) throw ConfigError("residual_blocks must be non-negative");
    for (int w : dense_widths) {
        if (w < 1) throw ConfigError("dense widths must be positive");
    }
}

template <typename T>
TensorT<T> reshape_input(const data::BitVector32& bits) {
    TensorT<T> t({2, 16});
    for (std::size_t j = 0; j < 32; ++j) t.data[j] = static_cast<T>(bits[j]);
    return t;
}

template <typename T>
TensorT<T> batch_from_records(std::span<const data::DatasetRecord> records) {
    TensorT<T> t({records.size(), 2, 16});
    for (std::size_t s = 0; s < records.size(); ++s) {
        data::BitVector32 bits = data::to_bit_vector(records[s].ciphertext);
        for (std::size_t j = 0; j < 32; ++j) t.data[s * 32 + j] = static_cast<T>(bits[j]);
    }
    return t;
}

std::vector<std::uint8_t> labels_from_records(std::span<const data::DatasetRecord> records) {
    std::vector<std::uint8_t> labels(records.size());
    for (std::size_t s = 0; s < records.size(); ++s) labels[s] = records[s].label;
    return labels;
}

template <typename T>
ModelParamsT<T> allocate_params(const ModelConfig& cfg) {
    return make_params<T>(cfg);
}

ModelParamsT<float> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParamsT<float> p = make_params<float>(cfg);
    SplitMix64 rng(derive_seed(seed, "init"));
    auto fill_uniform = [&](std::vector<float>& w, int fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w) v = static_cast<float>((rng.next_unit() * 2.0 - 1.0) * bound);
    };
    fill_uniform(p.conv1.w, p.conv1.in_ch * p.conv1.kernel);
    for (auto& blk : p.blocks) {
        fill_uniform(blk.conv_a.w, blk.conv_a.in_ch * blk.conv_a.kernel);
        fill_uniform(blk.conv_b.w, blk.conv_b.in_ch * blk.conv_b.kernel);
    }
    for (auto& d : p.dense) fill_uniform(d.w, d.in_dim);
    fill_uniform(p.head.w, p.head.in_dim);
    return p;
}

template <typename To, typename From>
ModelParamsT<To> convert_params(const ModelParamsT<From>& p) {
    ModelParamsT<To> out;
    auto conv = [](const ConvLayerT<From>& a, ConvLayerT<To>& b) {
        b.in_ch = a.in_ch;
        b.out_ch = a.out_ch;
        b.kernel = a.kernel;
        b.w.assign(a.w.begin(), a.w.end());
        b.b.assign(a.b.begin(), a.b.end());
    };
    auto bn = [](const BatchNormT<From>& a, BatchNormT<To>& b) {
        b.channels = a.channels;
        b.gamma.assign(a.gamma.begin(), a.gamma.end());
        b.beta.assign(a.beta.begin(), a.beta.end());
        b.running_mean.assign(a.running_mean.begin(), a.running_mean.end());
        b.running_var.assign(a.running_var.begin(), a.running_var.end());
    };
    auto dense = [](const DenseLayerT<From>& a, DenseLayerT<To>& b) {
        b.in_dim = a.in_dim;
        b.out_dim = a.out_dim;
        b.w.assign(a.w.begin(), a.w.end());
        b.b.assign(a.b.begin(), a.b.end());
    };
    conv(p.conv1, out.conv1);
    bn(p.bn1, out.bn1);
    out.blocks.resize(p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        conv(p.blocks[i].conv_a, out.blocks[i].conv_a);
        bn(p.blocks[i].bn_a, out.blocks[i].bn_a);
        conv(p.blocks[i].conv_b, out.blocks[i].conv_b);
        bn(p.blocks[i].bn_b, out.blocks[i].bn_b);
    }
    out.dense.resize(p.dense.size());
    out.dense_bn.resize(p.dense_bn.size());
    for (std::size_t i = 0; i < p.dense.size(); ++i) {
        dense(p.dense[i], out.dense[i]);
        bn(p.dense_bn[i], out.dense_bn[i]);
    }
    dense(p.head, out.head);
    return out;
}

template <typename T>
ModelParamsT<T> zero_like(const ModelParamsT<T>& p) {
    ModelParamsT<T> out = p;
    visit_params(out, [](std::vector<T>& arr, ArrayKind) { std::fill(arr.begin(), arr.end(), T{0}); });
    return out;
}

std::size_t trainable_count(const ModelConfig& cfg) {
    auto p = make_params<float>(cfg);
    std::size_t n = 0;
    visit_params(p, [&](const std::vector<float>& arr, ArrayKind kind) {
        if (kind == ArrayKind::weights) n += arr.size();
    });
    return n;
}

template <typename T>
std::vector<T> forward(const ModelConfig& cfg, const ModelParamsT<T>& params, const TensorT<T>& batch,
                       Mode mode, ForwardCacheT<T>* cache) {
    if (batch.shape.size() != 3 || batch.shape[1] != static_cast<std::size_t>(cfg.words) ||
        batch.shape[2] != static_cast<std::size_t>(cfg.word_size)) {
        throw IncompatibleError("batch shape does not match model config");
    }
    const int n = static_cast<int>(batch.shape[0]);
    if (mode == Mode::train && n < 2) {
        throw std::invalid_argument("train mode needs at least 2 samples for batch statistics");
    }
    const int len = cfg.word_size;
    const int F = cfg.block1_filters;

    ForwardCacheT<T> local;
    ForwardCacheT<T>& cc = cache != nullptr ? *cache : local;
    cc = ForwardCacheT<T>{};
    cc.mode = mode;
    cc.n = n;
    cc.input = batch.data;

    std::vector<T> conv_out;
    conv_forward(params.conv1, cc.input, conv_out, n, len);
    bn_forward(params.bn1, conv_out, n, len, mode, cc.bn1);
    relu(cc.bn1.y, cc.block1_act);

    const std::vector<T>* prev = &cc.block1_act;
    cc.blocks.resize(params.blocks.size());
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        auto& blk = params.blocks[i];
        auto& bc = cc.blocks[i];
        std::vector<T> t;
        conv_forward(blk.conv_a, *prev, t, n, len);
        bn_forward(blk.bn_a, t, n, len, mode, bc.bn_a);
        relu(bc.bn_a.y, bc.act_a);
        conv_forward(blk.conv_b, bc.act_a, t, n, len);
        bn_forward(blk.bn_b, t, n, len, mode, bc.bn_b);
        relu(bc.bn_b.y, bc.branch_act);
        bc.out.resize(prev->size());
        for (std::size_t j = 0; j < prev->size(); ++j) bc.out[j] = (*prev)[j] + bc.branch_act[j];
        prev = &bc.out;
    }

    // flatten position-major: [n][c][l] -> [n][l * F + c]
    cc.flat.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(cfg.flatten_dim()), T{0});
    for (int s = 0; s < n; ++s) {
        const T* row = prev->data() + static_cast<std::size_t>(s) * F * len;
        T* out = cc.flat.data() + static_cast<std::size_t>(s) * F * len;
        for (int c = 0; c < F; ++c) {
            for (int l = 0; l < len; ++l) {
                out[static_cast<std::size_t>(l) * F + c] = row[static_cast<std::size_t>(c) * len + l];
            }
        }
    }

    const std::vector<T>* dprev = &cc.flat;
    cc.dense.resize(params.dense.size());
    for (std::size_t i = 0; i < params.dense.size(); ++i) {
        auto& dc = cc.dense[i];
        std::vector<T> t;
        dense_forward(params.dense[i], *dprev, t, n);
        bn_forward(params.dense_bn[i], t, n, 1, mode, dc.bn);
        relu(dc.bn.y, dc.act);
        dprev = &dc.act;
    }

    dense_forward(params.head, *dprev, cc.logits, n);
    cc.probs.resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        T p = stable_sigmoid(cc.logits[static_cast<std::size_t>(s)]);
        p = std::min(std::max(p, static_cast<T>(kProbClamp)), static_cast<T>(1.0 - kProbClamp));
        cc.probs[static_cast<std::size_t>(s)] = p;
    }
    return cc.probs;
}

template <typename T>
void update_running_stats(ModelParamsT<T>& params, const ForwardCacheT<T>& cache, double momentum) {
    if (cache.mode != Mode::train) return;
    auto update = [&](BatchNormT<T>& bn, const BnCacheT<T>& bc) {
        for (int c = 0; c < bn.channels; ++c) {
            auto i = static_cast<std::size_t>(c);
            bn.running_mean[i] =
                static_cast<T>(momentum * bn.running_mean[i] + (1.0 - momentum) * bc.batch_mean[i]);
            bn.running_var[i] =
                static_cast<T>(momentum * bn.running_var[i] + (1.0 - momentum) * bc.batch_var[i]);
        }
    };
    update(params.bn1, cache.bn1);
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        update(params.blocks[i].bn_a, cache.blocks[i].bn_a);
        update(params.blocks[i].bn_b, cache.blocks[i].bn_b);
    }
    for (std::size_t i = 0; i < params.dense_bn.size(); ++i) update(params.dense_bn[i], cache.dense[i].bn);
}

template <typename T>
double bce_loss(std::span<const T> probs, std::span<const std::uint8_t> labels) {
    if (probs.size() != labels.size() || probs.empty()) {
        throw std::invalid_argument("bce_loss: size mismatch or empty input");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double p = std::min(std::max(static_cast<double>(probs[i]), kProbClamp), 1.0 - kProbClamp);
        acc += labels[i] != 0 ? -std::log(p) : -std::log1p(-p);
    }
    return acc / static_cast<double>(probs.size());
}

template <typename T>
ModelParamsT<T> backward(const ModelConfig& cfg, const ModelParamsT<T>& params,
                         const ForwardCacheT<T>& cache, std::span<const std::uint8_t> labels) {
    const int n = cache.n;
    if (labels.size() != static_cast<std::size_t>(n)) {
        throw std::invalid_argument("backward: label count does not match cached batch");
    }
    const int len = cfg.word_size;
    const int F = cfg.block1_filters;
    const Mode mode = cache.mode;
    ModelParamsT<T> grad = zero_like(params);

    // d(mean bce)/d(logit) = (p - y) / n
    std::vector<T> dz(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        auto i = static_cast<std::size_t>(s);
        dz[i] = static_cast<T>((static_cast<double>(cache.probs[i]) - (labels[i] != 0 ? 1.0 : 0.0)) /
                               static_cast<double>(n));
    }

    const std::vector<T>& head_in = cache.dense.empty() ? cache.flat : cache.dense.back().act;
    std::vector<T> d_act;
    dense_backward(params.head, head_in, dz, &d_act, grad.head, n);

    for (std::size_t i = params.dense.size(); i-- > 0;) {
        const auto& dc = cache.dense[i];
        std::vector<T> d_bn_y, d_lin;
        relu_backward(dc.bn.y, d_act, d_bn_y);
        bn_backward(params.dense_bn[i], dc.bn, d_bn_y, n, 1, mode, d_lin, grad.dense_bn[i]);
        const std::vector<T>& in = i == 0 ? cache.flat : cache.dense[i - 1].act;
        dense_backward(params.dense[i], in, d_lin, &d_act, grad.dense[i], n);
    }

    // unflatten back to [n][c][l]
    std::vector<T> d_block(static_cast<std::size_t>(n) * F * len);
    for (int s = 0; s < n; ++s) {
        const T* src = d_act.data() + static_cast<std::size_t>(s) * F * len;
        T* dst = d_block.data() + static_cast<std::size_t>(s) * F * len;
        for (int c = 0; c < F; ++c) {
            for (int l = 0; l < len; ++l) {
                dst[static_cast<std::size_t>(c) * len + l] = src[static_cast<std::size_t>(l) * F + c];
            }
        }
    }

    for (std::size_t i = params.blocks.size(); i-- > 0;) {
        const auto& blk = params.blocks[i];
        const auto& bc = cache.blocks[i];
        const std::vector<T>& block_in = i == 0 ? cache.block1_act : cache.blocks[i - 1].out;

        std::vector<T> d_branch, d_bn, d_conv_in;
        relu_backward(bc.bn_b.y, d_block, d_branch);
        bn_backward(blk.bn_b, bc.bn_b, d_branch, n, len, mode, d_bn, grad.blocks[i].bn_b);
        conv_backward(blk.conv_b, bc.act_a, d_bn, &d_conv_in, grad.blocks[i].conv_b, n, len);
        relu_backward(bc.bn_a.y, d_conv_in, d_branch);
        bn_backward(blk.bn_a, bc.bn_a, d_branch, n, len, mode, d_bn, grad.blocks[i].bn_a);
        conv_backward(blk.conv_a, block_in, d_bn, &d_conv_in, grad.blocks[i].conv_a, n, len);

        // skip connection: gradient reaches the block input through both paths
        for (std::size_t j = 0; j < d_block.size(); ++j) d_block[j] += d_conv_in[j];
    }

    std::vector<T> d_bn1_y, d_conv1;
    relu_backward(cache.bn1.y, d_block, d_bn1_y);
    bn_backward(params.bn1, cache.bn1, d_bn1_y, n, len, mode, d_conv1, grad.bn1);
    conv_backward(params.conv1, cache.input, d_conv1, static_cast<std::vector<T>*>(nullptr), grad.conv1, n, len);

    return grad;
}

template <typename T>
std::vector<T> flatten_activations(const ModelConfig& cfg, const ModelParamsT<T>& params,
                                   const TensorT<T>& batch) {
    ForwardCacheT<T> cache;
    forward(cfg, params, batch, Mode::inference, &cache);
    return std::move(cache.flat);
}

// instantiations for 32-bit storage and the 64-bit verification path
template ModelParamsT<float> allocate_params<float>(const ModelConfig&);
template ModelParamsT<double> allocate_params<double>(const ModelConfig&);
template TensorT<float> reshape_input<float>(const data::BitVector32&);
template TensorT<double> reshape_input<double>(const data::BitVector32&);
template TensorT<float> batch_from_records<float>(std::span<const data::DatasetRecord>);
template TensorT<double> batch_from_records<double>(std::span<const data::DatasetRecord>);
template ModelParamsT<double> convert_params<double, float>(const ModelParamsT<float>&);
template ModelParamsT<float> convert_params<float, double>(const ModelParamsT<double>&);
template ModelParamsT<float> zero_like<float>(const ModelParamsT<float>&);
template ModelParamsT<double> zero_like<double>(const ModelParamsT<double>&);
template std::vector<float> forward<float>(const ModelConfig&, const ModelParamsT<float>&,
                                           const TensorT<float>&, Mode, ForwardCacheT<float>*);
template std::vector<double> forward<double>(const ModelConfig&, const ModelParamsT<double>&,
                                             const TensorT<double>&, Mode, ForwardCacheT<double>*);
template void update_running_stats<float>(ModelParamsT<float>&, const ForwardCacheT<float>&, double);
template void update_running_stats<double>(ModelParamsT<double>&, const ForwardCacheT<double>&, double);
template double bce_loss<float>(std::span<const float>, std::span<const std::uint8_t>);
template double bce_loss<double>(std::span<const double>, std::span<const std::uint8_t>);
template ModelParamsT<float> backward<float>(const ModelConfig&, const ModelParamsT<float>&,
                                             const ForwardCacheT<float>&, std::span<const std::uint8_t>);
template ModelParamsT<double> backward<double>(const ModelConfig&, const ModelParamsT<double>&,
                                               const ForwardCacheT<double>&, std::span<const std::uint8_t>);
template std::vector<float> flatten_activations<float>(const ModelConfig&, const ModelParamsT<float>&,
                                                       const TensorT<float>&);
template std::vector<double> flatten_activations<double>(const ModelConfig&, const ModelParamsT<double>&,
                                                         const TensorT<double>&);

} // namespace mcw::nn
