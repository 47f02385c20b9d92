#include "mcw/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "mcw/errors.hpp"
#include "mcw/rng.hpp"

namespace mcw::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

using json = nlohmann::json;

std::vector<std::vector<float>*> trainable_arrays(ModelParamsT<float>& p) {
    std::vector<std::vector<float>*> out;
    visit_params(p, [&](std::vector<float>& arr, ArrayKind kind) {
        if (kind == ArrayKind::weights) out.push_back(&arr);
    });
    return out;
}

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long step = 0;

    explicit AdamState(const std::vector<std::vector<float>*>& arrays) {
        for (const auto* a : arrays) {
            m.emplace_back(a->size(), 0.0);
            v.emplace_back(a->size(), 0.0);
        }
    }
};

void adam_step(AdamState& st, const std::vector<std::vector<float>*>& params,
               const std::vector<std::vector<float>*>& grads, const TrainConfig& cfg, double lr) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, st.step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, st.step);
    for (std::size_t a = 0; a < params.size(); ++a) {
        auto& p = *params[a];
        const auto& g = *grads[a];
        auto& m = st.m[a];
        auto& v = st.v[a];
        for (std::size_t i = 0; i < p.size(); ++i) {
            double gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.epsilon);
            p[i] = static_cast<float>(p[i] - update);
        }
    }
}

void check_dataset(const data::Dataset& ds, const char* what) {
    if (ds.records.empty()) throw ConfigError(std::string(what) + " dataset is empty");
    if (ds.header.class_counts[0] == 0 || ds.header.class_counts[1] == 0) {
        throw ConfigError(std::string(what) + " dataset must contain both classes");
    }
}

json header_to_json(const data::DatasetHeader& h) {
    char key_hex[17];
    for (int i = 0; i < 8; ++i) {
        std::snprintf(key_hex + 2 * i, 3, "%02x", h.key_bytes[static_cast<std::size_t>(i)]);
    }
    return json{{"key_id", data::key_id_name(h.key_id)},
                {"key_bytes", key_hex},
                {"rounds", h.rounds},
                {"p1", h.messages.p1},
                {"p2", h.messages.p2},
                {"seed", h.seed},
                {"record_count", h.record_count},
                {"class_counts", {h.class_counts[0], h.class_counts[1]}},
                {"store_ivs", h.store_ivs}};
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr_high", c.lr_high},
                {"lr_low", c.lr_low},
                {"lr_cycle_epochs", c.lr_cycle_epochs},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"epsilon", c.epsilon},
                {"seed", c.seed}};
}

EvalOutcome evaluate_batched(const ModelConfig& cfg, const ModelParamsT<float>& params,
                             const TensorT<float>& all, const std::vector<std::uint8_t>& labels) {
    constexpr std::size_t kEvalBatch = 8192;
    const std::size_t n = all.shape[0];
    const std::size_t row = static_cast<std::size_t>(cfg.input_bits);
    eval::ConfusionCounts counts;
    for (std::size_t start = 0; start < n; start += kEvalBatch) {
        std::size_t stop = std::min(n, start + kEvalBatch);
        TensorT<float> batch({stop - start, all.shape[1], all.shape[2]});
        std::copy(all.data.begin() + static_cast<std::ptrdiff_t>(start * row),
                  all.data.begin() + static_cast<std::ptrdiff_t>(stop * row), batch.data.begin());
        std::vector<float> probs = forward(cfg, params, batch, Mode::inference);
        eval::ConfusionCounts c =
            eval::counts_from_predictions<float>(probs, {labels.data() + start, stop - start});
        counts.tp += c.tp;
        counts.tn += c.tn;
        counts.fp += c.fp;
        counts.fn += c.fn;
    }
    return EvalOutcome{counts, eval::compute_metrics(counts).accuracy};
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(lr_low <= lr_high)) throw ConfigError("lr_low must not exceed lr_high");
    if (lr_cycle_epochs < 1) throw ConfigError("lr_cycle_epochs must be positive");
    if (!(lr_high > 0)) throw ConfigError("learning rate must be positive");
}

double cyclic_lr(int epoch_index, const TrainConfig& cfg) {
    if (epoch_index < 0) throw std::invalid_argument("epoch index must be non-negative");
    int phase = epoch_index % cfg.lr_cycle_epochs;
    return cfg.lr_high - (cfg.lr_high - cfg.lr_low) * static_cast<double>(phase) / cfg.lr_cycle_epochs;
}

TrainedModel train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                   const data::Dataset& train_ds, const data::Dataset& val_ds, std::ostream* log) {
    model_cfg.validate();
    train_cfg.validate();
    check_dataset(train_ds, "train");
    check_dataset(val_ds, "validation");

    TensorT<float> train_x = batch_from_records<float>(train_ds.records);
    std::vector<std::uint8_t> train_y = labels_from_records(train_ds.records);
    TensorT<float> val_x = batch_from_records<float>(val_ds.records);
    std::vector<std::uint8_t> val_y = labels_from_records(val_ds.records);
    const std::size_t n = train_ds.records.size();
    const std::size_t row = static_cast<std::size_t>(model_cfg.input_bits);

    ModelParamsT<float> params = init_params(model_cfg, train_cfg.seed);
    auto param_arrays = trainable_arrays(params);
    AdamState adam(param_arrays);

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);

    ModelParamsT<float> best_params = params;
    double best_val = -1.0;
    int best_epoch = -1;
    double last_train_loss = 0.0;

    const std::size_t batch = static_cast<std::size_t>(train_cfg.batch_size);
    ForwardCacheT<float> cache;

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        const double lr = cyclic_lr(epoch, train_cfg);
        SplitMix64 rng(substream_seed(train_cfg.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch)));
        deterministic_shuffle(order, rng);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            std::size_t stop = std::min(n, start + batch);
            if (stop - start < 2) break; // batch statistics need two samples
            TensorT<float> bx({stop - start, 2, 16});
            std::vector<std::uint8_t> by(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                std::uint32_t src = order[i];
                std::copy_n(train_x.data.begin() + static_cast<std::ptrdiff_t>(src * row), row,
                            bx.data.begin() + static_cast<std::ptrdiff_t>((i - start) * row));
                by[i - start] = train_y[src];
            }

            std::vector<float> probs = forward(model_cfg, params, bx, Mode::train, &cache);
            double loss = bce_loss<float>(probs, by);
            if (!std::isfinite(loss)) {
                throw DivergenceError("training diverged: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", batch offset " + std::to_string(start));
            }
            update_running_stats(params, cache);
            ModelParamsT<float> grads = backward(model_cfg, params, cache, by);
            auto grad_arrays = trainable_arrays(grads);
            adam_step(adam, param_arrays, grad_arrays, train_cfg, lr);

            loss_sum += loss * static_cast<double>(stop - start);
            seen += stop - start;
        }
        last_train_loss = loss_sum / static_cast<double>(seen);

        EvalOutcome val = evaluate_batched(model_cfg, params, val_x, val_y);
        if (val.accuracy > best_val) {
            best_val = val.accuracy;
            best_epoch = epoch;
            best_params = params;
        }
        if (log != nullptr) {
            (*log) << "epoch " << epoch << " lr " << lr << " train_loss " << last_train_loss
                   << " val_acc " << val.accuracy << "\n";
        }
    }

    TrainedModel model;
    model.config = model_cfg;
    model.params = std::move(best_params);

    json prov{{"train_dataset", header_to_json(train_ds.header)},
              {"val_dataset", header_to_json(val_ds.header)},
              {"train_config", train_config_to_json(train_cfg)},
              {"best_epoch", best_epoch},
              {"best_val_accuracy", best_val},
              {"final_train_loss", last_train_loss}};
    prov["param_hash"] = param_hash(model.params);
    model.provenance_json = prov.dump();
    return model;
}

EvalOutcome evaluate(const ModelConfig& cfg, const ModelParamsT<float>& params,
                     const data::Dataset& ds) {
    if (ds.records.empty()) throw ConfigError("cannot evaluate on an empty dataset");
    TensorT<float> x = batch_from_records<float>(ds.records);
    std::vector<std::uint8_t> y = labels_from_records(ds.records);
    return evaluate_batched(cfg, params, x, y);
}

EvalOutcome evaluate(const TrainedModel& model, const data::Dataset& ds) {
    return evaluate(model.config, model.params, ds);
}

std::uint64_t param_hash(const ModelParamsT<float>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    visit_params(params, [&](const std::vector<float>& arr, ArrayKind) {
        for (float f : arr) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int i = 0; i < 4; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    });
    return h;
}

bool params_equal(const ModelParamsT<float>& a, const ModelParamsT<float>& b) {
    std::vector<const std::vector<float>*> arrays_a, arrays_b;
    visit_params(a, [&](const std::vector<float>& arr, ArrayKind) { arrays_a.push_back(&arr); });
    visit_params(b, [&](const std::vector<float>& arr, ArrayKind) { arrays_b.push_back(&arr); });
    if (arrays_a.size() != arrays_b.size()) return false;
    for (std::size_t i = 0; i < arrays_a.size(); ++i) {
        if (arrays_a[i]->size() != arrays_b[i]->size()) return false;
        if (!arrays_a[i]->empty() &&
            std::memcmp(arrays_a[i]->data(), arrays_b[i]->data(), arrays_a[i]->size() * 4) != 0) {
            return false;
        }
    }
    return true;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());

    auto put_u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };

    out.write("MCNN", 4);
    put_u16(1);
    const ModelConfig& c = model.config;
    put_u32(static_cast<std::uint32_t>(c.input_bits));
    put_u32(static_cast<std::uint32_t>(c.words));
    put_u32(static_cast<std::uint32_t>(c.word_size));
    put_u32(static_cast<std::uint32_t>(c.block1_filters));
    put_u32(static_cast<std::uint32_t>(c.residual_blocks));
    put_u32(static_cast<std::uint32_t>(c.dense_widths.size()));
    for (int w : c.dense_widths) put_u32(static_cast<std::uint32_t>(w));

    std::uint64_t total = 0;
    visit_params(model.params, [&](const std::vector<float>& arr, ArrayKind) { total += arr.size(); });
    put_u64(total);
    visit_params(model.params, [&](const std::vector<float>& arr, ArrayKind) {
        out.write(reinterpret_cast<const char*>(arr.data()),
                  static_cast<std::streamsize>(arr.size() * 4));
    });

    put_u32(static_cast<std::uint32_t>(model.provenance_json.size()));
    out.write(model.provenance_json.data(),
              static_cast<std::streamsize>(model.provenance_json.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());

    auto need = [&](void* dst, std::size_t n) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) {
            throw FormatError(FormatError::Kind::truncated, "model file truncated: " + path.string());
        }
    };
    auto get_u16 = [&] { std::uint16_t v = 0; need(&v, 2); return v; };
    auto get_u32 = [&] { std::uint32_t v = 0; need(&v, 4); return v; };
    auto get_u64 = [&] { std::uint64_t v = 0; need(&v, 8); return v; };

    char magic[4];
    need(magic, 4);
    if (std::memcmp(magic, "MCNN", 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "not a model file: " + path.string());
    }
    std::uint16_t version = get_u16();
    if (version != 1) {
        throw FormatError(FormatError::Kind::bad_version,
                          "unsupported model version " + std::to_string(version));
    }

    ModelConfig cfg;
    cfg.input_bits = static_cast<int>(get_u32());
    cfg.words = static_cast<int>(get_u32());
    cfg.word_size = static_cast<int>(get_u32());
    cfg.block1_filters = static_cast<int>(get_u32());
    cfg.residual_blocks = static_cast<int>(get_u32());
    std::uint32_t n_dense = get_u32();
    if (n_dense > 64) {
        throw FormatError(FormatError::Kind::inconsistent, "implausible dense layer count");
    }
    cfg.dense_widths.resize(n_dense);
    for (auto& w : cfg.dense_widths) w = static_cast<int>(get_u32());

    TrainedModel model;
    model.config = cfg;
    model.params = allocate_params<float>(cfg);

    std::uint64_t expected = 0;
    visit_params(model.params, [&](const std::vector<float>& arr, ArrayKind) { expected += arr.size(); });
    std::uint64_t stored = get_u64();
    if (stored != expected) {
        throw FormatError(FormatError::Kind::inconsistent, "parameter count disagrees with config");
    }
    visit_params(model.params, [&](std::vector<float>& arr, ArrayKind) { need(arr.data(), arr.size() * 4); });

    std::uint32_t prov_len = get_u32();
    model.provenance_json.resize(prov_len);
    need(model.provenance_json.data(), prov_len);
    return model;
}

} // namespace mcw::nn
