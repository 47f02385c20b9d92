#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mcw/dataset.hpp"
#include "mcw/gbdt.hpp"
#include "mcw/harness.hpp"
#include "mcw/metrics.hpp"
#include "mcw/speck.hpp"
#include "mcw/train.hpp"
#include "mcw/tune.hpp"

namespace py = pybind11;
using namespace mcw;

namespace {

speck::Key key_from_py(const py::bytes& raw) {
    std::string s = raw;
    if (s.size() != 8) throw py::value_error("key must be exactly 8 bytes");
    std::array<std::uint8_t, 8> bytes{};
    std::copy(s.begin(), s.end(), reinterpret_cast<char*>(bytes.data()));
    return speck::key_from_bytes(bytes);
}

py::bytes key_to_py(const speck::Key& key) {
    auto bytes = speck::key_to_bytes(key);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

data::Dataset dataset_from_arrays(py::array_t<std::uint32_t> ciphertexts,
                                  py::array_t<std::uint8_t> labels) {
    auto ct = ciphertexts.unchecked<1>();
    auto lb = labels.unchecked<1>();
    if (ct.shape(0) != lb.shape(0)) throw py::value_error("ciphertexts and labels must align");
    data::Dataset ds;
    ds.header.record_count = static_cast<std::uint64_t>(ct.shape(0));
    for (py::ssize_t i = 0; i < ct.shape(0); ++i) {
        std::uint8_t label = lb(i);
        if (label > 1) throw py::value_error("labels must be 0 or 1");
        ds.records.push_back({ct(i), label});
        ++ds.header.class_counts[label];
    }
    return ds;
}

std::pair<py::array_t<std::uint32_t>, py::array_t<std::uint8_t>> dataset_to_arrays(
    const data::Dataset& ds) {
    py::array_t<std::uint32_t> ct(std::vector<py::ssize_t>{static_cast<py::ssize_t>(ds.records.size())});
    py::array_t<std::uint8_t> lb(std::vector<py::ssize_t>{static_cast<py::ssize_t>(ds.records.size())});
    auto c = ct.mutable_unchecked<1>();
    auto l = lb.mutable_unchecked<1>();
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        c(static_cast<py::ssize_t>(i)) = ds.records[i].ciphertext;
        l(static_cast<py::ssize_t>(i)) = ds.records[i].label;
    }
    return {ct, lb};
}

gbdt::FeatureMatrix features_from_arrays(py::array_t<float, py::array::c_style | py::array::forcecast> x,
                                         py::array_t<std::uint8_t> y) {
    auto xv = x.unchecked<2>();
    auto yv = y.unchecked<1>();
    if (xv.shape(0) != yv.shape(0)) throw py::value_error("features and labels must align");
    gbdt::FeatureMatrix fm;
    fm.rows = static_cast<std::size_t>(xv.shape(0));
    fm.cols = static_cast<std::size_t>(xv.shape(1));
    fm.values.assign(x.data(), x.data() + fm.rows * fm.cols);
    fm.labels.assign(y.data(), y.data() + fm.rows);
    return fm;
}

py::dict header_dict(const data::DatasetHeader& h) {
    py::dict d;
    d["key_id"] = data::key_id_name(h.key_id);
    d["key_bytes"] = py::bytes(reinterpret_cast<const char*>(h.key_bytes.data()), 8);
    d["rounds"] = h.rounds;
    d["p1"] = h.messages.p1;
    d["p2"] = h.messages.p2;
    d["seed"] = h.seed;
    d["record_count"] = h.record_count;
    d["class_counts"] = py::make_tuple(h.class_counts[0], h.class_counts[1]);
    d["store_ivs"] = h.store_ivs;
    return d;
}

gbdt::GbdtHyperParams hp_from_kwargs(int max_depth, int n_estimators, double learning_rate,
                                     double lambda_, double alpha, double subsample,
                                     double colsample_bytree, double gamma, double min_child_weight,
                                     double reg_alpha, double reg_lambda) {
    gbdt::GbdtHyperParams hp;
    hp.max_depth = max_depth;
    hp.n_estimators = n_estimators;
    hp.learning_rate = learning_rate;
    hp.lambda = lambda_;
    hp.alpha = alpha;
    hp.subsample = subsample;
    hp.colsample_bytree = colsample_bytree;
    hp.gamma = gamma;
    hp.min_child_weight = min_child_weight;
    hp.reg_alpha = reg_alpha;
    hp.reg_lambda = reg_lambda;
    return hp;
}

py::dict hp_dict(const gbdt::GbdtHyperParams& hp) {
    py::dict d;
    d["max_depth"] = hp.max_depth;
    d["n_estimators"] = hp.n_estimators;
    d["learning_rate"] = hp.learning_rate;
    d["lambda"] = hp.lambda;
    d["alpha"] = hp.alpha;
    d["subsample"] = hp.subsample;
    d["colsample_bytree"] = hp.colsample_bytree;
    d["gamma"] = hp.gamma;
    d["min_child_weight"] = hp.min_child_weight;
    d["reg_alpha"] = hp.reg_alpha;
    d["reg_lambda"] = hp.reg_lambda;
    return d;
}

struct PyModel {
    nn::TrainedModel model;

    py::array_t<float> predict(py::array_t<std::uint32_t> ciphertexts) const {
        auto ct = ciphertexts.unchecked<1>();
        std::vector<data::DatasetRecord> records(static_cast<std::size_t>(ct.shape(0)));
        for (py::ssize_t i = 0; i < ct.shape(0); ++i) records[static_cast<std::size_t>(i)] = {ct(i), 0};
        auto batch = nn::batch_from_records<float>(records);
        auto probs = nn::forward(model.config, model.params, batch, nn::Mode::inference);
        py::array_t<float> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(probs.size())});
        std::copy(probs.begin(), probs.end(), out.mutable_data());
        return out;
    }

    py::array_t<float> extract(py::array_t<std::uint32_t> ciphertexts) const {
        auto ct = ciphertexts.unchecked<1>();
        std::vector<data::DatasetRecord> records(static_cast<std::size_t>(ct.shape(0)));
        for (py::ssize_t i = 0; i < ct.shape(0); ++i) records[static_cast<std::size_t>(i)] = {ct(i), 0};
        auto batch = nn::batch_from_records<float>(records);
        auto flat = nn::flatten_activations(model.config, model.params, batch);
        py::array_t<float> out(std::vector<py::ssize_t>{ct.shape(0), static_cast<py::ssize_t>(model.config.flatten_dim())});
        std::copy(flat.begin(), flat.end(), out.mutable_data());
        return out;
    }
};

struct PyEnsemble {
    gbdt::BoostedEnsemble ens;

    py::array_t<double> predict_proba(
        py::array_t<float, py::array::c_style | py::array::forcecast> x) const {
        auto xv = x.unchecked<2>();
        gbdt::FeatureMatrix fm;
        fm.rows = static_cast<std::size_t>(xv.shape(0));
        fm.cols = static_cast<std::size_t>(xv.shape(1));
        fm.values.assign(x.data(), x.data() + fm.rows * fm.cols);
        fm.labels.assign(fm.rows, 0);
        auto probs = gbdt::predict_proba(ens, fm);
        py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(probs.size())});
        std::copy(probs.begin(), probs.end(), out.mutable_data());
        return out;
    }
};

} // namespace

PYBIND11_MODULE(_mcw, m) {
    m.doc() = "SPECK32/64-CBC indistinguishability workbench: cipher, dataset, distinguisher, "
              "and transfer-learning primitives";

    // cipher
    m.def("key_schedule",
          [](const py::bytes& key, int rounds) { return speck::key_schedule(key_from_py(key), rounds); },
          py::arg("key"), py::arg("rounds"));
    m.def("encrypt_block",
          [](std::uint32_t pt, const py::bytes& key, int rounds) {
              auto sched = speck::key_schedule(key_from_py(key), rounds);
              return speck::to_u32(speck::encrypt_block(speck::block_from_u32(pt), sched));
          },
          py::arg("plaintext"), py::arg("key"), py::arg("rounds") = speck::kMaxRounds);
    m.def("decrypt_block",
          [](std::uint32_t ct, const py::bytes& key, int rounds) {
              auto sched = speck::key_schedule(key_from_py(key), rounds);
              return speck::to_u32(speck::decrypt_block(speck::block_from_u32(ct), sched));
          },
          py::arg("ciphertext"), py::arg("key"), py::arg("rounds") = speck::kMaxRounds);
    m.def("cbc_encrypt",
          [](const std::vector<std::uint32_t>& blocks, const py::bytes& key, int rounds,
             std::uint32_t iv) {
              std::vector<speck::Block> pt;
              for (auto b : blocks) pt.push_back(speck::block_from_u32(b));
              auto ct = speck::cbc_encrypt(pt, key_from_py(key), rounds, speck::block_from_u32(iv));
              std::vector<std::uint32_t> out;
              for (auto b : ct.blocks) out.push_back(speck::to_u32(b));
              return py::make_tuple(speck::to_u32(ct.iv), out);
          },
          py::arg("blocks"), py::arg("key"), py::arg("rounds"), py::arg("iv"));
    m.def("cbc_decrypt",
          [](std::uint32_t iv, const std::vector<std::uint32_t>& blocks, const py::bytes& key,
             int rounds) {
              speck::CbcCiphertext ct;
              ct.iv = speck::block_from_u32(iv);
              for (auto b : blocks) ct.blocks.push_back(speck::block_from_u32(b));
              std::vector<std::uint32_t> out;
              for (auto b : speck::cbc_decrypt(ct, key_from_py(key), rounds)) {
                  out.push_back(speck::to_u32(b));
              }
              return out;
          },
          py::arg("iv"), py::arg("blocks"), py::arg("key"), py::arg("rounds"));

    // dataset
    m.def("default_keys", [] {
        auto [k1, k2] = data::default_keys();
        return py::make_tuple(key_to_py(k1), key_to_py(k2));
    });
    m.def("to_bit_vector", [](std::uint32_t block) {
        auto bits = data::to_bit_vector(block);
        py::array_t<std::uint8_t> out(std::vector<py::ssize_t>{32});
        std::copy(bits.begin(), bits.end(), out.mutable_data());
        return out;
    });
    m.def("generate_dataset",
          [](const py::bytes& key, int rounds, std::uint64_t samples_per_class, std::uint64_t seed,
             std::uint32_t p1, std::uint32_t p2, bool store_ivs) {
              data::GeneratorConfig cfg;
              cfg.key = key_from_py(key);
              cfg.rounds = rounds;
              cfg.samples_per_class = samples_per_class;
              cfg.seed = seed;
              cfg.messages = data::MessagePair{p1, p2};
              cfg.store_ivs = store_ivs;
              auto ds = data::generate_dataset(cfg);
              auto [ct, lb] = dataset_to_arrays(ds);
              return py::make_tuple(ct, lb, header_dict(ds.header));
          },
          py::arg("key"), py::arg("rounds"), py::arg("samples_per_class"), py::arg("seed") = 0,
          py::arg("p1") = 0x00000000u, py::arg("p2") = 0x00000001u, py::arg("store_ivs") = false);
    m.def("load_dataset", [](const std::string& path) {
        auto ds = data::load_dataset(path);
        auto [ct, lb] = dataset_to_arrays(ds);
        return py::make_tuple(ct, lb, header_dict(ds.header));
    });

    // metrics
    m.def("compute_metrics",
          [](std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn) {
              auto metrics = eval::compute_metrics({tp, tn, fp, fn});
              py::dict d;
              d["accuracy"] = metrics.accuracy;
              d["tpr"] = metrics.tpr ? py::object(py::float_(*metrics.tpr)) : py::none();
              d["tnr"] = metrics.tnr ? py::object(py::float_(*metrics.tnr)) : py::none();
              return d;
          },
          py::arg("tp"), py::arg("tn"), py::arg("fp"), py::arg("fn"));

    // distinguisher
    py::class_<PyModel>(m, "Distinguisher")
        .def("predict", &PyModel::predict, py::arg("ciphertexts"),
             "probability of class 1 per 32-bit ciphertext")
        .def("extract_features", &PyModel::extract, py::arg("ciphertexts"),
             "flatten-layer activations, one row per ciphertext")
        .def_property_readonly("provenance", [](const PyModel& p) { return p.model.provenance_json; })
        .def_property_readonly("flatten_dim",
                               [](const PyModel& p) { return p.model.config.flatten_dim(); })
        .def("save", [](const PyModel& p, const std::string& path) { nn::save_model(p.model, path); });

    m.def("train_distinguisher",
          [](py::array_t<std::uint32_t> train_ct, py::array_t<std::uint8_t> train_y,
             py::array_t<std::uint32_t> val_ct, py::array_t<std::uint8_t> val_y, int block1_filters,
             int residual_blocks, std::vector<int> dense_widths, int epochs, int batch_size,
             double lr_high, double lr_low, int lr_cycle_epochs, std::uint64_t seed) {
              nn::ModelConfig mc;
              mc.block1_filters = block1_filters;
              mc.residual_blocks = residual_blocks;
              mc.dense_widths = std::move(dense_widths);
              nn::TrainConfig tc;
              tc.epochs = epochs;
              tc.batch_size = batch_size;
              tc.lr_high = lr_high;
              tc.lr_low = lr_low;
              tc.lr_cycle_epochs = lr_cycle_epochs;
              tc.seed = seed;
              auto train_ds = dataset_from_arrays(train_ct, train_y);
              auto val_ds = dataset_from_arrays(val_ct, val_y);
              return PyModel{nn::train(mc, tc, train_ds, val_ds)};
          },
          py::arg("train_ciphertexts"), py::arg("train_labels"), py::arg("val_ciphertexts"),
          py::arg("val_labels"), py::arg("block1_filters") = 32, py::arg("residual_blocks") = 1,
          py::arg("dense_widths") = std::vector<int>{64, 64}, py::arg("epochs") = 20,
          py::arg("batch_size") = 500, py::arg("lr_high") = 2e-3, py::arg("lr_low") = 1e-4,
          py::arg("lr_cycle_epochs") = 10, py::arg("seed") = 0);
    m.def("evaluate_distinguisher",
          [](const PyModel& model, py::array_t<std::uint32_t> ct, py::array_t<std::uint8_t> y) {
              auto ds = dataset_from_arrays(ct, y);
              auto outcome = nn::evaluate(model.model, ds);
              py::dict d;
              d["accuracy"] = outcome.accuracy;
              d["tp"] = outcome.counts.tp;
              d["tn"] = outcome.counts.tn;
              d["fp"] = outcome.counts.fp;
              d["fn"] = outcome.counts.fn;
              return d;
          });
    m.def("load_model", [](const std::string& path) { return PyModel{nn::load_model(path)}; });

    // boosted classifier
    py::class_<PyEnsemble>(m, "BoostedClassifier")
        .def("predict_proba", &PyEnsemble::predict_proba, py::arg("features"))
        .def_property_readonly("n_trees", [](const PyEnsemble& e) { return e.ens.trees.size(); })
        .def_property_readonly("params", [](const PyEnsemble& e) { return hp_dict(e.ens.params); })
        .def("save",
             [](const PyEnsemble& e, const std::string& path) { gbdt::save_ensemble(e.ens, path); });

    m.def("fit_gbdt",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> x,
             py::array_t<std::uint8_t> y, int max_depth, int n_estimators, double learning_rate,
             double lambda_, double alpha, double subsample, double colsample_bytree, double gamma,
             double min_child_weight, double reg_alpha, double reg_lambda, std::uint64_t seed) {
              auto fm = features_from_arrays(x, y);
              auto hp = hp_from_kwargs(max_depth, n_estimators, learning_rate, lambda_, alpha,
                                       subsample, colsample_bytree, gamma, min_child_weight,
                                       reg_alpha, reg_lambda);
              return PyEnsemble{gbdt::fit_gbdt(fm, hp, seed)};
          },
          py::arg("features"), py::arg("labels"), py::arg("max_depth") = 4,
          py::arg("n_estimators") = 100, py::arg("learning_rate") = 0.3, py::arg("lambda_") = 1.0,
          py::arg("alpha") = 0.0, py::arg("subsample") = 1.0, py::arg("colsample_bytree") = 1.0,
          py::arg("gamma") = 0.0, py::arg("min_child_weight") = 1.0, py::arg("reg_alpha") = 0.0,
          py::arg("reg_lambda") = 0.0, py::arg("seed") = 0);
    m.def("tune_gbdt",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> train_x,
             py::array_t<std::uint8_t> train_y,
             py::array_t<float, py::array::c_style | py::array::forcecast> val_x,
             py::array_t<std::uint8_t> val_y, int trials, int checkpoints, std::uint64_t seed) {
              gbdt::TuneConfig cfg;
              cfg.trials = trials;
              cfg.checkpoints = checkpoints;
              cfg.seed = seed;
              auto result =
                  gbdt::tune(features_from_arrays(train_x, train_y), features_from_arrays(val_x, val_y), cfg);
              py::list trial_list;
              for (const auto& t : result.trials) {
                  py::dict d;
                  d["id"] = t.id;
                  d["params"] = hp_dict(t.params);
                  d["checkpoint_scores"] = t.checkpoint_scores;
                  d["pruned"] = t.pruned;
                  d["final_score"] =
                      t.final_score ? py::object(py::float_(*t.final_score)) : py::none();
                  trial_list.append(d);
              }
              return py::make_tuple(hp_dict(result.best_params), result.best_score, trial_list);
          },
          py::arg("train_features"), py::arg("train_labels"), py::arg("val_features"),
          py::arg("val_labels"), py::arg("trials") = 50, py::arg("checkpoints") = 5,
          py::arg("seed") = 0);
    m.def("load_ensemble", [](const std::string& path) { return PyEnsemble{gbdt::load_ensemble(path)}; });

#ifdef MCW_VERSION_INFO
    m.attr("__version__") = MCW_VERSION_INFO;
#else
    m.attr("__version__") = "dev";
#endif
}
