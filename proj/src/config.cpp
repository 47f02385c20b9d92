#include "mcw/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mcw/errors.hpp"

namespace mcw::cli {

namespace {

struct Field {
    const char* section;
    const char* key;
    std::function<void(RunConfig&, const std::string&)> parse;
    std::function<std::string(const RunConfig&)> emit;
};

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t comma = s.find(',', pos);
        std::string item = trim(s.substr(pos, comma == std::string::npos ? comma : comma - pos));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

template <typename T>
T parse_int(const std::string& s) {
    std::string t = trim(s);
    int base = 10;
    std::size_t skip = 0;
    if (t.rfind("0x", 0) == 0 || t.rfind("0X", 0) == 0) {
        base = 16;
        skip = 2;
    }
    T v{};
    auto [p, ec] = std::from_chars(t.data() + skip, t.data() + t.size(), v, base);
    if (ec != std::errc{} || p != t.data() + t.size()) {
        throw ConfigError("bad integer value: '" + s + "'");
    }
    return v;
}

double parse_double(const std::string& s) {
    std::string t = trim(s);
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size()) {
        throw ConfigError("bad numeric value: '" + s + "'");
    }
    return v;
}

bool parse_bool(const std::string& s) {
    std::string t = trim(s);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw ConfigError("bad boolean value: '" + s + "'");
}

std::string emit_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <typename T>
std::string emit_list(const std::vector<T>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out << ',';
        out << v[i];
    }
    return out.str();
}

std::string emit_hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08" PRIx32, v);
    return buf;
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"run", "master_seed",
         [](RunConfig& c, const std::string& v) { c.master_seed = parse_int<std::uint64_t>(v); },
         [](const RunConfig& c) { return std::to_string(c.master_seed); }},
        {"run", "out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = trim(v); },
         [](const RunConfig& c) { return c.out_dir; }},
        {"run", "experiments",
         [](RunConfig& c, const std::string& v) { c.experiments = split_list(v); },
         [](const RunConfig& c) { return emit_list(c.experiments); }},

        {"data", "rounds_set",
         [](RunConfig& c, const std::string& v) {
             c.rounds_set.clear();
             for (const auto& item : split_list(v)) c.rounds_set.push_back(parse_int<int>(item));
         },
         [](const RunConfig& c) { return emit_list(c.rounds_set); }},
        {"data", "scenario_kinds",
         [](RunConfig& c, const std::string& v) { c.scenario_kinds = split_list(v); },
         [](const RunConfig& c) { return emit_list(c.scenario_kinds); }},
        {"data", "train_samples_per_class",
         [](RunConfig& c, const std::string& v) {
             c.train_samples_per_class = parse_int<std::uint64_t>(v);
         },
         [](const RunConfig& c) { return std::to_string(c.train_samples_per_class); }},
        {"data", "eval_samples_per_class",
         [](RunConfig& c, const std::string& v) {
             c.eval_samples_per_class = parse_int<std::uint64_t>(v);
         },
         [](const RunConfig& c) { return std::to_string(c.eval_samples_per_class); }},
        {"data", "message_p1",
         [](RunConfig& c, const std::string& v) { c.message_p1 = parse_int<std::uint32_t>(v); },
         [](const RunConfig& c) { return emit_hex32(c.message_p1); }},
        {"data", "message_p2",
         [](RunConfig& c, const std::string& v) { c.message_p2 = parse_int<std::uint32_t>(v); },
         [](const RunConfig& c) { return emit_hex32(c.message_p2); }},
        {"data", "store_ivs",
         [](RunConfig& c, const std::string& v) { c.store_ivs = parse_bool(v); },
         [](const RunConfig& c) { return c.store_ivs ? "true" : "false"; }},

        {"model", "block1_filters",
         [](RunConfig& c, const std::string& v) { c.block1_filters = parse_int<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.block1_filters); }},
        {"model", "residual_blocks",
         [](RunConfig& c, const std::string& v) { c.residual_blocks = parse_int<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.residual_blocks); }},
        {"model", "dense_widths",
         [](RunConfig& c, const std::string& v) {
             c.dense_widths.clear();
             for (const auto& item : split_list(v)) c.dense_widths.push_back(parse_int<int>(item));
         },
         [](const RunConfig& c) { return emit_list(c.dense_widths); }},

        {"train", "epochs", [](RunConfig& c, const std::string& v) { c.epochs = parse_int<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.epochs); }},
        {"train", "batch_size",
         [](RunConfig& c, const std::string& v) { c.batch_size = parse_int<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.batch_size); }},
        {"train", "lr_high", [](RunConfig& c, const std::string& v) { c.lr_high = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.lr_high); }},
        {"train", "lr_low", [](RunConfig& c, const std::string& v) { c.lr_low = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.lr_low); }},
        {"train", "lr_cycle_epochs",
         [](RunConfig& c, const std::string& v) { c.lr_cycle_epochs = parse_int<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.lr_cycle_epochs); }},
        {"train", "adam_beta1",
         [](RunConfig& c, const std::string& v) { c.adam_beta1 = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.adam_beta1); }},
        {"train", "adam_beta2",
         [](RunConfig& c, const std::string& v) { c.adam_beta2 = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.adam_beta2); }},
        {"train", "adam_epsilon",
         [](RunConfig& c, const std::string& v) { c.adam_epsilon = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.adam_epsilon); }},
        {"train", "val_fraction",
         [](RunConfig& c, const std::string& v) { c.val_fraction = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.val_fraction); }},

        {"gbdt", "trials", [](RunConfig& c, const std::string& v) { c.trials = parse_int<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.trials); }},
        {"gbdt", "checkpoints",
         [](RunConfig& c, const std::string& v) { c.checkpoints = parse_int<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.checkpoints); }},
        {"gbdt", "holdout_fraction",
         [](RunConfig& c, const std::string& v) { c.holdout_fraction = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.holdout_fraction); }},
        {"gbdt", "inner_val_fraction",
         [](RunConfig& c, const std::string& v) { c.inner_val_fraction = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.inner_val_fraction); }},

        {"sweep", "samples_per_class",
         [](RunConfig& c, const std::string& v) {
             c.sweep_counts.clear();
             for (const auto& item : split_list(v)) {
                 c.sweep_counts.push_back(parse_int<std::uint64_t>(item));
             }
         },
         [](const RunConfig& c) { return emit_list(c.sweep_counts); }},
        {"sweep", "scale",
         [](RunConfig& c, const std::string& v) { c.sweep_scale = parse_double(v); },
         [](const RunConfig& c) { return emit_double(c.sweep_scale); }},
    };
    return table;
}

} // namespace

RunConfig RunConfig::from_ini(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("malformed section at line " + std::to_string(lineno));
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected key = value at line " + std::to_string(lineno));
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));

        bool matched = false;
        for (const auto& f : fields()) {
            if (section == f.section && key == f.key) {
                f.parse(cfg, value);
                matched = true;
                break;
            }
        }
        if (!matched) {
            throw ConfigError("unknown config key '" + section + "." + key + "' at line " +
                              std::to_string(lineno));
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_ini(text);
}

std::string RunConfig::to_ini() const {
    std::ostringstream out;
    std::string current;
    for (const auto& f : fields()) {
        if (current != f.section) {
            if (!current.empty()) out << "\n";
            current = f.section;
            out << "[" << current << "]\n";
        }
        out << f.key << " = " << f.emit(*this) << "\n";
    }
    return out.str();
}

void RunConfig::validate() const {
    model_config().validate();
    train_config().validate();
    data::MessagePair{message_p1, message_p2}.validate();
    if (rounds_set.empty()) throw ConfigError("rounds_set must not be empty");
    for (int r : rounds_set) {
        if (r < 1 || r > speck::kMaxRounds) throw ConfigError("rounds_set entries must be in 1..22");
    }
    for (const auto& k : scenario_kinds) {
        if (!eval::scenario_kind_from_name(k)) throw ConfigError("unknown scenario kind: " + k);
    }
    for (const auto& e : experiments) {
        if (e != "a" && e != "b") throw ConfigError("experiments must be a comma list of: a, b");
    }
    if (train_samples_per_class < 1 || eval_samples_per_class < 1) {
        throw ConfigError("sample counts must be positive");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0,1)");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw ConfigError("holdout_fraction must be in (0,1)");
    }
    if (!(inner_val_fraction > 0.0 && inner_val_fraction < 1.0)) {
        throw ConfigError("inner_val_fraction must be in (0,1)");
    }
    if (trials < 1 || checkpoints < 1) throw ConfigError("gbdt tuning budget must be positive");
    sweep_spec().validate();
}

nn::ModelConfig RunConfig::model_config() const {
    nn::ModelConfig cfg;
    cfg.block1_filters = block1_filters;
    cfg.residual_blocks = residual_blocks;
    cfg.dense_widths = dense_widths;
    return cfg;
}

nn::TrainConfig RunConfig::train_config() const {
    nn::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr_high = lr_high;
    cfg.lr_low = lr_low;
    cfg.lr_cycle_epochs = lr_cycle_epochs;
    cfg.beta1 = adam_beta1;
    cfg.beta2 = adam_beta2;
    cfg.epsilon = adam_epsilon;
    cfg.seed = master_seed;
    return cfg;
}

eval::HarnessConfig RunConfig::harness_config() const {
    eval::HarnessConfig cfg;
    cfg.master_seed = master_seed;
    cfg.train_samples_per_class = train_samples_per_class;
    cfg.eval_samples_per_class = eval_samples_per_class;
    cfg.messages = data::MessagePair{message_p1, message_p2};
    cfg.model = model_config();
    cfg.trainer = train_config();
    cfg.val_fraction = val_fraction;
    return cfg;
}

eval::SweepSpec RunConfig::sweep_spec() const {
    eval::SweepSpec spec;
    spec.samples_per_class = sweep_counts;
    spec.scale = sweep_scale;
    return spec;
}

eval::TlConfig RunConfig::tl_config() const {
    eval::TlConfig tl;
    tl.tuning.trials = trials;
    tl.tuning.checkpoints = checkpoints;
    tl.tuning.seed = master_seed;
    tl.holdout_fraction = holdout_fraction;
    tl.inner_val_fraction = inner_val_fraction;
    return tl;
}

} // namespace mcw::cli
