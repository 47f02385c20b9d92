#include "mcw/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mcw/errors.hpp"
#include "mcw/parallel.hpp"
#include "mcw/rng.hpp"

namespace mcw::data {

namespace {

constexpr std::array<std::uint8_t, 8> kKey1Bytes = {0x59, 0xfd, 0x06, 0x41, 0x5f, 0x53, 0xdb, 0x99};
constexpr std::array<std::uint8_t, 8> kKey2Bytes = {0xfd, 0xfe, 0x9c, 0xa6, 0x10, 0x5c, 0xb9, 0xc7};

constexpr char kMagic[4] = {'M', 'C', 'D', 'S'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32_be(std::string& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::uint8_t* p, std::size_t size) : p_(p), size_(size) {}

    std::size_t remaining() const { return size_ - pos_; }

    const std::uint8_t* take(std::size_t n) {
        if (remaining() < n) throw FormatError(FormatError::Kind::truncated, "dataset file truncated");
        const std::uint8_t* out = p_ + pos_;
        pos_ += n;
        return out;
    }

    std::uint16_t u16() {
        const std::uint8_t* b = take(2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        const std::uint8_t* b = take(4);
        return b[0] | (b[1] << 8) | (static_cast<std::uint32_t>(b[2]) << 16) |
               (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::uint64_t u64() {
        std::uint64_t lo = u32();
        std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    std::uint32_t u32_be() {
        const std::uint8_t* b = take(4);
        return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
               (static_cast<std::uint32_t>(b[2]) << 8) | b[3];
    }

private:
    const std::uint8_t* p_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

} // namespace

BitVector32 to_bit_vector(std::uint32_t block) {
    BitVector32 bits;
    for (int i = 0; i < 32; ++i) {
        bits[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((block >> (31 - i)) & 1u);
    }
    return bits;
}

std::uint32_t from_bit_vector(const BitVector32& bits) {
    std::uint32_t block = 0;
    for (int i = 0; i < 32; ++i) {
        block = (block << 1) | bits[static_cast<std::size_t>(i)];
    }
    return block;
}

void MessagePair::validate() const {
    if (std::popcount(p1 ^ p2) != 1) {
        throw ConfigError("message pair must differ in exactly one bit");
    }
}

const char* key_id_name(KeyId id) {
    switch (id) {
        case KeyId::k1: return "k1";
        case KeyId::k2: return "k2";
        default: return "custom";
    }
}

std::optional<KeyId> key_id_from_name(std::string_view name) {
    if (name == "k1") return KeyId::k1;
    if (name == "k2") return KeyId::k2;
    if (name == "custom") return KeyId::custom;
    return std::nullopt;
}

std::pair<speck::Key, speck::Key> default_keys() {
    return {speck::key_from_bytes(kKey1Bytes), speck::key_from_bytes(kKey2Bytes)};
}

speck::Key key_for(KeyId id) {
    auto [k1, k2] = default_keys();
    switch (id) {
        case KeyId::k1: return k1;
        case KeyId::k2: return k2;
        default: throw ConfigError("no fixed key bytes for custom key id");
    }
}

void GeneratorConfig::validate() const {
    if (samples_per_class < 1) throw ConfigError("samples_per_class must be at least 1");
    if (rounds < 1 || rounds > speck::kMaxRounds) {
        throw ConfigError("rounds must be in 1..22, got " + std::to_string(rounds));
    }
    messages.validate();
}

Dataset generate_dataset(const GeneratorConfig& cfg) {
    cfg.validate();

    const std::uint64_t n = cfg.samples_per_class;
    const std::uint64_t total = 2 * n;
    const speck::KeySchedule sched = speck::key_schedule(cfg.key, cfg.rounds);

    Dataset ds;
    ds.records.resize(total);
    ds.ivs.resize(total);

    // per-sample counter-based streams: output is identical no matter how
    // the loop is sharded across workers
    parallel_chunks(total, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t g = begin; g < end; ++g) {
            std::uint8_t label = g < n ? kClassP1 : kClassP2;
            std::uint32_t msg = label == kClassP1 ? cfg.messages.p1 : cfg.messages.p2;
            std::uint32_t iv = static_cast<std::uint32_t>(substream_seed(cfg.seed, "iv", g));
            speck::Block ct = speck::encrypt_block(
                speck::block_from_u32(msg) ^ speck::block_from_u32(iv), sched);
            ds.records[g] = DatasetRecord{speck::to_u32(ct), label};
            ds.ivs[g] = iv;
        }
    });

    std::vector<std::uint32_t> perm(total);
    std::iota(perm.begin(), perm.end(), 0u);
    SplitMix64 rng(derive_seed(cfg.seed, "shuffle"));
    deterministic_shuffle(perm, rng);

    Dataset out;
    out.records.resize(total);
    out.ivs.resize(cfg.store_ivs ? total : 0);
    for (std::uint64_t i = 0; i < total; ++i) {
        out.records[i] = ds.records[perm[i]];
        if (cfg.store_ivs) out.ivs[i] = ds.ivs[perm[i]];
    }

    out.header.key_id = cfg.key_id;
    out.header.key_bytes = speck::key_to_bytes(cfg.key);
    out.header.rounds = static_cast<std::uint32_t>(cfg.rounds);
    out.header.messages = cfg.messages;
    out.header.seed = cfg.seed;
    out.header.record_count = total;
    out.header.class_counts = {n, n};
    out.header.store_ivs = cfg.store_ivs;
    return out;
}

bool audit_roundtrip(const Dataset& ds) {
    if (!ds.header.store_ivs || ds.ivs.size() != ds.records.size()) {
        throw ConfigError("roundtrip audit requires stored IVs");
    }
    speck::Key key = speck::key_from_bytes(ds.header.key_bytes);
    speck::KeySchedule sched = speck::key_schedule(key, static_cast<int>(ds.header.rounds));
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const DatasetRecord& rec = ds.records[i];
        speck::Block pt = speck::decrypt_block(speck::block_from_u32(rec.ciphertext), sched) ^
                          speck::block_from_u32(ds.ivs[i]);
        std::uint32_t expected = rec.label == kClassP1 ? ds.header.messages.p1 : ds.header.messages.p2;
        if (speck::to_u32(pt) != expected) return false;
    }
    return true;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::string buf;
    buf.reserve(kDatasetHeaderSize + ds.records.size() * kDatasetRecordSize + ds.ivs.size() * 4);

    buf.append(kMagic, 4);
    put_u16(buf, ds.header.version);
    buf.push_back(static_cast<char>(ds.header.key_id));
    buf.append(reinterpret_cast<const char*>(ds.header.key_bytes.data()), 8);
    put_u32(buf, ds.header.rounds);
    put_u32(buf, ds.header.messages.p1);
    put_u32(buf, ds.header.messages.p2);
    put_u64(buf, ds.header.seed);
    put_u64(buf, ds.header.record_count);
    put_u64(buf, ds.header.class_counts[0]);
    put_u64(buf, ds.header.class_counts[1]);
    buf.push_back(ds.header.store_ivs ? 1 : 0);

    for (const DatasetRecord& rec : ds.records) {
        put_u32_be(buf, rec.ciphertext);
        buf.push_back(static_cast<char>(rec.label));
    }
    if (ds.header.store_ivs) {
        for (std::uint32_t iv : ds.ivs) put_u32_be(buf, iv);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size());
    if (r.remaining() < 4 || std::memcmp(r.take(4), kMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "not a dataset file: " + path.string());
    }

    Dataset ds;
    ds.header.version = r.u16();
    if (ds.header.version != 1) {
        throw FormatError(FormatError::Kind::bad_version,
                          "unsupported dataset version " + std::to_string(ds.header.version));
    }
    std::uint8_t key_id = *r.take(1);
    if (key_id > 2) throw FormatError(FormatError::Kind::inconsistent, "unknown key id");
    ds.header.key_id = static_cast<KeyId>(key_id);
    std::memcpy(ds.header.key_bytes.data(), r.take(8), 8);
    ds.header.rounds = r.u32();
    ds.header.messages.p1 = r.u32();
    ds.header.messages.p2 = r.u32();
    ds.header.seed = r.u64();
    ds.header.record_count = r.u64();
    ds.header.class_counts[0] = r.u64();
    ds.header.class_counts[1] = r.u64();
    ds.header.store_ivs = *r.take(1) != 0;

    if (ds.header.class_counts[0] + ds.header.class_counts[1] != ds.header.record_count) {
        throw FormatError(FormatError::Kind::inconsistent, "class counts do not sum to record count");
    }

    ds.records.resize(ds.header.record_count);
    for (auto& rec : ds.records) {
        rec.ciphertext = r.u32_be();
        std::uint8_t label = *r.take(1);
        if (label > 1) throw FormatError(FormatError::Kind::inconsistent, "label byte out of range");
        rec.label = label;
    }
    if (ds.header.store_ivs) {
        ds.ivs.resize(ds.header.record_count);
        for (auto& iv : ds.ivs) iv = r.u32_be();
    }
    if (r.remaining() != 0) {
        throw FormatError(FormatError::Kind::inconsistent, "trailing bytes after payload");
    }

    std::array<std::uint64_t, 2> seen{};
    for (const auto& rec : ds.records) ++seen[rec.label];
    if (seen != ds.header.class_counts) {
        throw FormatError(FormatError::Kind::inconsistent, "payload labels disagree with header counts");
    }
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("split fraction must be in (0, 1)");
    }

    std::array<std::vector<std::uint32_t>, 2> by_class;
    for (std::uint32_t i = 0; i < ds.records.size(); ++i) {
        by_class[ds.records[i].label].push_back(i);
    }

    Dataset train, holdout;
    train.header = ds.header;
    holdout.header = ds.header;
    train.header.class_counts = {0, 0};
    holdout.header.class_counts = {0, 0};
    train.header.seed = derive_seed(seed, "split/train");
    holdout.header.seed = derive_seed(seed, "split/holdout");

    auto push = [&](Dataset& dst, std::uint32_t idx) {
        dst.records.push_back(ds.records[idx]);
        ++dst.header.class_counts[ds.records[idx].label];
        if (ds.header.store_ivs) dst.ivs.push_back(ds.ivs[idx]);
    };

    for (int c = 0; c < 2; ++c) {
        auto& indices = by_class[static_cast<std::size_t>(c)];
        SplitMix64 rng(substream_seed(seed, "split/class", static_cast<std::uint64_t>(c)));
        deterministic_shuffle(indices, rng);
        std::size_t n_train =
            static_cast<std::size_t>(fraction * static_cast<double>(indices.size()) + 0.5);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            push(i < n_train ? train : holdout, indices[i]);
        }
    }

    train.header.record_count = train.records.size();
    holdout.header.record_count = holdout.records.size();
    return {train, holdout};
}

} // namespace mcw::data
