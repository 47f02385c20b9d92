#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "mcw/speck.hpp"

namespace mcw::data {

/// A 32-bit block as an MSB-first 0/1 vector, the model input representation.
using BitVector32 = std::array<std::uint8_t, 32>;

BitVector32 to_bit_vector(std::uint32_t block);
std::uint32_t from_bit_vector(const BitVector32& bits);

// class 0 holds ciphertexts of p1, class 1 those of p2
inline constexpr std::uint8_t kClassP1 = 0;
inline constexpr std::uint8_t kClassP2 = 1;

/// The two fixed plaintexts; must be one bit apart.
struct MessagePair {
    std::uint32_t p1 = 0x00000000;
    std::uint32_t p2 = 0x00000001;

    bool operator==(const MessagePair&) const = default;
    void validate() const;
};

enum class KeyId : std::uint8_t { custom = 0, k1 = 1, k2 = 2 };

const char* key_id_name(KeyId id);
std::optional<KeyId> key_id_from_name(std::string_view name);

/// The two fixed dataset keys, K1 then K2.
std::pair<speck::Key, speck::Key> default_keys();
speck::Key key_for(KeyId id);

struct DatasetRecord {
    std::uint32_t ciphertext = 0;
    std::uint8_t label = 0;

    bool operator==(const DatasetRecord&) const = default;
};

struct DatasetHeader {
    std::uint16_t version = 1;
    KeyId key_id = KeyId::custom;
    std::array<std::uint8_t, 8> key_bytes{};
    std::uint32_t rounds = 0;
    MessagePair messages;
    std::uint64_t seed = 0;
    std::uint64_t record_count = 0;
    std::array<std::uint64_t, 2> class_counts{};
    bool store_ivs = false;

    bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
    DatasetHeader header;
    std::vector<DatasetRecord> records;
    std::vector<std::uint32_t> ivs; // aligned with records when header.store_ivs

    bool operator==(const Dataset&) const = default;
};

struct GeneratorConfig {
    speck::Key key;
    KeyId key_id = KeyId::custom;
    int rounds = 5;
    std::uint64_t samples_per_class = 100000;
    std::uint64_t seed = 0;
    MessagePair messages;
    bool store_ivs = false;

    void validate() const;
};

/// Balanced, seeded, bitwise-reproducible dataset of single-block CBC
/// ciphertexts of the two messages.
Dataset generate_dataset(const GeneratorConfig& cfg);

/// Checks that every record decrypts back to its labeled message.
/// Requires stored IVs.
bool audit_roundtrip(const Dataset& ds);

// file format: magic "MCDS", little-endian header integers, then one
// 5-byte record each (big-endian L||R ciphertext + label byte), then
// big-endian IVs when stored
inline constexpr std::size_t kDatasetHeaderSize = 60;
inline constexpr std::size_t kDatasetRecordSize = 5;

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Disjoint (train, holdout) split; class balance preserved within one
/// record per class.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double fraction, std::uint64_t seed);

} // namespace mcw::data
