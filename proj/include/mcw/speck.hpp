#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace mcw::speck {

using Word = std::uint16_t; // all word arithmetic is mod 2^16

inline constexpr int kAlpha = 7;
inline constexpr int kBeta = 2;
inline constexpr int kMaxRounds = 22;

inline Word rotr(Word x, int r) { return static_cast<Word>((x >> r) | (x << (16 - r))); }
inline Word rotl(Word x, int r) { return static_cast<Word>((x << r) | (x >> (16 - r))); }

/// One 32-bit block as the (L, R) round state.
struct Block {
    Word left = 0;
    Word right = 0;

    bool operator==(const Block&) const = default;
};

// Serialization is L then R, big-endian within each word; as a 32-bit
// integer that is simply L in the high half.
inline std::uint32_t to_u32(Block b) {
    return (static_cast<std::uint32_t>(b.left) << 16) | b.right;
}
inline Block block_from_u32(std::uint32_t v) {
    return Block{static_cast<Word>(v >> 16), static_cast<Word>(v & 0xffff)};
}
inline Block operator^(Block a, Block b) {
    return Block{static_cast<Word>(a.left ^ b.left), static_cast<Word>(a.right ^ b.right)};
}

/// 64-bit master key, most-significant word first.
struct Key {
    std::array<Word, 4> words{};

    bool operator==(const Key&) const = default;
};

Key key_from_bytes(std::span<const std::uint8_t, 8> bytes);
std::array<std::uint8_t, 8> key_to_bytes(const Key& key);

using KeySchedule = std::vector<Word>;

/// Expands `rounds` subkeys in application order; subkey 0 is the
/// least-significant key word. Throws std::invalid_argument outside 1..22.
KeySchedule key_schedule(const Key& key, int rounds);

Block round_forward(Block state, Word subkey);
Block round_inverse(Block state, Word subkey);

Block encrypt_block(Block plaintext, std::span<const Word> schedule);
Block decrypt_block(Block ciphertext, std::span<const Word> schedule);

struct CbcCiphertext {
    Block iv;
    std::vector<Block> blocks;
};

CbcCiphertext cbc_encrypt(std::span<const Block> plaintext, const Key& key, int rounds, Block iv);
std::vector<Block> cbc_decrypt(const CbcCiphertext& ct, const Key& key, int rounds);

} // namespace mcw::speck
