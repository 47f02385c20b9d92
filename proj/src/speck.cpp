#include "mcw/speck.hpp"

#include <stdexcept>

namespace mcw::speck {

Key key_from_bytes(std::span<const std::uint8_t, 8> bytes) {
    Key key;
    for (int i = 0; i < 4; ++i) {
        key.words[i] = static_cast<Word>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
    }
    return key;
}

std::array<std::uint8_t, 8> key_to_bytes(const Key& key) {
    std::array<std::uint8_t, 8> bytes{};
    for (int i = 0; i < 4; ++i) {
        bytes[2 * i] = static_cast<std::uint8_t>(key.words[i] >> 8);
        bytes[2 * i + 1] = static_cast<std::uint8_t>(key.words[i] & 0xff);
    }
    return bytes;
}

KeySchedule key_schedule(const Key& key, int rounds) {
    if (rounds < 1 || rounds > kMaxRounds) {
        throw std::invalid_argument("round count must be in 1..22, got " + std::to_string(rounds));
    }
    // key words are (l2, l1, l0, k0) most-significant first
    std::vector<Word> l = {key.words[2], key.words[1], key.words[0]};
    l.resize(static_cast<std::size_t>(rounds) + 2);
    KeySchedule k(static_cast<std::size_t>(rounds));
    k[0] = key.words[3];
    for (int i = 0; i + 1 < rounds; ++i) {
        l[i + 3] = static_cast<Word>((k[i] + rotr(l[i], kAlpha)) ^ static_cast<Word>(i));
        k[i + 1] = static_cast<Word>(rotl(k[i], kBeta) ^ l[i + 3]);
    }
    return k;
}

Block round_forward(Block s, Word subkey) {
    Block out;
    out.left = static_cast<Word>((rotr(s.left, kAlpha) + s.right) ^ subkey);
    out.right = static_cast<Word>(rotl(s.right, kBeta) ^ out.left);
    return out;
}

Block round_inverse(Block s, Word subkey) {
    Block out;
    out.right = rotr(static_cast<Word>(s.right ^ s.left), kBeta);
    out.left = rotl(static_cast<Word>((s.left ^ subkey) - out.right), kAlpha);
    return out;
}

Block encrypt_block(Block pt, std::span<const Word> schedule) {
    Block s = pt;
    for (Word k : schedule) s = round_forward(s, k);
    return s;
}

Block decrypt_block(Block ct, std::span<const Word> schedule) {
    Block s = ct;
    for (auto it = schedule.rbegin(); it != schedule.rend(); ++it) s = round_inverse(s, *it);
    return s;
}

CbcCiphertext cbc_encrypt(std::span<const Block> plaintext, const Key& key, int rounds, Block iv) {
    if (plaintext.empty()) throw std::invalid_argument("cbc_encrypt: empty message");
    KeySchedule sched = key_schedule(key, rounds);
    CbcCiphertext out;
    out.iv = iv;
    out.blocks.reserve(plaintext.size());
    Block chain = iv;
    for (Block p : plaintext) {
        chain = encrypt_block(p ^ chain, sched);
        out.blocks.push_back(chain);
    }
    return out;
}

std::vector<Block> cbc_decrypt(const CbcCiphertext& ct, const Key& key, int rounds) {
    if (ct.blocks.empty()) throw std::invalid_argument("cbc_decrypt: empty message");
    KeySchedule sched = key_schedule(key, rounds);
    std::vector<Block> out;
    out.reserve(ct.blocks.size());
    Block chain = ct.iv;
    for (Block c : ct.blocks) {
        out.push_back(decrypt_block(c, sched) ^ chain);
        chain = c;
    }
    return out;
}

} // namespace mcw::speck
