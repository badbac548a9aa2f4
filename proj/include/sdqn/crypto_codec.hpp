#pragma once

#include "sdqn/bytes.hpp"
#include "sdqn/key_block.hpp"
#include "sdqn/xml.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sdqn::codec {

/// How much of a message is encrypted.
///   full            - the whole serialized document is sealed in one envelope
///   data_only       - every text node, tags stay readable
///   selected_fields - tag names of the selected elements plus all text beneath them
enum class Level { none, full, data_only, selected_fields };

enum class Cipher { otp, aes256, otp_then_aes256 };

std::string_view to_string(Level level) noexcept;
std::string_view to_string(Cipher cipher) noexcept;
Level parse_level(std::string_view text);
Cipher parse_cipher(std::string_view text);

/// Envelope identifiers carried in the x-enc attribute.
std::string_view envelope_id(Cipher cipher) noexcept;
std::optional<Cipher> cipher_from_envelope_id(std::string_view id) noexcept;

struct EncryptionPolicy {
    Level level = Level::none;
    Cipher ciphers = Cipher::otp;
    std::set<std::string> selected_tags;

    bool uses_otp() const noexcept { return ciphers != Cipher::aes256; }
    bool uses_aes() const noexcept { return ciphers != Cipher::otp; }

    /// Throws invalid-policy for selected_fields without tags.
    void validate() const;
    std::string to_string() const;

    bool operator==(const EncryptionPolicy&) const = default;
};

struct KeyCost {
    std::uint64_t otp_bits = 0;
    std::uint64_t aes_key_bits = 0;
    std::uint64_t total_bits = 0;

    bool operator==(const KeyCost&) const = default;
};

KeyCost key_cost(const xml::Element& tree, const EncryptionPolicy& policy);

/// Number of 256-bit blocks a sender must fetch to cover `cost`.
std::size_t blocks_needed(const KeyCost& cost) noexcept;

/// XOR of data with the leading bytes of pad. Throws pad-too-short.
Bytes otp_transform(ByteView data, ByteView pad);

/// A consumed slice of one key, in bits: [bit_begin, bit_end).
struct PadRange {
    KeyId key_id;
    std::uint64_t bit_begin = 0;
    std::uint64_t bit_end = 0;

    std::uint64_t bits() const noexcept { return bit_end - bit_begin; }
};

struct ConsumptionRecord {
    std::string message_id;
    std::vector<PadRange> ranges;
    std::vector<KeyId> key_ids;      // every key touched, in order of use
    std::uint64_t bits_used = 0;     // equals key_cost(...).total_bits
    std::uint64_t bits_supplied = 0; // whole-key size of the touched keys
};

/// Append-only record of every key slice ever consumed by one encrypting party.
class PadLedger {
public:
    struct Entry {
        PadRange range;
        std::string message_id;
    };

    /// Checks every range against history and appends all of them, or none.
    /// Throws ledger-conflict on any overlap (including within `ranges`).
    void commit(const std::string& message_id, std::span<const PadRange> ranges);

    /// Full pairwise audit, independent of the commit-time index.
    bool has_overlaps() const;
    std::size_t size() const;
    std::vector<Entry> entries() const;

private:
    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
    std::unordered_map<KeyId, std::vector<std::pair<std::uint64_t, std::uint64_t>>> index_;
};

using Nonce = std::array<std::uint8_t, 12>;
using NonceSource = std::function<Nonce()>;

/// OpenSSL CSPRNG nonces.
NonceSource random_nonces();
/// Reproducible nonces for seeded scenario runs; unique per source.
NonceSource seeded_nonces(std::uint64_t seed);

struct Encrypted {
    xml::Element tree;
    ConsumptionRecord record;
};

/// Encrypts the policy's scope of `tree` with `keys` consumed front to back:
/// one-time-pad slices first, then (when AES is used) the next key as the
/// message's AES-256-GCM key. Nothing is consumed on failure.
Encrypted encrypt_message(const xml::Element& tree, const EncryptionPolicy& policy, std::span<const KeyBlock> keys,
                          PadLedger& ledger, const std::string& message_id, const NonceSource& nonces);

using KeyLookup = std::function<std::optional<KeyBlock>(const KeyId&)>;

/// Inverse of encrypt_message. Trees without x-enc markers come back unchanged.
xml::Element decrypt_message(const xml::Element& tree, const KeyLookup& lookup);

/// All key ids named by x-kid attributes, in document order, without duplicates.
std::vector<KeyId> referenced_key_ids(const xml::Element& tree);

} // namespace sdqn::codec
