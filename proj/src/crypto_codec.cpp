#include "sdqn/crypto_codec.hpp"

#include "sdqn/error.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <map>
#include <memory>
#include <sstream>

namespace sdqn::codec {

namespace {

constexpr std::string_view kSealedTag = "x-sealed";
constexpr std::string_view kFieldTag = "x-field";
constexpr std::string_view kAttrEnc = "x-enc";
constexpr std::string_view kAttrKid = "x-kid";
constexpr std::string_view kAttrOff = "x-off";
constexpr std::string_view kAttrNonce = "x-nonce";
constexpr std::string_view kAttrTag = "x-tag";
constexpr std::size_t kGcmTagBytes = 16;
constexpr std::size_t kAesKeyBytes = 32;

bool is_reserved_attribute(std::string_view name) {
    return name == kAttrEnc || name == kAttrKid || name == kAttrOff || name == kAttrNonce || name == kAttrTag;
}

void reject_reserved(const xml::Element& e) {
    if (e.tag == kSealedTag || e.tag == kFieldTag) {
        throw Error(Errc::reserved_name, "element name <" + e.tag + "> is reserved for envelopes");
    }
    for (const auto& a : e.attributes) {
        if (is_reserved_attribute(a.name)) throw Error(Errc::reserved_name, "attribute " + a.name + " is reserved");
    }
    for (const auto& c : e.children) {
        if (c.is_element()) reject_reserved(c.element());
    }
}

bool has_text_child(const xml::Element& e) {
    return std::any_of(e.children.begin(), e.children.end(), [](const auto& c) { return !c.is_element(); });
}

// Byte count of each policy scope; mirrors the walk done by the encryptor.
std::uint64_t scope_bytes(const xml::Element& e, const EncryptionPolicy& policy, bool inside_selected) {
    const bool selected =
        policy.level == Level::selected_fields && policy.selected_tags.contains(e.tag);
    const bool text_in_scope = policy.level == Level::data_only || inside_selected || selected;
    std::uint64_t n = selected ? e.tag.size() : 0;
    for (const auto& c : e.children) {
        if (c.is_element()) n += scope_bytes(c.element(), policy, inside_selected || selected);
        else if (text_in_scope) n += c.text().value.size();
    }
    return n;
}

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const noexcept { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

Nonce unit_nonce(const Nonce& base, std::uint32_t index) {
    Nonce n = base;
    std::uint32_t ctr = (std::uint32_t{n[8]} << 24) | (std::uint32_t{n[9]} << 16) | (std::uint32_t{n[10]} << 8) | n[11];
    ctr += index;
    n[8] = static_cast<std::uint8_t>(ctr >> 24);
    n[9] = static_cast<std::uint8_t>(ctr >> 16);
    n[10] = static_cast<std::uint8_t>(ctr >> 8);
    n[11] = static_cast<std::uint8_t>(ctr);
    return n;
}

Bytes aes_gcm_seal(ByteView key, const Nonce& nonce, ByteView plaintext) {
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    Bytes out(plaintext.size() + kGcmTagBytes);
    int len = 0;
    int total = 0;
    if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1 ||
        EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(), static_cast<int>(plaintext.size())) != 1) {
        throw std::runtime_error("AES-256-GCM encryption failed");
    }
    total = len;
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + total, &len) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kGcmTagBytes, out.data() + plaintext.size()) != 1) {
        throw std::runtime_error("AES-256-GCM finalisation failed");
    }
    return out;
}

Bytes aes_gcm_open(ByteView key, const Nonce& nonce, ByteView sealed) {
    if (sealed.size() < kGcmTagBytes) throw Error(Errc::authentication_failure, "ciphertext shorter than GCM tag");
    const auto body = sealed.first(sealed.size() - kGcmTagBytes);
    Bytes tag(sealed.end() - kGcmTagBytes, sealed.end());
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    Bytes out(body.size());
    int len = 0;
    if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1 ||
        EVP_DecryptUpdate(ctx.get(), out.data(), &len, body.data(), static_cast<int>(body.size())) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kGcmTagBytes, tag.data()) != 1) {
        throw Error(Errc::authentication_failure, "AES-256-GCM setup failed");
    }
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &len) != 1) {
        throw Error(Errc::authentication_failure, "AES-256-GCM tag mismatch");
    }
    return out;
}

std::string join_ids(const std::vector<KeyId>& ids) {
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out.push_back(',');
        out += id.to_string();
    }
    return out;
}

std::vector<KeyId> split_ids(std::string_view text) {
    std::vector<KeyId> out;
    while (!text.empty()) {
        const auto comma = text.find(',');
        out.push_back(KeyId::parse(text.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

// Hands out one-time-pad bytes from the supplied keys, front to back, and
// remembers which slice of which key went where.
class PadCursor {
public:
    explicit PadCursor(std::span<const KeyBlock> keys) : keys_(keys) {}

    std::size_t key_index() const noexcept { return key_; }
    std::size_t offset() const noexcept { return offset_; }

    /// Moves past an exhausted key so the next take starts on a fresh one.
    void settle() {
        while (key_ < keys_.size() && offset_ >= keys_[key_].material.size()) {
            ++key_;
            offset_ = 0;
        }
    }

    Bytes take(std::size_t n, std::vector<std::size_t>& touched) {
        Bytes pad;
        pad.reserve(n);
        while (pad.size() < n) {
            settle();
            const auto& k = keys_[key_];
            const auto chunk = std::min(n - pad.size(), k.material.size() - offset_);
            pad.insert(pad.end(), k.material.begin() + static_cast<std::ptrdiff_t>(offset_),
                       k.material.begin() + static_cast<std::ptrdiff_t>(offset_ + chunk));
            auto& span = used_[key_];
            if (span.second == 0) span.first = offset_;
            span.second = offset_ + chunk;
            if (touched.empty() || touched.back() != key_) touched.push_back(key_);
            offset_ += chunk;
        }
        return pad;
    }

    const std::map<std::size_t, std::pair<std::size_t, std::size_t>>& used() const noexcept { return used_; }

private:
    std::span<const KeyBlock> keys_;
    std::size_t key_ = 0;
    std::size_t offset_ = 0;
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> used_;
};

class Encryptor {
public:
    Encryptor(const EncryptionPolicy& policy, std::span<const KeyBlock> keys, const NonceSource& nonces,
              const KeyBlock* aes_key)
        : policy_(policy), keys_(keys), nonces_(nonces), aes_key_(aes_key), pad_(keys) {}

    xml::Element seal_document(const xml::Element& tree) {
        const auto doc = xml::serialize(tree);
        xml::Element out{std::string(kSealedTag)};
        Unit unit{as_bytes(doc)};
        const auto marker = encrypt_units({&unit, 1});
        apply_marker(out, marker);
        out.add_text(base64_encode(unit.ciphertext));
        return out;
    }

    xml::Element transform(const xml::Element& e, bool inside_selected) {
        const bool selected =
            policy_.level == Level::selected_fields && policy_.selected_tags.contains(e.tag);
        const bool text_in_scope = policy_.level == Level::data_only || inside_selected || selected;
        const bool marked = selected || (text_in_scope && has_text_child(e));

        xml::Element out(selected ? std::string(kFieldTag) : e.tag);
        out.attributes = e.attributes;

        std::vector<Unit> units;
        if (marked) {
            if (selected) units.push_back({as_bytes(e.tag)});
            if (text_in_scope) {
                for (const auto& c : e.children) {
                    if (!c.is_element()) units.push_back({as_bytes(c.text().value)});
                }
            }
            const auto marker = encrypt_units(units);
            if (selected) out.set_attribute(kAttrTag, base64_encode(units.front().ciphertext));
            apply_marker(out, marker);
        }

        std::size_t next_unit = selected ? 1 : 0;
        for (const auto& c : e.children) {
            if (c.is_element()) {
                out.add(transform(c.element(), inside_selected || selected));
            } else if (marked && text_in_scope) {
                out.add_text(base64_encode(units[next_unit++].ciphertext));
            } else {
                out.add_text(c.text().value);
            }
        }
        return out;
    }

    ConsumptionRecord record(const std::string& message_id) const {
        ConsumptionRecord rec;
        rec.message_id = message_id;
        for (const auto& [index, span] : pad_.used()) {
            rec.ranges.push_back({keys_[index].id, 8 * std::uint64_t{span.first}, 8 * std::uint64_t{span.second}});
            rec.key_ids.push_back(keys_[index].id);
            rec.bits_supplied += keys_[index].size_bits();
        }
        if (aes_key_ != nullptr) {
            rec.ranges.push_back({aes_key_->id, 0, 8 * kAesKeyBytes});
            rec.key_ids.push_back(aes_key_->id);
            rec.bits_supplied += aes_key_->size_bits();
        }
        for (const auto& r : rec.ranges) rec.bits_used += r.bits();
        return rec;
    }

private:
    struct Unit {
        ByteView plaintext;
        Bytes ciphertext{};
    };

    struct Marker {
        std::vector<KeyId> key_ids;
        std::optional<std::size_t> pad_offset;
        std::optional<Nonce> nonce;
    };

    Marker encrypt_units(std::span<Unit> units) {
        Marker m;
        std::vector<std::size_t> touched;
        if (policy_.uses_otp()) {
            pad_.settle();
            m.pad_offset = pad_.offset();
        }
        if (policy_.uses_aes()) m.nonce = nonces_();
        std::uint32_t index = 0;
        for (auto& u : units) {
            Bytes data(u.plaintext.begin(), u.plaintext.end());
            if (policy_.uses_otp()) data = otp_transform(data, pad_.take(data.size(), touched));
            if (policy_.uses_aes()) {
                data = aes_gcm_seal(ByteView(aes_key_->material).first(kAesKeyBytes), unit_nonce(*m.nonce, index), data);
            }
            u.ciphertext = std::move(data);
            ++index;
        }
        for (auto i : touched) m.key_ids.push_back(keys_[i].id);
        if (policy_.uses_aes()) m.key_ids.push_back(aes_key_->id);
        return m;
    }

    void apply_marker(xml::Element& out, const Marker& m) const {
        out.set_attribute(kAttrEnc, std::string(envelope_id(policy_.ciphers)));
        out.set_attribute(kAttrKid, join_ids(m.key_ids));
        if (m.pad_offset) out.set_attribute(kAttrOff, std::to_string(*m.pad_offset));
        if (m.nonce) out.set_attribute(kAttrNonce, base64_encode(*m.nonce));
    }

    const EncryptionPolicy& policy_;
    std::span<const KeyBlock> keys_;
    const NonceSource& nonces_;
    const KeyBlock* aes_key_;
    PadCursor pad_;
};

class Decryptor {
public:
    explicit Decryptor(const KeyLookup& lookup) : lookup_(lookup) {}

    xml::Element transform(const xml::Element& e) {
        if (e.attribute(kAttrEnc) == nullptr) {
            if (e.tag == kSealedTag || e.tag == kFieldTag || e.attribute(kAttrTag) != nullptr) {
                throw Error(Errc::malformed_envelope, "envelope element without x-enc");
            }
            xml::Element out(e.tag);
            out.attributes = e.attributes;
            for (const auto& c : e.children) {
                if (c.is_element()) out.add(transform(c.element()));
                else out.add_text(c.text().value);
            }
            return out;
        }

        auto state = open_marker(e);
        if (e.tag == kSealedTag) {
            if (e.children.size() != 1 || e.children.front().is_element()) {
                throw Error(Errc::malformed_envelope, "sealed envelope must hold exactly one text body");
            }
            const auto doc = decrypt_unit(state, e.children.front().text().value);
            try {
                return xml::parse(to_text(doc));
            } catch (const Error& err) {
                throw Error(Errc::malformed_envelope, std::string("sealed body does not decrypt to XML: ") + err.what());
            }
        }

        xml::Element out;
        if (e.tag == kFieldTag) {
            const auto* sealed_tag = e.attribute(kAttrTag);
            if (sealed_tag == nullptr) throw Error(Errc::malformed_envelope, "x-field without x-tag");
            out.tag = to_text(decrypt_unit(state, *sealed_tag));
            if (!xml::is_valid_name(out.tag)) throw Error(Errc::malformed_envelope, "decrypted tag is not a valid name");
        } else {
            if (e.attribute(kAttrTag) != nullptr) throw Error(Errc::malformed_envelope, "x-tag outside x-field");
            out.tag = e.tag;
        }
        for (const auto& a : e.attributes) {
            if (!is_reserved_attribute(a.name)) out.attributes.push_back(a);
        }
        for (const auto& c : e.children) {
            if (c.is_element()) {
                out.add(transform(c.element()));
            } else {
                auto plain = to_text(decrypt_unit(state, c.text().value));
                if (!xml::is_valid_utf8(plain)) throw Error(Errc::malformed_envelope, "decrypted text is not UTF-8");
                out.add_text(std::move(plain));
            }
        }
        return out;
    }

private:
    struct MarkerState {
        Cipher cipher = Cipher::otp;
        std::vector<KeyBlock> pad_keys;
        std::size_t pad_key = 0;
        std::size_t pad_offset = 0;
        std::optional<KeyBlock> aes_key;
        Nonce nonce{};
        std::uint32_t unit = 0;
    };

    KeyBlock resolve(const KeyId& id) {
        auto k = lookup_(id);
        if (!k) throw Error(Errc::unknown_key_id, "no key material for " + id.to_string());
        return std::move(*k);
    }

    MarkerState open_marker(const xml::Element& e) {
        MarkerState s;
        const auto cipher = cipher_from_envelope_id(*e.attribute(kAttrEnc));
        if (!cipher) throw Error(Errc::malformed_envelope, "unknown x-enc '" + *e.attribute(kAttrEnc) + "'");
        s.cipher = *cipher;
        const auto* kid = e.attribute(kAttrKid);
        if (kid == nullptr) throw Error(Errc::malformed_envelope, "missing x-kid");
        std::vector<KeyId> ids;
        try {
            ids = split_ids(*kid);
        } catch (const Error&) {
            throw Error(Errc::malformed_envelope, "x-kid is not a list of UUIDs");
        }
        const bool otp = s.cipher != Cipher::aes256;
        const bool aes = s.cipher != Cipher::otp;
        if (ids.empty() || (aes && otp && ids.size() < 2)) throw Error(Errc::malformed_envelope, "x-kid too short");
        if (aes) {
            const auto* nonce = e.attribute(kAttrNonce);
            if (nonce == nullptr) throw Error(Errc::malformed_envelope, "missing x-nonce");
            const auto raw = base64_decode(*nonce);
            if (raw.size() != s.nonce.size()) throw Error(Errc::malformed_envelope, "x-nonce must be 96 bits");
            std::copy(raw.begin(), raw.end(), s.nonce.begin());
            s.aes_key = resolve(ids.back());
            if (s.aes_key->material.size() < kAesKeyBytes) throw Error(Errc::malformed_envelope, "AES key too short");
            ids.pop_back();
        }
        if (otp) {
            const auto* off = e.attribute(kAttrOff);
            if (off == nullptr) throw Error(Errc::malformed_envelope, "missing x-off");
            try {
                s.pad_offset = std::stoul(*off);
            } catch (const std::exception&) {
                throw Error(Errc::malformed_envelope, "bad x-off");
            }
            for (const auto& id : ids) s.pad_keys.push_back(resolve(id));
        } else if (!ids.empty()) {
            throw Error(Errc::malformed_envelope, "aes256gcm marker names more than one key");
        }
        return s;
    }

    Bytes next_pad(MarkerState& s, std::size_t n) {
        Bytes pad;
        while (pad.size() < n) {
            if (s.pad_key >= s.pad_keys.size()) throw Error(Errc::malformed_envelope, "pad keys exhausted");
            const auto& m = s.pad_keys[s.pad_key].material;
            if (s.pad_offset >= m.size()) {
                ++s.pad_key;
                s.pad_offset = 0;
                continue;
            }
            const auto chunk = std::min(n - pad.size(), m.size() - s.pad_offset);
            pad.insert(pad.end(), m.begin() + static_cast<std::ptrdiff_t>(s.pad_offset),
                       m.begin() + static_cast<std::ptrdiff_t>(s.pad_offset + chunk));
            s.pad_offset += chunk;
        }
        return pad;
    }

    Bytes decrypt_unit(MarkerState& s, std::string_view b64) {
        Bytes data = base64_decode(b64);
        if (s.aes_key) {
            data = aes_gcm_open(ByteView(s.aes_key->material).first(kAesKeyBytes), unit_nonce(s.nonce, s.unit), data);
        }
        if (s.cipher != Cipher::aes256) data = otp_transform(data, next_pad(s, data.size()));
        ++s.unit;
        return data;
    }

    const KeyLookup& lookup_;
};

void collect_ids(const xml::Element& e, std::vector<KeyId>& out) {
    if (const auto* kid = e.attribute(kAttrKid)) {
        for (const auto& id : split_ids(*kid)) {
            if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
        }
    }
    for (const auto& c : e.children) {
        if (c.is_element()) collect_ids(c.element(), out);
    }
}

} // namespace

std::string_view to_string(Level level) noexcept {
    switch (level) {
    case Level::none: return "NONE";
    case Level::full: return "FULL";
    case Level::data_only: return "DATA_ONLY";
    case Level::selected_fields: return "SELECTED_FIELDS";
    }
    return "?";
}

std::string_view to_string(Cipher cipher) noexcept {
    switch (cipher) {
    case Cipher::otp: return "OTP";
    case Cipher::aes256: return "AES256";
    case Cipher::otp_then_aes256: return "OTP_THEN_AES256";
    }
    return "?";
}

Level parse_level(std::string_view text) {
    for (auto l : {Level::none, Level::full, Level::data_only, Level::selected_fields}) {
        if (to_string(l) == text) return l;
    }
    throw Error(Errc::invalid_policy, "unknown encryption level '" + std::string(text) + "'");
}

Cipher parse_cipher(std::string_view text) {
    for (auto c : {Cipher::otp, Cipher::aes256, Cipher::otp_then_aes256}) {
        if (to_string(c) == text) return c;
    }
    throw Error(Errc::invalid_policy, "unknown cipher set '" + std::string(text) + "'");
}

std::string_view envelope_id(Cipher cipher) noexcept {
    switch (cipher) {
    case Cipher::otp: return "otp";
    case Cipher::aes256: return "aes256gcm";
    case Cipher::otp_then_aes256: return "otp+aes256gcm";
    }
    return "?";
}

std::optional<Cipher> cipher_from_envelope_id(std::string_view id) noexcept {
    for (auto c : {Cipher::otp, Cipher::aes256, Cipher::otp_then_aes256}) {
        if (envelope_id(c) == id) return c;
    }
    return std::nullopt;
}

void EncryptionPolicy::validate() const {
    if (level == Level::selected_fields && selected_tags.empty()) {
        throw Error(Errc::invalid_policy, "SELECTED_FIELDS requires at least one selected tag");
    }
    for (const auto& t : selected_tags) {
        if (!xml::is_valid_name(t)) throw Error(Errc::invalid_policy, "selected tag '" + t + "' is not an XML name");
    }
}

std::string EncryptionPolicy::to_string() const {
    std::string out = std::string(codec::to_string(level)) + "/" + std::string(codec::to_string(ciphers));
    if (level == Level::selected_fields) {
        out += "[";
        bool first = true;
        for (const auto& t : selected_tags) {
            if (!first) out += ",";
            out += t;
            first = false;
        }
        out += "]";
    }
    return out;
}

KeyCost key_cost(const xml::Element& tree, const EncryptionPolicy& policy) {
    policy.validate();
    KeyCost cost;
    if (policy.level == Level::none) return cost;
    const std::uint64_t bytes =
        policy.level == Level::full ? xml::serialize(tree).size() : scope_bytes(tree, policy, false);
    if (bytes == 0) return cost; // nothing in scope, so no envelope and no AES key
    if (policy.uses_otp()) cost.otp_bits = 8 * bytes;
    cost.aes_key_bits = policy.uses_aes() ? 8 * kAesKeyBytes : 0;
    cost.total_bits = cost.otp_bits + cost.aes_key_bits;
    return cost;
}

std::size_t blocks_needed(const KeyCost& cost) noexcept {
    return static_cast<std::size_t>((cost.otp_bits + kBlockBits - 1) / kBlockBits) + (cost.aes_key_bits > 0 ? 1 : 0);
}

Bytes otp_transform(ByteView data, ByteView pad) {
    if (pad.size() < data.size()) {
        throw Error(Errc::pad_too_short,
                    "pad of " + std::to_string(pad.size()) + " bytes for " + std::to_string(data.size()) + " bytes");
    }
    Bytes out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data[i] ^ pad[i];
    return out;
}

void PadLedger::commit(const std::string& message_id, std::span<const PadRange> ranges) {
    const auto overlaps = [](std::uint64_t b0, std::uint64_t e0, std::uint64_t b1, std::uint64_t e1) {
        return b0 < e1 && b1 < e0;
    };
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        const auto& r = ranges[i];
        if (r.bit_end <= r.bit_begin) throw Error(Errc::ledger_conflict, "empty or inverted pad range");
        if (const auto it = index_.find(r.key_id); it != index_.end()) {
            for (const auto& [b, e] : it->second) {
                if (overlaps(r.bit_begin, r.bit_end, b, e)) {
                    throw Error(Errc::ledger_conflict, "key " + r.key_id.to_string() + " bits [" +
                                                           std::to_string(r.bit_begin) + "," + std::to_string(r.bit_end) +
                                                           ") already consumed");
                }
            }
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (ranges[j].key_id == r.key_id && overlaps(r.bit_begin, r.bit_end, ranges[j].bit_begin, ranges[j].bit_end)) {
                throw Error(Errc::ledger_conflict, "overlapping ranges within one message");
            }
        }
    }
    for (const auto& r : ranges) {
        entries_.push_back({r, message_id});
        index_[r.key_id].emplace_back(r.bit_begin, r.bit_end);
    }
}

bool PadLedger::has_overlaps() const {
    std::lock_guard lock(mutex_);
    std::vector<const Entry*> sorted;
    sorted.reserve(entries_.size());
    for (const auto& e : entries_) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(), [](const Entry* a, const Entry* b) {
        return std::tie(a->range.key_id, a->range.bit_begin) < std::tie(b->range.key_id, b->range.bit_begin);
    });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i]->range.key_id == sorted[i - 1]->range.key_id &&
            sorted[i]->range.bit_begin < sorted[i - 1]->range.bit_end) {
            return true;
        }
    }
    return false;
}

std::size_t PadLedger::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::vector<PadLedger::Entry> PadLedger::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

NonceSource random_nonces() {
    return [] {
        Nonce n{};
        if (RAND_bytes(n.data(), static_cast<int>(n.size())) != 1) throw std::runtime_error("RAND_bytes failed");
        return n;
    };
}

NonceSource seeded_nonces(std::uint64_t seed) {
    // 32-bit prefix from the seed, 32-bit call counter, low 32 bits left for
    // per-unit indices inside one marker.
    auto counter = std::make_shared<std::uint32_t>(0);
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    const auto prefix = static_cast<std::uint32_t>(z ^ (z >> 31));
    return [counter, prefix] {
        Nonce n{};
        const std::uint32_t c = (*counter)++;
        for (int i = 0; i < 4; ++i) {
            n[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(prefix >> (24 - 8 * i));
            n[static_cast<std::size_t>(4 + i)] = static_cast<std::uint8_t>(c >> (24 - 8 * i));
        }
        return n;
    };
}

Encrypted encrypt_message(const xml::Element& tree, const EncryptionPolicy& policy, std::span<const KeyBlock> keys,
                          PadLedger& ledger, const std::string& message_id, const NonceSource& nonces) {
    policy.validate();
    if (policy.level == Level::none) return {tree, ConsumptionRecord{message_id, {}, {}, 0, 0}};
    reject_reserved(tree);

    const auto cost = key_cost(tree, policy);
    if (cost.total_bits == 0) return {tree, ConsumptionRecord{message_id, {}, {}, 0, 0}};
    const std::uint64_t pad_bytes = cost.otp_bits / 8;

    // Sufficiency check before anything is touched.
    std::uint64_t covered = 0;
    std::size_t next = 0;
    while (covered < pad_bytes && next < keys.size()) covered += keys[next++].material.size();
    std::int64_t deficit = 0;
    if (covered < pad_bytes) deficit += static_cast<std::int64_t>(8 * (pad_bytes - covered));
    const KeyBlock* aes_key = nullptr;
    if (policy.uses_aes()) {
        if (next < keys.size() && keys[next].material.size() >= kAesKeyBytes) aes_key = &keys[next];
        else deficit += static_cast<std::int64_t>(8 * kAesKeyBytes);
    }
    if (deficit > 0) {
        throw KeyStarvation(Errc::insufficient_key_material, deficit,
                            "message " + message_id + " needs " + std::to_string(cost.total_bits) + " key bits");
    }

    Encryptor enc(policy, keys, nonces, aes_key);
    Encrypted result;
    result.tree = policy.level == Level::full ? enc.seal_document(tree) : enc.transform(tree, false);
    result.record = enc.record(message_id);
    ledger.commit(message_id, result.record.ranges);
    return result;
}

xml::Element decrypt_message(const xml::Element& tree, const KeyLookup& lookup) {
    Decryptor dec(lookup);
    return dec.transform(tree);
}

std::vector<KeyId> referenced_key_ids(const xml::Element& tree) {
    std::vector<KeyId> out;
    collect_ids(tree, out);
    return out;
}

} // namespace sdqn::codec
