#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sdqn {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) noexcept {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string to_text(ByteView b) {
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

// RFC 4648 base64, standard alphabet, padded, no line breaks.
std::string base64_encode(ByteView data);
/// Throws Error(malformed_envelope) on anything that is not strict base64.
Bytes base64_decode(std::string_view text);

std::string hex_encode(ByteView data);

std::array<std::uint8_t, 32> hmac_sha256(ByteView key, ByteView data);

/// Constant-time comparison.
bool equal_ct(ByteView a, ByteView b) noexcept;

/// 128-bit identifier rendered in the 8-4-4-4-12 UUID text form.
struct Uuid {
    std::array<std::uint8_t, 16> bytes{};

    std::string to_string() const;
    /// Throws Error(unknown_key_id) when the text is not a UUID.
    static Uuid parse(std::string_view text);
    /// Name-based (version 5) UUID in a fixed project namespace.
    static Uuid from_name(std::string_view name);
    /// Stamps version 4 / RFC 4122 variant bits onto 16 arbitrary bytes.
    static Uuid from_random(std::span<const std::uint8_t, 16> raw);

    auto operator<=>(const Uuid&) const = default;
};

using KeyId = Uuid;

} // namespace sdqn

template <>
struct std::hash<sdqn::Uuid> {
    std::size_t operator()(const sdqn::Uuid& id) const noexcept {
        std::size_t h = 0;
        for (auto b : id.bytes) h = h * 131 + b;
        return h;
    }
};
