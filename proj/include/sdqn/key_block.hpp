#pragma once

#include "sdqn/bytes.hpp"

#include <cstdint>

namespace sdqn {

inline constexpr std::size_t kBlockBits = 256;
inline constexpr std::size_t kBlockBytes = kBlockBits / 8;

/// Symmetric key material with an identifier agreed by both ends of a link.
struct KeyBlock {
    KeyId id;
    Bytes material;

    std::uint64_t size_bits() const noexcept { return 8 * static_cast<std::uint64_t>(material.size()); }

    bool operator==(const KeyBlock&) const = default;
};

} // namespace sdqn
