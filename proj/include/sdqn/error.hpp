#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sdqn {

enum class Errc {
    // xml / codec
    malformed_document,
    unsupported_construct,
    invalid_policy,
    reserved_name,
    pad_too_short,
    insufficient_key_material,
    ledger_conflict,
    unknown_key_id,
    authentication_failure,
    malformed_envelope,
    // key manager
    unknown_credential,
    unknown_link,
    duplicate_key_id,
    no_such_pool,
    insufficient_keys,
    size_unsupported,
    too_many_keys,
    key_id_not_found,
    key_id_not_yet_claimed,
    // link emulator
    unknown_switch,
    unknown_port,
    unknown_fiber,
    fiber_busy,
    // control channel
    body_contains_delimiter,
    policy_mismatch,
    bootstrap_auth_failure,
    kme_unreachable,
    timeout,
    decrypt_failure,
    session_closed,
    // agent
    malformed_request,
    // scenario
    parse_error,
    reference_error,
    invariant_violation,
};

std::string_view to_string(Errc code) noexcept;
std::optional<Errc> errc_from_string(std::string_view name) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Raised when a sender cannot obtain enough key material for a message.
/// deficit_bits is how many more bits the local pool would have needed.
class KeyStarvation : public Error {
public:
    KeyStarvation(Errc code, std::int64_t deficit_bits, const std::string& what)
        : Error(code, what + " (deficit " + std::to_string(deficit_bits) + " bits)"),
          deficit_bits_(deficit_bits) {}

    std::int64_t deficit_bits() const noexcept { return deficit_bits_; }

private:
    std::int64_t deficit_bits_;
};

} // namespace sdqn
