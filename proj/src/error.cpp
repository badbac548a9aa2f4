#include "sdqn/error.hpp"

namespace sdqn {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
    case Errc::malformed_document: return "malformed-document";
    case Errc::unsupported_construct: return "unsupported-construct";
    case Errc::invalid_policy: return "invalid-policy";
    case Errc::reserved_name: return "reserved-name";
    case Errc::pad_too_short: return "pad-too-short";
    case Errc::insufficient_key_material: return "insufficient-key-material";
    case Errc::ledger_conflict: return "ledger-conflict";
    case Errc::unknown_key_id: return "unknown-key-id";
    case Errc::authentication_failure: return "authentication-failure";
    case Errc::malformed_envelope: return "malformed-envelope";
    case Errc::unknown_credential: return "unknown-credential";
    case Errc::unknown_link: return "unknown-link";
    case Errc::duplicate_key_id: return "duplicate-key-id";
    case Errc::no_such_pool: return "no-such-pool";
    case Errc::insufficient_keys: return "insufficient-keys";
    case Errc::size_unsupported: return "size-unsupported";
    case Errc::too_many_keys: return "too-many-keys";
    case Errc::key_id_not_found: return "key-id-not-found";
    case Errc::key_id_not_yet_claimed: return "key-id-not-yet-claimed";
    case Errc::unknown_switch: return "unknown-switch";
    case Errc::unknown_port: return "unknown-port";
    case Errc::unknown_fiber: return "unknown-fiber";
    case Errc::fiber_busy: return "fiber-busy";
    case Errc::body_contains_delimiter: return "body-contains-delimiter";
    case Errc::policy_mismatch: return "policy-mismatch";
    case Errc::bootstrap_auth_failure: return "bootstrap-auth-failure";
    case Errc::kme_unreachable: return "kme-unreachable";
    case Errc::timeout: return "timeout";
    case Errc::decrypt_failure: return "decrypt-failure";
    case Errc::session_closed: return "session-closed";
    case Errc::malformed_request: return "malformed-request";
    case Errc::parse_error: return "parse-error";
    case Errc::reference_error: return "reference-error";
    case Errc::invariant_violation: return "invariant-violation";
    }
    return "unknown-error";
}

std::optional<Errc> errc_from_string(std::string_view name) noexcept {
    for (int i = 0; i <= static_cast<int>(Errc::invariant_violation); ++i) {
        const auto code = static_cast<Errc>(i);
        if (to_string(code) == name) return code;
    }
    return std::nullopt;
}

} // namespace sdqn
