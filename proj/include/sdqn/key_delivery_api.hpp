#pragma once

#include "sdqn/error.hpp"
#include "sdqn/key_manager.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace sdqn::kms {

struct ApiRequest {
    std::string method; // "GET" or "POST"
    std::string path;   // e.g. /api/v1/keys/sae-n2/enc_keys
    Bytes credential;   // the caller's identity credential
    nlohmann::json body;
};

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

/// Resource layer over a KeyManager, shaped after the standard key-delivery
/// REST interface:
///
///   GET  /api/v1/keys/{slave_SAE_ID}/status
///   POST /api/v1/keys/{slave_SAE_ID}/enc_keys   {"number": n, "size": bits}
///   POST /api/v1/keys/{master_SAE_ID}/dec_keys  {"key_IDs": [{"key_ID": id}, ...]}
///
/// Key entries are {"key_ID": uuid, "key": base64}. Errors carry
/// {"message": text, "details": [{"error": name}]} with status
/// 400 (bad request), 401 (unknown credential), 404 (no such pool / key id),
/// 503 (key starvation; details also carry "deficit_bits").
class KeyDeliveryApi {
public:
    explicit KeyDeliveryApi(KeyManager& kme) : kme_(kme) {}

    ApiResponse handle(const ApiRequest& request) const;

private:
    KeyManager& kme_;
};

int http_status_for(Errc code) noexcept;

} // namespace sdqn::kms
