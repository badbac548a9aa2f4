#pragma once

#include "sdqn/key_delivery_api.hpp"

#include <span>
#include <string>
#include <vector>

namespace sdqn::kms {

/// What a Secure Application Entity sees of its local KME.
class KeyClient {
public:
    virtual ~KeyClient() = default;

    virtual const std::string& sae_id() const noexcept = 0;
    virtual PoolStatus status(const std::string& slave_sae) = 0;
    virtual std::vector<KeyBlock> enc_keys(const std::string& slave_sae, std::uint32_t number,
                                           std::uint32_t size_bits = kBlockBits) = 0;
    virtual std::vector<KeyBlock> dec_keys(const std::string& master_sae, std::span<const KeyId> key_ids) = 0;
};

/// Client that goes through the JSON resource layer, as a remote SAE would.
/// Error responses are turned back into Error / KeyStarvation.
class ApiKeyClient final : public KeyClient {
public:
    ApiKeyClient(const KeyDeliveryApi& api, std::string sae_id, Bytes credential)
        : api_(api), sae_id_(std::move(sae_id)), credential_(std::move(credential)) {}

    const std::string& sae_id() const noexcept override { return sae_id_; }
    PoolStatus status(const std::string& slave_sae) override;
    std::vector<KeyBlock> enc_keys(const std::string& slave_sae, std::uint32_t number, std::uint32_t size_bits) override;
    std::vector<KeyBlock> dec_keys(const std::string& master_sae, std::span<const KeyId> key_ids) override;

    /// Simulates losing the KME connection; calls then fail with kme-unreachable.
    void set_reachable(bool reachable) noexcept { reachable_ = reachable; }

private:
    nlohmann::json call(const std::string& method, const std::string& path, nlohmann::json body);

    const KeyDeliveryApi& api_;
    std::string sae_id_;
    Bytes credential_;
    bool reachable_ = true;
};

} // namespace sdqn::kms
