#pragma once

#include "sdqn/bytes.hpp"
#include "sdqn/key_block.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace sdqn::kms {

enum class Role { controller, agent, encryptor };

std::string_view to_string(Role role) noexcept;

struct SaeIdentity {
    std::string sae_id;
    Bytes credential; // stands in for the SAE's certificate
    std::set<Role> roles;

    bool operator==(const SaeIdentity&) const = default;
};

struct PoolStatus {
    std::uint64_t stored_key_count = 0;
    std::uint32_t key_size_bits = kBlockBits;
    std::uint32_t max_key_per_request = 0;
    std::string source_sae;
    std::string target_sae;
};

struct KmeConfig {
    std::uint32_t max_key_per_request = 128;
    /// When set, a slave may fetch each key id only once.
    bool strict_once_delivery = false;
};

/// Per-pool counters, in 256-bit blocks.
struct PoolAudit {
    std::uint64_t pushed = 0;
    std::uint64_t available = 0;
    std::uint64_t delivered_enc = 0;
    std::uint64_t delivered_dec = 0;
};

/// Key Management Entity of one node.
///
/// Keys arrive per QKD link through push_keys() and are dealt round-robin into
/// the pools registered on that link, one pool per (master SAE, slave SAE)
/// direction. Both KMEs of a link register the same pools in the same order
/// and receive the same pushes, so their pools mirror each other. A delivery
/// on the master side is forwarded to the peer KME, which moves the same ids to
/// its delivered set so the slave can retrieve them by id.
class KeyManager {
public:
    explicit KeyManager(std::string kme_id, KmeConfig config = {});
    KeyManager(const KeyManager&) = delete;
    KeyManager& operator=(const KeyManager&) = delete;

    const std::string& id() const noexcept { return id_; }
    const KmeConfig& config() const noexcept { return config_; }

    void register_sae(SaeIdentity sae);
    SaeIdentity authenticate(ByteView credential) const;

    void register_link(const std::string& link_id);
    void add_pool(const std::string& link_id, const std::string& master_sae, const std::string& slave_sae);
    /// Connects the two KMEs terminating `link_id` so deliveries are mirrored.
    static void peer(KeyManager& a, KeyManager& b, const std::string& link_id);

    void push_keys(const std::string& link_id, std::span<const KeyBlock> blocks);

    PoolStatus get_status(const SaeIdentity& requester, const std::string& slave_sae) const;
    /// size_bits must be a multiple of 256; each returned entry concatenates
    /// size_bits/256 blocks under the id of the first one.
    std::vector<KeyBlock> get_enc_keys(const SaeIdentity& requester, const std::string& slave_sae, std::uint32_t number,
                                       std::uint32_t size_bits);
    std::vector<KeyBlock> get_dec_keys(const SaeIdentity& requester, const std::string& master_sae,
                                       std::span<const KeyId> key_ids);

    PoolAudit audit(const std::string& master_sae, const std::string& slave_sae) const;
    std::vector<std::pair<std::string, std::string>> pools() const;
    std::uint64_t unassigned_blocks(const std::string& link_id) const;
    /// Number of key ids this KME ever handed out through get_enc_keys.
    std::uint64_t enc_deliveries() const;

private:
    struct StoredBlock {
        KeyId id;
        std::array<std::uint8_t, kBlockBytes> material;
    };

    struct Pool {
        std::string link_id;
        std::string master_sae;
        std::string slave_sae;
        mutable std::mutex mutex;
        std::deque<StoredBlock> available;
        std::unordered_map<KeyId, StoredBlock> delivered_enc;
        std::unordered_set<KeyId> delivered_dec;
        std::unordered_map<KeyId, std::vector<KeyId>> compound; // head id -> member ids
        std::unordered_set<KeyId> early_claims;                 // claimed by the peer before the push arrived
        std::uint64_t pushed = 0;
    };

    struct Link {
        std::mutex mutex;
        std::vector<Pool*> pools;
        std::unordered_set<KeyId> history;
        std::uint64_t dealt = 0;
        std::uint64_t unassigned = 0;
        KeyManager* peer = nullptr;
    };

    using PoolKey = std::pair<std::string, std::string>;

    Pool& pool_for(const std::string& master, const std::string& slave) const;
    Link& link_for(const std::string& link_id) const;
    void require_registered(const SaeIdentity& requester) const;
    void mirror_claim(const std::string& master, const std::string& slave, std::span<const KeyId> ids,
                      const std::vector<std::pair<KeyId, std::vector<KeyId>>>& compounds);

    std::string id_;
    KmeConfig config_;
    mutable std::shared_mutex registry_mutex_;
    std::map<std::string, SaeIdentity> saes_;
    std::map<std::string, std::unique_ptr<Link>> links_;
    std::map<PoolKey, std::unique_ptr<Pool>> pools_;
    mutable std::mutex stats_mutex_;
    std::uint64_t enc_deliveries_ = 0;
};

} // namespace sdqn::kms
