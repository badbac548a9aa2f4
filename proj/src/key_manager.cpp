#include "sdqn/key_manager.hpp"

#include "sdqn/error.hpp"

#include <algorithm>

namespace sdqn::kms {

std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::controller: return "controller";
    case Role::agent: return "agent";
    case Role::encryptor: return "encryptor";
    }
    return "?";
}

KeyManager::KeyManager(std::string kme_id, KmeConfig config) : id_(std::move(kme_id)), config_(config) {}

void KeyManager::register_sae(SaeIdentity sae) {
    std::unique_lock lock(registry_mutex_);
    const auto name = sae.sae_id;
    saes_[name] = std::move(sae);
}

SaeIdentity KeyManager::authenticate(ByteView credential) const {
    std::shared_lock lock(registry_mutex_);
    for (const auto& [name, sae] : saes_) {
        if (equal_ct(sae.credential, credential)) return sae;
    }
    throw Error(Errc::unknown_credential, "credential not registered at KME " + id_);
}

void KeyManager::register_link(const std::string& link_id) {
    std::unique_lock lock(registry_mutex_);
    links_.try_emplace(link_id, std::make_unique<Link>());
}

void KeyManager::add_pool(const std::string& link_id, const std::string& master_sae, const std::string& slave_sae) {
    std::unique_lock lock(registry_mutex_);
    const auto link = links_.find(link_id);
    if (link == links_.end()) throw Error(Errc::unknown_link, link_id + " at KME " + id_);
    auto pool = std::make_unique<Pool>();
    pool->link_id = link_id;
    pool->master_sae = master_sae;
    pool->slave_sae = slave_sae;
    auto [it, inserted] = pools_.try_emplace({master_sae, slave_sae}, std::move(pool));
    if (!inserted) throw Error(Errc::duplicate_key_id, "pool " + master_sae + "->" + slave_sae + " already exists");
    link->second->pools.push_back(it->second.get());
}

void KeyManager::peer(KeyManager& a, KeyManager& b, const std::string& link_id) {
    a.link_for(link_id).peer = &b;
    b.link_for(link_id).peer = &a;
}

KeyManager::Link& KeyManager::link_for(const std::string& link_id) const {
    std::shared_lock lock(registry_mutex_);
    const auto it = links_.find(link_id);
    if (it == links_.end()) throw Error(Errc::unknown_link, link_id + " at KME " + id_);
    return *it->second;
}

KeyManager::Pool& KeyManager::pool_for(const std::string& master, const std::string& slave) const {
    std::shared_lock lock(registry_mutex_);
    const auto it = pools_.find({master, slave});
    if (it == pools_.end()) throw Error(Errc::no_such_pool, master + "->" + slave + " at KME " + id_);
    return *it->second;
}

void KeyManager::require_registered(const SaeIdentity& requester) const {
    std::shared_lock lock(registry_mutex_);
    const auto it = saes_.find(requester.sae_id);
    if (it == saes_.end() || !equal_ct(it->second.credential, requester.credential)) {
        throw Error(Errc::unknown_credential, requester.sae_id + " is not registered at KME " + id_);
    }
}

void KeyManager::push_keys(const std::string& link_id, std::span<const KeyBlock> blocks) {
    auto& link = link_for(link_id);
    std::lock_guard link_lock(link.mutex);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].material.size() != kBlockBytes) {
            throw Error(Errc::size_unsupported, "pushed blocks must be 256 bits");
        }
        if (link.history.contains(blocks[i].id)) {
            throw Error(Errc::duplicate_key_id, blocks[i].id.to_string() + " on link " + link_id);
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (blocks[j].id == blocks[i].id) throw Error(Errc::duplicate_key_id, blocks[i].id.to_string());
        }
    }
    for (const auto& b : blocks) {
        link.history.insert(b.id);
        if (link.pools.empty()) {
            ++link.unassigned;
            continue;
        }
        auto& pool = *link.pools[link.dealt++ % link.pools.size()];
        std::lock_guard pool_lock(pool.mutex);
        StoredBlock stored{b.id, {}};
        std::copy(b.material.begin(), b.material.end(), stored.material.begin());
        ++pool.pushed;
        if (pool.early_claims.erase(b.id) > 0) pool.delivered_enc.emplace(b.id, stored);
        else pool.available.push_back(stored);
    }
}

PoolStatus KeyManager::get_status(const SaeIdentity& requester, const std::string& slave_sae) const {
    require_registered(requester);
    const auto& pool = pool_for(requester.sae_id, slave_sae);
    std::lock_guard lock(pool.mutex);
    PoolStatus s;
    s.stored_key_count = pool.available.size();
    s.key_size_bits = kBlockBits;
    s.max_key_per_request = config_.max_key_per_request;
    s.source_sae = pool.master_sae;
    s.target_sae = pool.slave_sae;
    return s;
}

std::vector<KeyBlock> KeyManager::get_enc_keys(const SaeIdentity& requester, const std::string& slave_sae,
                                               std::uint32_t number, std::uint32_t size_bits) {
    require_registered(requester);
    if (number == 0) throw Error(Errc::malformed_request, "number must be positive");
    if (size_bits == 0 || size_bits % kBlockBits != 0) {
        throw Error(Errc::size_unsupported, std::to_string(size_bits) + " bits is not a multiple of 256");
    }
    if (number > config_.max_key_per_request) {
        throw Error(Errc::too_many_keys, std::to_string(number) + " keys requested, max " +
                                             std::to_string(config_.max_key_per_request));
    }
    auto& pool = pool_for(requester.sae_id, slave_sae);
    const std::size_t per_key = size_bits / kBlockBits;
    const std::size_t blocks = per_key * number;

    std::lock_guard lock(pool.mutex);
    if (pool.available.size() < blocks) {
        const auto missing = static_cast<std::int64_t>(blocks - pool.available.size());
        throw KeyStarvation(Errc::insufficient_keys, missing * static_cast<std::int64_t>(kBlockBits),
                            std::to_string(pool.available.size()) + " blocks available in " + requester.sae_id + "->" +
                                slave_sae);
    }

    std::vector<KeyBlock> out;
    std::vector<KeyId> claimed;
    std::vector<std::pair<KeyId, std::vector<KeyId>>> compounds;
    out.reserve(number);
    for (std::uint32_t k = 0; k < number; ++k) {
        KeyBlock entry;
        std::vector<KeyId> members;
        for (std::size_t j = 0; j < per_key; ++j) {
            auto b = pool.available.front();
            pool.available.pop_front();
            if (j == 0) entry.id = b.id;
            entry.material.insert(entry.material.end(), b.material.begin(), b.material.end());
            members.push_back(b.id);
            claimed.push_back(b.id);
            pool.delivered_enc.emplace(b.id, b);
        }
        if (per_key > 1) {
            pool.compound.emplace(entry.id, members);
            compounds.emplace_back(entry.id, std::move(members));
        }
        out.push_back(std::move(entry));
    }
    {
        std::lock_guard stats(stats_mutex_);
        enc_deliveries_ += claimed.size();
    }
    if (auto* peer = link_for(pool.link_id).peer) peer->mirror_claim(pool.master_sae, pool.slave_sae, claimed, compounds);
    return out;
}

void KeyManager::mirror_claim(const std::string& master, const std::string& slave, std::span<const KeyId> ids,
                              const std::vector<std::pair<KeyId, std::vector<KeyId>>>& compounds) {
    auto& pool = pool_for(master, slave);
    std::lock_guard lock(pool.mutex);
    for (const auto& id : ids) {
        if (!pool.available.empty() && pool.available.front().id == id) {
            pool.delivered_enc.emplace(id, pool.available.front());
            pool.available.pop_front();
            continue;
        }
        const auto it = std::find_if(pool.available.begin(), pool.available.end(),
                                     [&](const StoredBlock& b) { return b.id == id; });
        if (it != pool.available.end()) {
            pool.delivered_enc.emplace(id, *it);
            pool.available.erase(it);
        } else {
            pool.early_claims.insert(id);
        }
    }
    for (const auto& [head, members] : compounds) pool.compound.emplace(head, members);
}

std::vector<KeyBlock> KeyManager::get_dec_keys(const SaeIdentity& requester, const std::string& master_sae,
                                               std::span<const KeyId> key_ids) {
    require_registered(requester);
    auto& pool = pool_for(master_sae, requester.sae_id);
    std::lock_guard lock(pool.mutex);

    const auto members_of = [&](const KeyId& id) {
        const auto c = pool.compound.find(id);
        return c == pool.compound.end() ? std::vector<KeyId>{id} : c->second;
    };

    // Validate everything first so a bad id leaves no trace.
    for (const auto& id : key_ids) {
        for (const auto& m : members_of(id)) {
            if (pool.delivered_enc.contains(m)) {
                if (config_.strict_once_delivery && pool.delivered_dec.contains(m)) {
                    throw Error(Errc::key_id_not_found, m.to_string() + " was already delivered");
                }
                continue;
            }
            const bool known = std::any_of(pool.available.begin(), pool.available.end(),
                                           [&](const StoredBlock& b) { return b.id == m; });
            if (known) throw Error(Errc::key_id_not_yet_claimed, m.to_string());
            throw Error(Errc::key_id_not_found, m.to_string());
        }
    }

    std::vector<KeyBlock> out;
    out.reserve(key_ids.size());
    for (const auto& id : key_ids) {
        KeyBlock entry{id, {}};
        for (const auto& m : members_of(id)) {
            const auto& b = pool.delivered_enc.at(m);
            entry.material.insert(entry.material.end(), b.material.begin(), b.material.end());
            pool.delivered_dec.insert(m);
        }
        out.push_back(std::move(entry));
    }
    return out;
}

PoolAudit KeyManager::audit(const std::string& master_sae, const std::string& slave_sae) const {
    const auto& pool = pool_for(master_sae, slave_sae);
    std::lock_guard lock(pool.mutex);
    return {pool.pushed, pool.available.size(), pool.delivered_enc.size(), pool.delivered_dec.size()};
}

std::vector<std::pair<std::string, std::string>> KeyManager::pools() const {
    std::shared_lock lock(registry_mutex_);
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, pool] : pools_) out.push_back(key);
    return out;
}

std::uint64_t KeyManager::unassigned_blocks(const std::string& link_id) const {
    auto& link = link_for(link_id);
    std::lock_guard lock(link.mutex);
    return link.unassigned;
}

std::uint64_t KeyManager::enc_deliveries() const {
    std::lock_guard lock(stats_mutex_);
    return enc_deliveries_;
}

} // namespace sdqn::kms
