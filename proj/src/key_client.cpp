#include "sdqn/key_client.hpp"

#include "sdqn/error.hpp"

namespace sdqn::kms {

namespace {

std::vector<KeyBlock> parse_keys(const nlohmann::json& body) {
    std::vector<KeyBlock> out;
    for (const auto& k : body.at("keys")) {
        out.push_back({KeyId::parse(k.at("key_ID").get<std::string>()), base64_decode(k.at("key").get<std::string>())});
    }
    return out;
}

} // namespace

nlohmann::json ApiKeyClient::call(const std::string& method, const std::string& path, nlohmann::json body) {
    if (!reachable_) throw Error(Errc::kme_unreachable, "KME not reachable from " + sae_id_);
    const auto response = api_.handle({method, path, credential_, std::move(body)});
    if (response.status == 200) return response.body;

    const auto& detail = response.body.at("details").at(0);
    const auto name = detail.at("error").get<std::string>();
    const auto message = response.body.value("message", name);
    const auto code = errc_from_string(name).value_or(Errc::malformed_request);
    if (detail.contains("deficit_bits")) {
        throw KeyStarvation(code, detail["deficit_bits"].get<std::int64_t>(), message);
    }
    throw Error(code, message);
}

PoolStatus ApiKeyClient::status(const std::string& slave_sae) {
    const auto body = call("GET", "/api/v1/keys/" + slave_sae + "/status", nullptr);
    PoolStatus s;
    s.stored_key_count = body.at("stored_key_count").get<std::uint64_t>();
    s.key_size_bits = body.at("key_size").get<std::uint32_t>();
    s.max_key_per_request = body.at("max_key_per_request").get<std::uint32_t>();
    s.source_sae = body.at("master_SAE_ID").get<std::string>();
    s.target_sae = body.at("slave_SAE_ID").get<std::string>();
    return s;
}

std::vector<KeyBlock> ApiKeyClient::enc_keys(const std::string& slave_sae, std::uint32_t number,
                                             std::uint32_t size_bits) {
    return parse_keys(call("POST", "/api/v1/keys/" + slave_sae + "/enc_keys", {{"number", number}, {"size", size_bits}}));
}

std::vector<KeyBlock> ApiKeyClient::dec_keys(const std::string& master_sae, std::span<const KeyId> key_ids) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& id : key_ids) ids.push_back({{"key_ID", id.to_string()}});
    return parse_keys(call("POST", "/api/v1/keys/" + master_sae + "/dec_keys", {{"key_IDs", ids}}));
}

} // namespace sdqn::kms
