#include "sdqn/key_delivery_api.hpp"

#include "sdqn/error.hpp"

#include <limits>

namespace sdqn::kms {

namespace {

using nlohmann::json;

ApiResponse error_response(int status, std::string_view name, const std::string& message, std::int64_t deficit = -1) {
    json detail = {{"error", name}};
    if (deficit >= 0) detail["deficit_bits"] = deficit;
    return {status, {{"message", message}, {"details", json::array({detail})}}};
}

json key_entries(const std::vector<KeyBlock>& keys) {
    json arr = json::array();
    for (const auto& k : keys) arr.push_back({{"key_ID", k.id.to_string()}, {"key", base64_encode(k.material)}});
    return {{"keys", arr}};
}

template <typename T>
T require_positive(const json& body, const char* field) {
    const auto bad = [field] { return Error(Errc::malformed_request, std::string("'") + field + "' must be a positive integer"); };
    if (!body.is_object() || !body.contains(field) || !body[field].is_number_integer()) throw bad();
    const auto& v = body[field];
    if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u == 0 || u > std::numeric_limits<T>::max()) throw bad();
        return static_cast<T>(u);
    }
    const auto i = v.get<std::int64_t>();
    if (i <= 0 || static_cast<std::uint64_t>(i) > std::numeric_limits<T>::max()) throw bad();
    return static_cast<T>(i);
}

} // namespace

int http_status_for(Errc code) noexcept {
    switch (code) {
    case Errc::unknown_credential: return 401;
    case Errc::no_such_pool:
    case Errc::key_id_not_found: return 404;
    case Errc::insufficient_keys: return 503;
    default: return 400;
    }
}

ApiResponse KeyDeliveryApi::handle(const ApiRequest& request) const {
    static constexpr std::string_view prefix = "/api/v1/keys/";
    try {
        const auto identity = kme_.authenticate(request.credential);
        std::string_view path = request.path;
        if (!path.starts_with(prefix)) return error_response(404, "not-found", "unknown resource");
        path.remove_prefix(prefix.size());
        const auto slash = path.find('/');
        if (slash == std::string_view::npos || slash == 0) return error_response(404, "not-found", "unknown resource");
        const std::string peer_sae(path.substr(0, slash));
        const auto resource = path.substr(slash + 1);

        if (resource == "status" && request.method == "GET") {
            const auto s = kme_.get_status(identity, peer_sae);
            return {200,
                    {{"source_KME_ID", kme_.id()},
                     {"master_SAE_ID", s.source_sae},
                     {"slave_SAE_ID", s.target_sae},
                     {"key_size", s.key_size_bits},
                     {"stored_key_count", s.stored_key_count},
                     {"max_key_per_request", s.max_key_per_request}}};
        }
        if (resource == "enc_keys" && request.method == "POST") {
            const auto number = request.body.contains("number") ? require_positive<std::uint32_t>(request.body, "number") : 1U;
            const auto size = request.body.contains("size") ? require_positive<std::uint32_t>(request.body, "size")
                                                            : static_cast<std::uint32_t>(kBlockBits);
            return {200, key_entries(kme_.get_enc_keys(identity, peer_sae, number, size))};
        }
        if (resource == "dec_keys" && request.method == "POST") {
            if (!request.body.is_object() || !request.body.contains("key_IDs") || !request.body["key_IDs"].is_array()) {
                throw Error(Errc::malformed_request, "'key_IDs' must be an array");
            }
            std::vector<KeyId> ids;
            for (const auto& entry : request.body["key_IDs"]) {
                if (!entry.is_object() || !entry.contains("key_ID") || !entry["key_ID"].is_string()) {
                    throw Error(Errc::malformed_request, "each key_IDs entry needs a key_ID string");
                }
                try {
                    ids.push_back(KeyId::parse(entry["key_ID"].get<std::string>()));
                } catch (const Error&) {
                    throw Error(Errc::key_id_not_found, "malformed key_ID");
                }
            }
            return {200, key_entries(kme_.get_dec_keys(identity, peer_sae, ids))};
        }
        return error_response(405, "method-not-allowed", request.method + " " + request.path);
    } catch (const KeyStarvation& e) {
        return error_response(http_status_for(e.code()), to_string(e.code()), e.what(), e.deficit_bits());
    } catch (const Error& e) {
        return error_response(http_status_for(e.code()), to_string(e.code()), e.what());
    }
}

} // namespace sdqn::kms
