#include "sdqn/control_channel.hpp"

#include "sdqn/error.hpp"

#include <unordered_map>

namespace sdqn::channel {

namespace {

std::optional<Kind> parse_kind(std::string_view text) {
    for (auto k : {Kind::hello, Kind::rpc, Kind::rpc_reply, Kind::notification}) {
        if (to_string(k) == text) return k;
    }
    return std::nullopt;
}

xml::Element policy_element(std::string tag, const codec::EncryptionPolicy& p) {
    xml::Element e(std::move(tag));
    e.set_attribute("level", std::string(codec::to_string(p.level)));
    e.set_attribute("ciphers", std::string(codec::to_string(p.ciphers)));
    for (const auto& t : p.selected_tags) e.add_leaf("tag", t);
    return e;
}

codec::EncryptionPolicy parse_policy(const xml::Element& e) {
    codec::EncryptionPolicy p;
    const auto* level = e.attribute("level");
    const auto* ciphers = e.attribute("ciphers");
    if (level == nullptr || ciphers == nullptr) throw Error(Errc::policy_mismatch, "policy without level/ciphers");
    p.level = codec::parse_level(*level);
    p.ciphers = codec::parse_cipher(*ciphers);
    for (const auto* t : e.children_named("tag")) p.selected_tags.insert(t->text());
    p.validate();
    return p;
}

std::string leaf_text(const xml::Element& e, std::string_view tag) {
    const auto* c = e.child(tag);
    return c == nullptr ? std::string() : c->text();
}

xml::Element without_auth(const xml::Element& hello) {
    xml::Element copy(hello.tag);
    copy.attributes = hello.attributes;
    for (const auto& c : hello.children) {
        if (c.is_element() && c.element().tag == "auth") continue;
        copy.children.push_back(c);
    }
    return copy;
}

xml::Element hello_reject(Errc reason) {
    xml::Element e("hello-reject");
    e.set_attribute("reason", std::string(to_string(reason)));
    return e;
}

} // namespace

std::string_view to_string(Kind kind) noexcept {
    switch (kind) {
    case Kind::hello: return "hello";
    case Kind::rpc: return "rpc";
    case Kind::rpc_reply: return "rpc-reply";
    case Kind::notification: return "notification";
    }
    return "?";
}

Bytes frame(const Envelope& envelope) {
    xml::Element e("envelope");
    e.set_attribute("session-id", envelope.session_id);
    e.set_attribute("seq", std::to_string(envelope.seq));
    e.set_attribute("kind", std::string(to_string(envelope.kind)));
    e.add(envelope.body);
    auto text = xml::serialize(e);
    if (text.find(kDelimiter) != std::string::npos) {
        throw Error(Errc::body_contains_delimiter, "envelope body contains the frame delimiter");
    }
    text += kDelimiter;
    return Bytes(text.begin(), text.end());
}

void FrameReader::feed(ByteView bytes) { buffer_.append(reinterpret_cast<const char*>(bytes.data()), bytes.size()); }

std::optional<Envelope> FrameReader::next() {
    const auto end = buffer_.find(kDelimiter);
    if (end == std::string::npos) return std::nullopt;
    const std::string text = buffer_.substr(0, end);
    buffer_.erase(0, end + kDelimiter.size());

    xml::Element root;
    try {
        root = xml::parse(text);
    } catch (const Error& e) {
        throw Error(Errc::malformed_envelope, std::string("frame is not XML: ") + e.what());
    }
    const auto* session = root.attribute("session-id");
    const auto* seq = root.attribute("seq");
    const auto* kind = root.attribute("kind");
    if (root.tag != "envelope" || session == nullptr || seq == nullptr || kind == nullptr) {
        throw Error(Errc::malformed_envelope, "frame is not an <envelope>");
    }
    const auto parsed_kind = parse_kind(*kind);
    if (!parsed_kind) throw Error(Errc::malformed_envelope, "unknown envelope kind '" + *kind + "'");
    if (root.children.size() != 1 || !root.children.front().is_element()) {
        throw Error(Errc::malformed_envelope, "envelope must hold exactly one body element");
    }
    Envelope env;
    env.session_id = *session;
    try {
        env.seq = std::stoull(*seq);
    } catch (const std::exception&) {
        throw Error(Errc::malformed_envelope, "bad seq '" + *seq + "'");
    }
    env.kind = *parsed_kind;
    env.body = std::move(root.children.front().element());
    return env;
}

std::vector<Envelope> unframe(ByteView stream) {
    FrameReader reader;
    reader.feed(stream);
    std::vector<Envelope> out;
    while (auto env = reader.next()) out.push_back(std::move(*env));
    return out;
}

xml::Element rpc_error_reply(std::string_view tag, const std::string& message) {
    xml::Element reply("rpc-reply");
    auto& err = reply.add(xml::Element("rpc-error"));
    err.add_leaf("error-tag", std::string(tag));
    err.add_leaf("error-message", message);
    return reply;
}

xml::Element rpc_ok_reply() {
    xml::Element reply("rpc-reply");
    reply.add(xml::Element("ok"));
    return reply;
}

std::optional<std::string> rpc_error_tag(const xml::Element& reply) {
    if (const auto* err = reply.child("rpc-error")) return leaf_text(*err, "error-tag");
    return std::nullopt;
}

SessionEndpoint::SessionEndpoint(SessionConfig config, Transport& transport, kms::KeyClient& keys,
                                 codec::PadLedger& ledger, codec::NonceSource nonces)
    : config_(std::move(config)), transport_(transport), keys_(keys), ledger_(ledger), nonces_(std::move(nonces)) {
    config_.policy.validate();
    if (config_.notification_policy) config_.notification_policy->validate();
}

const codec::EncryptionPolicy& SessionEndpoint::policy_for(Kind kind) const {
    if (kind == Kind::notification && config_.notification_policy) return *config_.notification_policy;
    return config_.policy;
}

std::vector<KeyBlock> SessionEndpoint::fetch_keys(std::size_t blocks) {
    if (blocks == 0) return {};
    const auto status = keys_.status(config_.peer_sae);
    max_per_request_ = status.max_key_per_request;
    if (status.stored_key_count < blocks) {
        throw KeyStarvation(Errc::insufficient_key_material,
                            static_cast<std::int64_t>((blocks - status.stored_key_count) * kBlockBits),
                            config_.local_sae + "->" + config_.peer_sae + " pool holds " +
                                std::to_string(status.stored_key_count) + " of " + std::to_string(blocks) + " blocks");
    }
    std::vector<KeyBlock> out;
    out.reserve(blocks);
    while (out.size() < blocks) {
        const auto chunk = static_cast<std::uint32_t>(std::min<std::size_t>(blocks - out.size(), *max_per_request_));
        try {
            auto got = keys_.enc_keys(config_.peer_sae, chunk, kBlockBits);
            std::move(got.begin(), got.end(), std::back_inserter(out));
        } catch (const KeyStarvation& e) {
            throw KeyStarvation(Errc::insufficient_key_material, e.deficit_bits(), e.what());
        }
    }
    return out;
}

void SessionEndpoint::send_plain(Kind kind, std::uint64_t seq, xml::Element body) {
    const auto bytes = frame({config_.session_id, seq, kind, std::move(body)});
    transport_.send(bytes);
}

void SessionEndpoint::send_protected(Kind kind, std::uint64_t seq, const xml::Element& body,
                                     const std::string& message_id) {
    const auto& policy = policy_for(kind);
    const auto cost = codec::key_cost(body, policy);
    const auto keys = fetch_keys(codec::blocks_needed(cost));
    const std::string ledger_id =
        config_.session_id + "/" + config_.local_sae + "/" + std::string(to_string(kind)) + "/" + std::to_string(seq);
    auto enc = codec::encrypt_message(body, policy, keys, ledger_, ledger_id, nonces_);

    MessageUsage u;
    u.session_id = config_.session_id;
    u.sender_sae = config_.local_sae;
    u.kind = kind;
    u.seq = seq;
    u.message_id = message_id;
    u.policy = policy.to_string();
    u.bits_used = enc.record.bits_used;
    for (const auto& k : keys) {
        u.bits_fetched += k.size_bits();
        u.key_ids.push_back(k.id);
    }
    send_plain(kind, seq, std::move(enc.tree));
    usage_.push_back(u);
    if (usage_sink_) usage_sink_(u);
}

xml::Element SessionEndpoint::unprotect(const xml::Element& body) {
    try {
        const auto ids = codec::referenced_key_ids(body);
        std::unordered_map<KeyId, KeyBlock> material;
        if (!ids.empty()) {
            for (auto& k : keys_.dec_keys(config_.peer_sae, ids)) material.emplace(k.id, std::move(k));
        }
        return codec::decrypt_message(body, [&](const KeyId& id) -> std::optional<KeyBlock> {
            const auto it = material.find(id);
            if (it == material.end()) return std::nullopt;
            return it->second;
        });
    } catch (const Error& e) {
        throw Error(Errc::decrypt_failure, e.what());
    }
}

std::optional<Envelope> SessionEndpoint::next_envelope(std::chrono::milliseconds timeout) {
    while (true) {
        if (auto env = reader_.next()) return env;
        auto bytes = transport_.receive(timeout);
        if (!bytes) return std::nullopt;
        reader_.feed(*bytes);
    }
}

xml::Element SessionEndpoint::hello_body(const std::string& challenge, const std::string& role) const {
    xml::Element hello("hello");
    hello.add_leaf("session-id", config_.session_id);
    hello.add_leaf("sae-id", config_.local_sae);
    hello.add_leaf("peer-sae-id", config_.peer_sae);
    hello.add_leaf("role", role);
    hello.add_leaf("challenge", challenge);
    hello.add(policy_element("policy", config_.policy));
    if (config_.notification_policy) hello.add(policy_element("notification-policy", *config_.notification_policy));
    const auto mac = hmac_sha256(config_.bootstrap_secret, as_bytes(xml::serialize(hello)));
    hello.add_leaf("auth", base64_encode(mac));
    return hello;
}

bool SessionEndpoint::verify_hello(const xml::Element& hello) const {
    const auto* auth = hello.child("auth");
    if (auth == nullptr) return false;
    Bytes presented;
    try {
        presented = base64_decode(auth->text());
    } catch (const Error&) {
        return false;
    }
    const auto expected = hmac_sha256(config_.bootstrap_secret, as_bytes(xml::serialize(without_auth(hello))));
    return equal_ct(presented, expected);
}

void InitiatorSession::open() {
    const auto n1 = nonces_();
    const auto n2 = nonces_();
    Bytes raw(n1.begin(), n1.end());
    raw.insert(raw.end(), n2.begin(), n2.begin() + 4);
    const auto challenge = hex_encode(raw);

    send_plain(Kind::hello, 0, hello_body(challenge, "initiator"));
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(config_.timeout_s * 1000));
    while (true) {
        auto env = next_envelope(timeout);
        if (!env) throw Error(Errc::timeout, "no HELLO from " + config_.peer_sae);
        if (env->kind != Kind::hello) continue;
        const auto& body = env->body;
        if (body.tag == "hello-reject") {
            const auto* reason = body.attribute("reason");
            const auto code = reason ? errc_from_string(*reason) : std::nullopt;
            throw Error(code.value_or(Errc::bootstrap_auth_failure), config_.peer_sae + " rejected HELLO");
        }
        if (body.tag != "hello" || !verify_hello(body) || leaf_text(body, "role") != "responder" ||
            leaf_text(body, "challenge") != challenge || leaf_text(body, "sae-id") != config_.peer_sae) {
            throw Error(Errc::bootstrap_auth_failure, "HELLO from " + config_.peer_sae + " failed authentication");
        }
        const auto* policy = body.child("policy");
        if (policy == nullptr || parse_policy(*policy) != config_.policy) {
            throw Error(Errc::policy_mismatch, config_.peer_sae + " answered with a different policy");
        }
        established_ = true;
        return;
    }
}

void InitiatorSession::dispatch_notification(const Envelope& env) {
    auto body = unprotect(env.body);
    if (on_notification_) on_notification_(body);
}

xml::Element InitiatorSession::send_rpc(xml::Element body) {
    if (!established_) throw Error(Errc::session_closed, "session " + config_.session_id + " is not open");
    if (body.tag != "rpc") {
        xml::Element wrapped("rpc");
        wrapped.add(std::move(body));
        body = std::move(wrapped);
    }
    if (body.attribute("message-id") == nullptr) {
        body.set_attribute("message-id", config_.local_sae + "-" + std::to_string(next_message_number()));
    }
    const std::string message_id = *body.attribute("message-id");
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(config_.timeout_s * 1000));

    last_round_ = {};
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        const auto seq = next_seq_++;
        const auto sent_before = usage().size();
        ++last_round_.attempts;
        send_protected(Kind::rpc, seq, body, message_id);
        for (auto i = sent_before; i < usage().size(); ++i) {
            last_round_.request_bits_used += usage()[i].bits_used;
            last_round_.request_bits_fetched += usage()[i].bits_fetched;
        }
        while (auto env = next_envelope(timeout)) {
            if (env->kind == Kind::notification) {
                dispatch_notification(*env);
            } else if (env->kind == Kind::rpc_reply && env->seq == seq) {
                auto reply = unprotect(env->body);
                // Replies the responder could not protect travel in the clear.
                const auto tag = rpc_error_tag(reply);
                const bool plain = tag && (*tag == to_string(Errc::insufficient_key_material) ||
                                           *tag == to_string(Errc::decrypt_failure) || *tag == "session-closed");
                if (!plain) last_round_.reply_bits_used = codec::key_cost(reply, policy_for(Kind::rpc_reply)).total_bits;
                return reply;
            }
            // anything else is a stale reply to an earlier attempt
        }
    }
    throw Error(Errc::timeout, "no reply to " + message_id + " from " + config_.peer_sae + " after " +
                                   std::to_string(config_.max_retries + 1) + " attempts");
}

void InitiatorSession::poll() {
    while (auto env = next_envelope(std::chrono::milliseconds(0))) {
        if (env->kind == Kind::notification) dispatch_notification(*env);
    }
}

ResponderSession::ResponderSession(SessionConfig config, Transport& transport, kms::KeyClient& keys,
                                   codec::PadLedger& ledger, codec::NonceSource nonces, RpcHandler handler)
    : SessionEndpoint(std::move(config), transport, keys, ledger, std::move(nonces)), handler_(std::move(handler)) {}

void ResponderSession::process() {
    while (auto env = next_envelope(std::chrono::milliseconds(0))) handle(*env);
}

void ResponderSession::handle(const Envelope& env) {
    if (env.kind == Kind::hello) {
        const auto& body = env.body;
        if (body.tag != "hello" || !verify_hello(body) || leaf_text(body, "role") != "initiator" ||
            leaf_text(body, "sae-id") != config_.peer_sae || leaf_text(body, "peer-sae-id") != config_.local_sae) {
            send_plain(Kind::hello, 0, hello_reject(Errc::bootstrap_auth_failure));
            return;
        }
        codec::EncryptionPolicy offered;
        std::optional<codec::EncryptionPolicy> offered_notification;
        try {
            offered = parse_policy(*body.child("policy"));
            if (const auto* np = body.child("notification-policy")) offered_notification = parse_policy(*np);
        } catch (const Error&) {
            send_plain(Kind::hello, 0, hello_reject(Errc::policy_mismatch));
            return;
        }
        if (required_policy_ && *required_policy_ != offered) {
            send_plain(Kind::hello, 0, hello_reject(Errc::policy_mismatch));
            return;
        }
        config_.policy = offered;
        config_.notification_policy = offered_notification;
        config_.session_id = leaf_text(body, "session-id");
        send_plain(Kind::hello, 0, hello_body(leaf_text(body, "challenge"), "responder"));
        established_ = true;
        return;
    }
    if (env.kind != Kind::rpc) return;
    if (!established_) {
        send_plain(Kind::rpc_reply, env.seq, rpc_error_reply("session-closed", "no HELLO on this session"));
        return;
    }

    xml::Element request;
    try {
        request = unprotect(env.body);
    } catch (const Error& e) {
        send_plain(Kind::rpc_reply, env.seq, rpc_error_reply(to_string(Errc::decrypt_failure), e.what()));
        return;
    }
    auto reply = handler_(request);
    const auto* mid = request.attribute("message-id");
    if (mid != nullptr) reply.set_attribute("message-id", *mid);
    try {
        send_protected(Kind::rpc_reply, env.seq, reply, mid ? *mid : std::string());
    } catch (const KeyStarvation& e) {
        send_plain(Kind::rpc_reply, env.seq, rpc_error_reply(to_string(Errc::insufficient_key_material), e.what()));
    }
}

bool ResponderSession::notify(const xml::Element& body) {
    if (!established_) return false;
    const auto seq = next_seq_++;
    try {
        send_protected(Kind::notification, seq, body, config_.local_sae + "-n" + std::to_string(seq));
        return true;
    } catch (const KeyStarvation&) {
        ++starved_notifications_;
        return false;
    }
}

} // namespace sdqn::channel
