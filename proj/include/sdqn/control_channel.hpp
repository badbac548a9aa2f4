#pragma once

#include "sdqn/crypto_codec.hpp"
#include "sdqn/key_client.hpp"
#include "sdqn/transport.hpp"
#include "sdqn/xml.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sdqn::channel {

enum class Kind { hello, rpc, rpc_reply, notification };

std::string_view to_string(Kind kind) noexcept;

struct Envelope {
    std::string session_id;
    std::uint64_t seq = 0;
    Kind kind = Kind::rpc;
    xml::Element body;

    bool operator==(const Envelope&) const = default;
};

inline constexpr std::string_view kDelimiter = "]]>]]>";

/// `<envelope session-id=".." seq=".." kind="..">body</envelope>]]>]]>`
Bytes frame(const Envelope& envelope);

/// Splits a byte stream on the end-of-message delimiter.
class FrameReader {
public:
    void feed(ByteView bytes);
    /// Next complete envelope, or nullopt if more bytes are needed.
    /// Throws malformed-envelope for a frame that is not an envelope.
    std::optional<Envelope> next();
    std::size_t buffered() const noexcept { return buffer_.size(); }

private:
    std::string buffer_;
};

std::vector<Envelope> unframe(ByteView stream);

struct SessionConfig {
    std::string session_id;
    std::string local_sae;
    std::string peer_sae;
    codec::EncryptionPolicy policy;
    /// Overrides the policy for NOTIFICATION envelopes only.
    std::optional<codec::EncryptionPolicy> notification_policy;
    Bytes bootstrap_secret;
    double timeout_s = 5.0;
    int max_retries = 3;
};

/// One protected message, as seen by its sender.
struct MessageUsage {
    std::string session_id;
    std::string sender_sae;
    Kind kind = Kind::rpc;
    std::uint64_t seq = 0;
    std::string message_id;
    std::string policy;
    std::uint64_t bits_used = 0;    // key bits the cipher consumed
    std::uint64_t bits_fetched = 0; // whole 256-bit blocks drawn from the KME
    std::vector<KeyId> key_ids;
};

using UsageSink = std::function<void(const MessageUsage&)>;

/// Machinery shared by both session roles: protect/unprotect bodies with keys
/// from the local KME and account for every message.
class SessionEndpoint {
public:
    SessionEndpoint(SessionConfig config, Transport& transport, kms::KeyClient& keys, codec::PadLedger& ledger,
                    codec::NonceSource nonces);
    virtual ~SessionEndpoint() = default;

    const SessionConfig& config() const noexcept { return config_; }
    bool established() const noexcept { return established_; }
    void set_usage_sink(UsageSink sink) { usage_sink_ = std::move(sink); }
    const std::vector<MessageUsage>& usage() const noexcept { return usage_; }

protected:
    const codec::EncryptionPolicy& policy_for(Kind kind) const;
    /// Encrypts and frames; KeyStarvation escapes before anything is sent.
    void send_protected(Kind kind, std::uint64_t seq, const xml::Element& body, const std::string& message_id);
    void send_plain(Kind kind, std::uint64_t seq, xml::Element body);
    xml::Element unprotect(const xml::Element& body);
    std::optional<Envelope> next_envelope(std::chrono::milliseconds timeout);

    xml::Element hello_body(const std::string& challenge, const std::string& role) const;
    bool verify_hello(const xml::Element& hello) const;

    SessionConfig config_;
    Transport& transport_;
    kms::KeyClient& keys_;
    codec::PadLedger& ledger_;
    codec::NonceSource nonces_;
    FrameReader reader_;
    bool established_ = false;
    std::uint64_t next_seq_ = 1;

private:
    std::vector<KeyBlock> fetch_keys(std::size_t blocks);

    UsageSink usage_sink_;
    std::vector<MessageUsage> usage_;
    std::optional<std::uint32_t> max_per_request_;
};

/// Key material spent on one send_rpc call, over all its attempts.
struct RoundCost {
    std::uint64_t request_bits_used = 0;
    std::uint64_t request_bits_fetched = 0;
    std::uint64_t reply_bits_used = 0; // recomputed from the decrypted reply
    int attempts = 0;

    std::uint64_t total_used() const noexcept { return request_bits_used + reply_bits_used; }
};

/// Controller side: opens the session and issues stop-and-wait RPCs.
class InitiatorSession final : public SessionEndpoint {
public:
    using NotificationHandler = std::function<void(const xml::Element&)>;

    using SessionEndpoint::SessionEndpoint;

    /// HELLO exchange. Throws bootstrap-auth-failure, policy-mismatch or timeout.
    void open();
    /// Sends `body` (an <rpc> element; a message-id is added when missing) and
    /// returns the decrypted reply body. Retries on timeout with fresh keys and
    /// the same message-id. Throws timeout, decrypt-failure or KeyStarvation.
    xml::Element send_rpc(xml::Element body);
    /// Processes whatever is queued (telemetry notifications).
    void poll();

    void set_notification_handler(NotificationHandler handler) { on_notification_ = std::move(handler); }
    std::uint64_t next_message_number() noexcept { return next_message_++; }
    /// Cost of the most recent send_rpc, also filled in when it threw.
    const RoundCost& last_round() const noexcept { return last_round_; }

private:
    void dispatch_notification(const Envelope& env);

    RoundCost last_round_;
    NotificationHandler on_notification_;
    std::uint64_t next_message_ = 1;
};

/// Agent side: answers HELLO and RPCs, publishes notifications.
class ResponderSession final : public SessionEndpoint {
public:
    using RpcHandler = std::function<xml::Element(const xml::Element& request)>;

    ResponderSession(SessionConfig config, Transport& transport, kms::KeyClient& keys, codec::PadLedger& ledger,
                     codec::NonceSource nonces, RpcHandler handler);

    /// Handles every complete frame currently readable.
    void process();
    /// Sends an encrypted NOTIFICATION. Returns false (and sends nothing) if the
    /// session is not open or the local pool is starved.
    bool notify(const xml::Element& body);

    /// Responder may pin the policy it accepts; a different HELLO is rejected.
    void require_policy(codec::EncryptionPolicy policy) { required_policy_ = std::move(policy); }
    std::uint64_t starved_notifications() const noexcept { return starved_notifications_; }

private:
    void handle(const Envelope& env);

    RpcHandler handler_;
    std::optional<codec::EncryptionPolicy> required_policy_;
    std::uint64_t starved_notifications_ = 0;
};

/// `<rpc-reply><rpc-error><error-tag>tag</error-tag><error-message>..</error-message></rpc-error></rpc-reply>`
xml::Element rpc_error_reply(std::string_view tag, const std::string& message);
xml::Element rpc_ok_reply();
/// Error tag of an rpc-reply, if it is an error.
std::optional<std::string> rpc_error_tag(const xml::Element& reply);

} // namespace sdqn::channel
