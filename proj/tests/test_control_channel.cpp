#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sdqn/control_channel.hpp"
#include "sdqn/error.hpp"
#include "sdqn/key_delivery_api.hpp"
#include "sdqn/link_emulator.hpp"

#include <atomic>
#include <thread>

using namespace sdqn;
using channel::InitiatorSession;
using channel::Kind;
using channel::ResponderSession;
using codec::Cipher;
using codec::EncryptionPolicy;
using codec::Level;

namespace {

Bytes bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

/// Controller SAE at KME A, agent SAE at KME B, one QKD link between them.
struct Duo {
    kms::KeyManager ka{"A"};
    kms::KeyManager kb{"B"};
    kms::KeyDeliveryApi api_a{ka};
    kms::KeyDeliveryApi api_b{kb};
    kms::ApiKeyClient ctrl_keys{api_a, "ctrl", bytes_of("c")};
    kms::ApiKeyClient agent_keys{api_b, "agent", bytes_of("a")};
    codec::PadLedger ledger_a;
    codec::PadLedger ledger_b;
    std::uint64_t next_block = 0;

    Duo() {
        ka.register_sae({"ctrl", bytes_of("c"), {kms::Role::controller}});
        kb.register_sae({"agent", bytes_of("a"), {kms::Role::agent}});
        for (auto* k : {&ka, &kb}) {
            k->register_link("L");
            k->add_pool("L", "ctrl", "agent");
            k->add_pool("L", "agent", "ctrl");
        }
        kms::KeyManager::peer(ka, kb, "L");
    }

    void push(std::size_t blocks) {
        std::vector<KeyBlock> out;
        for (std::size_t i = 0; i < blocks; ++i) out.push_back(link::derive_key_block(bytes_of("k"), "L", next_block++));
        ka.push_keys("L", out);
        kb.push_keys("L", out);
    }

    channel::SessionConfig initiator_config(EncryptionPolicy p, std::string secret = "s3cret") const {
        channel::SessionConfig c;
        c.session_id = "S1";
        c.local_sae = "ctrl";
        c.peer_sae = "agent";
        c.policy = std::move(p);
        c.bootstrap_secret = bytes_of(secret);
        c.timeout_s = 0.0;
        return c;
    }

    channel::SessionConfig responder_config(std::string secret = "s3cret") const {
        channel::SessionConfig c;
        c.session_id = "pending";
        c.local_sae = "agent";
        c.peer_sae = "ctrl";
        c.bootstrap_secret = bytes_of(secret);
        return c;
    }
};

xml::Element echo(const xml::Element& request) {
    xml::Element reply("rpc-reply");
    auto& data = reply.add(xml::Element("data"));
    for (const auto& c : request.children) {
        if (c.is_element()) data.add(c.element());
    }
    return reply;
}

xml::Element sample_rpc() {
    xml::Element op("get-link-status");
    op.add_leaf("qkdl_id", "N1-N2");
    op.add_leaf("note", "<&> ünïcode");
    return op;
}

/// Memory-connected pair of sessions on a Duo.
struct Wired {
    std::unique_ptr<channel::MemoryEndpoint> ctrl_end;
    std::unique_ptr<channel::MemoryEndpoint> agent_end;
    std::unique_ptr<InitiatorSession> initiator;
    std::unique_ptr<ResponderSession> responder;

    Wired(Duo& d, const EncryptionPolicy& p, ResponderSession::RpcHandler handler = echo,
          std::string agent_secret = "s3cret") {
        auto [c, a] = channel::MemoryEndpoint::make_pair();
        ctrl_end = std::move(c);
        agent_end = std::move(a);
        responder = std::make_unique<ResponderSession>(d.responder_config(agent_secret), *agent_end, d.agent_keys,
                                                       d.ledger_b, codec::seeded_nonces(1), std::move(handler));
        auto* r = responder.get();
        agent_end->set_on_data([r] { r->process(); });
        initiator = std::make_unique<InitiatorSession>(d.initiator_config(p), *ctrl_end, d.ctrl_keys, d.ledger_a,
                                                       codec::seeded_nonces(2));
    }
};

const EncryptionPolicy kDataOnly{Level::data_only, Cipher::otp, {}};

} // namespace

TEST_SUITE("framing") {

TEST_CASE("frames round-trip and split on the delimiter") {
    channel::Envelope e{"S", 7, Kind::rpc, sample_rpc()};
    const auto bytes = channel::frame(e);
    const std::string text(bytes.begin(), bytes.end());
    CHECK(text.starts_with("<envelope session-id=\"S\" seq=\"7\" kind=\"rpc\">"));
    CHECK(text.ends_with("</envelope>]]>]]>"));

    Bytes stream = bytes;
    const auto second = channel::frame({"S", 8, Kind::notification, xml::Element("n")});
    stream.insert(stream.end(), second.begin(), second.end());
    const auto envs = channel::unframe(stream);
    REQUIRE(envs.size() == 2);
    CHECK(envs[0] == e);
    CHECK(envs[1].kind == Kind::notification);
}

TEST_CASE("a reader fed one byte at a time") {
    const auto bytes = channel::frame({"S", 1, Kind::rpc_reply, sample_rpc()});
    channel::FrameReader reader;
    for (std::size_t i = 0; i + 1 < bytes.size(); ++i) {
        reader.feed(ByteView(&bytes[i], 1));
        CHECK_FALSE(reader.next().has_value());
    }
    reader.feed(ByteView(&bytes.back(), 1));
    const auto env = reader.next();
    REQUIRE(env.has_value());
    CHECK(env->seq == 1);
    CHECK(reader.buffered() == 0);
}

TEST_CASE("malformed frames") {
    channel::FrameReader reader;
    reader.feed(as_bytes("<notenvelope/>]]>]]>"));
    CHECK_THROWS_AS(reader.next(), Error);
    channel::FrameReader r2;
    r2.feed(as_bytes("<envelope session-id=\"S\" seq=\"x\" kind=\"rpc\"><a/></envelope>]]>]]>"));
    CHECK_THROWS_AS(r2.next(), Error);
    channel::FrameReader r3;
    r3.feed(as_bytes("<envelope session-id=\"S\" seq=\"1\" kind=\"bogus\"><a/></envelope>]]>]]>"));
    CHECK_THROWS_AS(r3.next(), Error);
}

} // TEST_SUITE

TEST_SUITE("sessions") {

TEST_CASE("HELLO establishes both ends and the responder adopts the policy") {
    Duo d;
    Wired w(d, kDataOnly);
    w.initiator->open();
    CHECK(w.initiator->established());
    CHECK(w.responder->established());
    CHECK(w.responder->config().policy == kDataOnly);
    CHECK(w.responder->config().session_id == "S1");
}

TEST_CASE("a wrong bootstrap secret is rejected") {
    Duo d;
    Wired w(d, kDataOnly, echo, "other-secret");
    try {
        w.initiator->open();
        FAIL("opened with mismatched secrets");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::bootstrap_auth_failure);
    }
    CHECK_FALSE(w.responder->established());
}

TEST_CASE("a pinned responder policy refuses other offers") {
    Duo d;
    Wired w(d, kDataOnly);
    w.responder->require_policy({Level::full, Cipher::otp, {}});
    try {
        w.initiator->open();
        FAIL("opened with a policy the responder does not accept");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::policy_mismatch);
    }
}

TEST_CASE("rpc before open") {
    Duo d;
    Wired w(d, kDataOnly);
    CHECK_THROWS_AS(w.initiator->send_rpc(sample_rpc()), Error);
}

TEST_CASE("protected rpc round trip and accounting") {
    Duo d;
    d.push(20);
    Wired w(d, kDataOnly);
    w.initiator->open();
    const auto reply = w.initiator->send_rpc(sample_rpc());
    REQUIRE(reply.child("data") != nullptr);
    REQUIRE(reply.child("data")->child("get-link-status") != nullptr);
    CHECK(*reply.child("data")->child("get-link-status") == sample_rpc());
    CHECK(reply.attribute("message-id") != nullptr);

    REQUIRE(w.initiator->usage().size() == 1);
    REQUIRE(w.responder->usage().size() == 1);
    const auto& req = w.initiator->usage().front();
    const auto& rep = w.responder->usage().front();
    CHECK(req.kind == Kind::rpc);
    CHECK(rep.kind == Kind::rpc_reply);
    CHECK(req.message_id == rep.message_id);
    // "N1-N2" + "<&> ünïcode" (13 bytes) = 18 bytes of text
    CHECK(req.bits_used == 8 * 18);
    CHECK(req.bits_fetched == 256);
    CHECK(rep.bits_used == req.bits_used);
    const auto& cost = w.initiator->last_round();
    CHECK(cost.attempts == 1);
    CHECK(cost.request_bits_used == req.bits_used);
    CHECK(cost.reply_bits_used == rep.bits_used);
    CHECK(cost.total_used() == 2 * 8 * 18);
    CHECK_FALSE(d.ledger_a.has_overlaps());
    // the two directions draw from separate pools
    CHECK(req.key_ids != rep.key_ids);
}

TEST_CASE("NONE sends plaintext and spends nothing") {
    Duo d;
    Wired w(d, {Level::none, Cipher::otp, {}});
    w.initiator->open();
    const auto reply = w.initiator->send_rpc(sample_rpc());
    CHECK(reply.child("data") != nullptr);
    CHECK(w.initiator->usage().front().bits_used == 0);
    CHECK(w.initiator->usage().front().bits_fetched == 0);
}

TEST_CASE("a lost reply is retried with fresh keys and the same message-id") {
    Duo d;
    d.push(20);
    int calls = 0;
    channel::MemoryEndpoint* agent_end = nullptr;
    Wired w(d, kDataOnly, [&](const xml::Element& r) {
        ++calls;
        agent_end->set_drop(calls == 1);
        return echo(r);
    });
    agent_end = w.agent_end.get();
    w.initiator->open();
    const auto reply = w.initiator->send_rpc(sample_rpc());
    CHECK(reply.child("data") != nullptr);
    CHECK(calls == 2);
    CHECK(w.initiator->last_round().attempts == 2);
    const auto& u = w.initiator->usage();
    REQUIRE(u.size() == 2);
    CHECK(u[0].message_id == u[1].message_id);
    CHECK(u[0].seq != u[1].seq);
    CHECK(u[0].key_ids != u[1].key_ids);
    CHECK(w.initiator->last_round().request_bits_used == u[0].bits_used + u[1].bits_used);
}

TEST_CASE("no reply at all times out after every retry") {
    Duo d;
    d.push(20);
    Wired w(d, kDataOnly);
    w.initiator->open();
    w.ctrl_end->set_drop(true);
    try {
        w.initiator->send_rpc(sample_rpc());
        FAIL("expected a timeout");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::timeout);
    }
    CHECK(w.initiator->last_round().attempts == 4);
}

TEST_CASE("a tampered request is answered with decrypt-failure") {
    Duo d;
    d.push(20);
    Wired w(d, {Level::data_only, Cipher::aes256, {}});
    w.initiator->open();
    w.ctrl_end->set_tamper([](Bytes& b) {
        std::string s(b.begin(), b.end());
        const auto at = s.find("x-nonce=\"");
        REQUIRE(at != std::string::npos);
        char& c = s[at + 9];
        c = c == 'A' ? 'B' : 'A';
        b.assign(s.begin(), s.end());
    });
    const auto reply = w.initiator->send_rpc(sample_rpc());
    CHECK(channel::rpc_error_tag(reply) == "decrypt-failure");
    CHECK(w.initiator->last_round().reply_bits_used == 0);
}

TEST_CASE("starvation on the sending side") {
    Duo d;
    Wired w(d, kDataOnly);
    w.initiator->open();
    try {
        w.initiator->send_rpc(sample_rpc());
        FAIL("sent without keys");
    } catch (const KeyStarvation& e) {
        CHECK(e.code() == Errc::insufficient_key_material);
        CHECK(e.deficit_bits() == 256);
    }
    CHECK(w.initiator->usage().empty());
    CHECK(d.ledger_a.size() == 0);
}

TEST_CASE("a starved responder replies in the clear") {
    Duo d;
    d.push(1); // one block, lands in the ctrl->agent pool
    Wired w(d, kDataOnly);
    w.initiator->open();
    const auto reply = w.initiator->send_rpc(sample_rpc());
    CHECK(channel::rpc_error_tag(reply) == "insufficient-key-material");
    CHECK(w.responder->usage().empty());
}

TEST_CASE("notifications are protected and delivered on poll") {
    Duo d;
    d.push(40);
    Wired w(d, kDataOnly);
    std::vector<xml::Element> seen;
    w.initiator->set_notification_handler([&](const xml::Element& n) { seen.push_back(n); });
    w.initiator->open();
    xml::Element note("notification");
    note.add_leaf("eventTime", "60");
    CHECK(w.responder->notify(note));
    CHECK(seen.empty());
    w.initiator->poll();
    REQUIRE(seen.size() == 1);
    CHECK(seen[0] == note);
    CHECK(w.responder->usage().back().kind == Kind::notification);
}

TEST_CASE("notifications interleaved with an rpc are dispatched, not mistaken for the reply") {
    Duo d;
    d.push(40);
    ResponderSession* responder = nullptr;
    Wired w(d, kDataOnly, [&](const xml::Element& r) {
        xml::Element note("notification");
        note.add_leaf("eventTime", "1");
        responder->notify(note);
        return echo(r);
    });
    responder = w.responder.get();
    int notes = 0;
    w.initiator->set_notification_handler([&](const xml::Element&) { ++notes; });
    w.initiator->open();
    CHECK(w.initiator->send_rpc(sample_rpc()).child("data") != nullptr);
    CHECK(notes == 1);
}

TEST_CASE("starved notifications are counted and not sent") {
    Duo d;
    Wired w(d, kDataOnly);
    w.initiator->open();
    xml::Element note("notification");
    note.add_leaf("eventTime", "60");
    CHECK_FALSE(w.responder->notify(note));
    CHECK(w.responder->starved_notifications() == 1);
}

TEST_CASE("a separate notification policy") {
    Duo d;
    d.push(60);
    auto [c, a] = channel::MemoryEndpoint::make_pair();
    auto icfg = d.initiator_config(kDataOnly);
    icfg.notification_policy = EncryptionPolicy{Level::full, Cipher::otp, {}};
    ResponderSession responder(d.responder_config(), *a, d.agent_keys, d.ledger_b, codec::seeded_nonces(1), echo);
    a->set_on_data([&] { responder.process(); });
    InitiatorSession initiator(icfg, *c, d.ctrl_keys, d.ledger_a, codec::seeded_nonces(2));
    initiator.open();
    CHECK(responder.config().notification_policy == icfg.notification_policy);
    xml::Element note("notification");
    note.add_leaf("eventTime", "60");
    REQUIRE(responder.notify(note));
    CHECK(responder.usage().back().policy == "FULL/OTP");
    CHECK(responder.usage().back().bits_used == 8 * xml::serialize(note).size());
}

TEST_CASE("sessions over a stream socket with the responder on its own thread") {
    Duo d;
    d.push(100);
    auto [c, a] = channel::SocketTransport::make_local_pair();
    ResponderSession responder(d.responder_config(), *a, d.agent_keys, d.ledger_b, codec::seeded_nonces(1), echo);
    std::atomic<bool> stop = false;
    std::thread agent([&] {
        while (!stop) {
            responder.process();
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
    });
    auto cfg = d.initiator_config({Level::data_only, Cipher::otp_then_aes256, {}});
    cfg.timeout_s = 2.0;
    InitiatorSession initiator(cfg, *c, d.ctrl_keys, d.ledger_a, codec::random_nonces());
    initiator.open();
    for (int i = 0; i < 5; ++i) {
        const auto reply = initiator.send_rpc(sample_rpc());
        CHECK(reply.child("data") != nullptr);
    }
    stop = true;
    agent.join();
    CHECK(initiator.usage().size() == 5);
    CHECK_FALSE(d.ledger_a.has_overlaps());
    CHECK_FALSE(d.ledger_b.has_overlaps());
}

TEST_CASE("rpc reply helpers") {
    const auto err = channel::rpc_error_reply("fiber-busy", "L5 already on N1/3");
    CHECK(channel::rpc_error_tag(err) == "fiber-busy");
    CHECK_FALSE(channel::rpc_error_tag(channel::rpc_ok_reply()).has_value());
    CHECK(channel::rpc_ok_reply().child("ok") != nullptr);
}

} // TEST_SUITE
