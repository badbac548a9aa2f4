#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"

#include "sdqn/bytes.hpp"
#include "sdqn/error.hpp"
#include "sdqn/text.hpp"
#include "sdqn/xml.hpp"

#include <random>

using namespace sdqn;

namespace {

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an sdqn::Error");
    return Errc::malformed_document;
}

} // namespace

TEST_SUITE("xml") {

TEST_CASE("canonical serialization of a small document") {
    const auto doc = xml::parse("<a x='1'  y=\"&lt;&amp;&quot;\"><b/>t&gt;<c></c></a>");
    CHECK(xml::serialize(doc) == "<a x=\"1\" y=\"&lt;&amp;&quot;\"><b/>t&gt;<c/></a>");
    REQUIRE(doc.attribute("y") != nullptr);
    CHECK(*doc.attribute("y") == "<&\"");
    CHECK(doc.text() == "t>");
}

TEST_CASE("numeric character references decode to UTF-8") {
    const auto doc = xml::parse("<a>&#65;&#x3b1;&#x1F511;</a>");
    CHECK(doc.text() == "A\xCE\xB1\xF0\x9F\x94\x91");
}

TEST_CASE("entity-decoded text coalesces into one text node") {
    const auto doc = xml::parse("<a>x&amp;y</a>");
    REQUIRE(doc.children.size() == 1);
    CHECK(doc.children[0].text().value == "x&y");
}

TEST_CASE("whitespace inside text survives a round trip") {
    const std::string src = "<a>\n  <b> two  spaces </b>\t</a>";
    CHECK(xml::serialize(xml::parse(src)) == src);
}

TEST_CASE("random trees round-trip through serialize and parse") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 300; ++i) {
        const auto tree = oracle::random_tree(rng);
        const auto text = xml::serialize(tree);
        CHECK(xml::parse(text) == tree);
        CHECK(xml::serialize(xml::parse(text)) == text);
    }
}

TEST_CASE("unsupported constructs are named as such") {
    CHECK(code_of([] { xml::parse("<a><!-- c --></a>"); }) == Errc::unsupported_construct);
    CHECK(code_of([] { xml::parse("<?xml version='1.0'?><a/>"); }) == Errc::unsupported_construct);
    CHECK(code_of([] { xml::parse("<a><![CDATA[x]]></a>"); }) == Errc::unsupported_construct);
    CHECK(code_of([] { xml::parse("<!DOCTYPE a><a/>"); }) == Errc::unsupported_construct);
}

TEST_CASE("malformed documents report line and column") {
    try {
        xml::parse("<a>\n<b></c></a>");
        FAIL("accepted mismatched tags");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::malformed_document);
        CHECK(std::string(e.what()).find("2:") != std::string::npos);
    }
    CHECK(code_of([] { xml::parse("<a x='1' x='2'/>"); }) == Errc::malformed_document);
    CHECK(code_of([] { xml::parse("<a>&bogus;</a>"); }) == Errc::malformed_document);
    CHECK(code_of([] { xml::parse("<a/><b/>"); }) == Errc::malformed_document);
    CHECK(code_of([] { xml::parse("<a>"); }) == Errc::malformed_document);
    CHECK(code_of([] { xml::parse("text"); }) == Errc::malformed_document);
    CHECK(code_of([] { xml::parse("<a>\xC3</a>"); }) == Errc::malformed_document);
    CHECK(code_of([] { xml::parse("<a>&#0;</a>"); }) == Errc::malformed_document);
}

TEST_CASE("utf-8 and name validation") {
    CHECK(xml::is_valid_utf8("plain \xE2\x82\xAC"));
    CHECK_FALSE(xml::is_valid_utf8("\xC0\xAF"));         // overlong
    CHECK_FALSE(xml::is_valid_utf8("\xED\xA0\x80"));     // surrogate
    CHECK_FALSE(xml::is_valid_utf8("\xF4\x90\x80\x80")); // above U+10FFFF
    CHECK(xml::is_valid_name("qkd_link"));
    CHECK(xml::is_valid_name("ns:tag"));
    CHECK_FALSE(xml::is_valid_name("1abc"));
    CHECK_FALSE(xml::is_valid_name(""));
    CHECK_FALSE(xml::is_valid_name("a b"));
}

TEST_CASE("element helpers") {
    xml::Element e("root");
    e.add_leaf("k", "v").add_leaf("k", "w");
    e.set_attribute("a", "1");
    e.set_attribute("a", "2");
    CHECK(e.attributes.size() == 1);
    CHECK(e.children_named("k").size() == 2);
    REQUIRE(e.child("k") != nullptr);
    CHECK(e.child("k")->text() == "v");
    CHECK(e.erase_attribute("a"));
    CHECK_FALSE(e.erase_attribute("a"));
    CHECK(e.child("missing") == nullptr);
}

} // TEST_SUITE

TEST_SUITE("bytes") {

TEST_CASE("base64 matches the RFC 4648 test vectors") {
    const std::pair<const char*, const char*> vectors[] = {{"", ""},         {"f", "Zg=="},         {"fo", "Zm8="},
                                                           {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
                                                           {"foobar", "Zm9vYmFy"}};
    for (const auto& [plain, encoded] : vectors) {
        CHECK(base64_encode(as_bytes(plain)) == encoded);
        CHECK(to_text(base64_decode(encoded)) == plain);
    }
}

TEST_CASE("base64 decoding is strict") {
    CHECK(code_of([] { base64_decode("Zm9"); }) == Errc::malformed_envelope);
    CHECK(code_of([] { base64_decode("Zm9v\n"); }) == Errc::malformed_envelope);
    CHECK(code_of([] { base64_decode("Zm*v"); }) == Errc::malformed_envelope);
}

TEST_CASE("HMAC-SHA256 matches RFC 4231 test case 2") {
    const auto mac = hmac_sha256(as_bytes("Jefe"), as_bytes("what do ya want for nothing?"));
    CHECK(hex_encode(mac) == "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
}

TEST_CASE("name-based UUIDs use the URL namespace") {
    // Independent values from Python's uuid.uuid5(uuid.NAMESPACE_URL, name).
    CHECK(Uuid::from_name("N1").to_string() == "5faa3420-7d73-5b89-98f8-3043a4f63cf6");
    CHECK(Uuid::from_name("N2").to_string() == "e353d793-365f-5952-bd0a-440a025e39fd");
}

TEST_CASE("UUID parse and format") {
    const auto id = Uuid::parse("5FAA3420-7D73-5B89-98F8-3043A4F63CF6");
    CHECK(id.to_string() == "5faa3420-7d73-5b89-98f8-3043a4f63cf6");
    CHECK(code_of([] { Uuid::parse("5faa3420-7d73-5b89-98f8"); }) == Errc::unknown_key_id);
    CHECK(code_of([] { Uuid::parse("5faa3420x7d73-5b89-98f8-3043a4f63cf6"); }) == Errc::unknown_key_id);
    std::array<std::uint8_t, 16> raw{};
    raw.fill(0xff);
    const auto v4 = Uuid::from_random(raw).to_string();
    CHECK(v4[14] == '4');
    CHECK(v4[19] == 'b');
}

TEST_CASE("constant-time comparison") {
    CHECK(equal_ct(as_bytes("abc"), as_bytes("abc")));
    CHECK_FALSE(equal_ct(as_bytes("abc"), as_bytes("abd")));
    CHECK_FALSE(equal_ct(as_bytes("abc"), as_bytes("ab")));
}

TEST_CASE("error names round-trip") {
    for (auto c : {Errc::pad_too_short, Errc::insufficient_key_material, Errc::bootstrap_auth_failure,
                   Errc::fiber_busy, Errc::reference_error}) {
        CHECK(errc_from_string(to_string(c)) == c);
    }
    CHECK(to_string(Errc::insufficient_key_material) == "insufficient-key-material");
    CHECK_FALSE(errc_from_string("no-such-error").has_value());
}

} // TEST_SUITE

TEST_SUITE("text") {

TEST_CASE("numbers format in shortest round-trip form") {
    CHECK(format_number(0.0) == "0");
    CHECK(format_number(1000.0) == "1000");
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(316.22776601683796) == "316.22776601683796");
    CHECK(parse_number(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("parsing") {
    CHECK(parse_number("4.5") == 4.5);
    CHECK_FALSE(parse_number("4.5x").has_value());
    CHECK_FALSE(parse_number("").has_value());
    CHECK(parse_integer("-12") == -12);
    CHECK_FALSE(parse_integer("1.5").has_value());
    CHECK(trim("  a b \t") == "a b");
    CHECK(trim("   ").empty());
}

} // TEST_SUITE
