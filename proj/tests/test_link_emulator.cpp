#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sdqn/error.hpp"
#include "sdqn/link_emulator.hpp"

#include <cmath>
#include <set>

using namespace sdqn;
using link::LinkEmulator;
using link::LinkStatus;

namespace {

Bytes seed() { return Bytes{'s', 'e', 'e', 'd'}; }

// Two nodes, a primary fiber and a spare.
struct TwoNodes {
    LinkEmulator emu;

    explicit TwoNodes(link::ModelParams params = {}) : emu(seed(), params) {
        emu.add_fiber({"F1", {"A", "B"}, 4.5, true});
        emu.add_fiber({"F2", {"A", "B"}, 9.5, true});
        emu.add_switch("A");
        emu.add_switch("B");
        emu.add_pair("AB", {"A", "1"}, {"B", "1"}, "F1", 1000.0);
    }
};

link::StepResult step(LinkEmulator& emu, const std::string& id = "AB") {
    for (auto& [link_id, r] : emu.advance(1.0)) {
        if (link_id == id) return r;
    }
    FAIL("no step result");
    return {};
}

} // namespace

TEST_CASE("secret bit rate follows the attenuation law") {
    CHECK(link::sbr_model(1000.0, 0.0) == doctest::Approx(1000.0));
    CHECK(link::sbr_model(1000.0, 10.0) == doctest::Approx(100.0));
    CHECK(link::sbr_model(1000.0, 4.5) == doctest::Approx(354.8133892));
    CHECK(link::sbr_model(1000.0, 9.5) / link::sbr_model(1000.0, 4.5) == doctest::Approx(std::sqrt(0.1)));
}

TEST_CASE("qber stays within its documented bounds") {
    link::ModelParams p;
    link::NoiseStream noise(42);
    for (double loss : {0.0, 4.5, 9.5, 30.0, 80.0}) {
        const double centre = std::min(p.qber_base + p.qber_slope_per_db * loss, p.qber_cap);
        CHECK(link::qber_model(loss, nullptr, p) == doctest::Approx(centre));
        for (int i = 0; i < 200; ++i) {
            const double q = link::qber_model(loss, &noise, p);
            CHECK(q >= 0.0);
            CHECK(q <= p.qber_cap);
            CHECK(std::abs(q - centre) <= p.qber_jitter + 1e-12);
        }
    }
}

TEST_CASE("noise is uniform on [-1, 1) and reproducible") {
    link::NoiseStream a(5);
    link::NoiseStream b(5);
    double sum = 0;
    for (int i = 0; i < 20000; ++i) {
        const double x = a.symmetric_unit();
        CHECK(x == b.symmetric_unit());
        REQUIRE(x >= -1.0);
        REQUIRE(x < 1.0);
        sum += x;
    }
    CHECK(std::abs(sum / 20000) < 0.03);
}

TEST_CASE("both ends derive the same key blocks") {
    const auto a = link::derive_key_block(seed(), "AB", 17);
    const auto b = link::derive_key_block(seed(), "AB", 17);
    CHECK(a == b);
    CHECK(a.material.size() == kBlockBytes);
    CHECK(a != link::derive_key_block(seed(), "AB", 18));
    CHECK(a != link::derive_key_block(seed(), "BA", 17));
    CHECK(a != link::derive_key_block(Bytes{'x'}, "AB", 17));
}

TEST_CASE("a running link produces keys at its secret bit rate") {
    TwoNodes emu_net;
    auto& emu = emu_net.emu;
    CHECK(emu.status("AB") == LinkStatus::running);
    std::size_t blocks = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto r = step(emu);
        CHECK(r.sample.sbr_bps == doctest::Approx(link::sbr_model(1000.0, 4.5)));
        CHECK(r.sample.fiber_id == "F1");
        blocks += r.blocks.size();
    }
    const double expected = link::sbr_model(1000.0, 4.5) * 1000.0 / 256.0;
    CHECK(static_cast<double>(blocks) == doctest::Approx(expected).epsilon(0.01));
    CHECK(emu.blocks_emitted("AB") == blocks);
    std::set<KeyId> ids;
    for (std::uint64_t i = 0; i < blocks; ++i) ids.insert(link::derive_key_block(seed(), "AB", i).id);
    CHECK(ids.size() == blocks);
}

TEST_CASE("fiber failure stops the link; restore re-syncs for the delay") {
    link::ModelParams p;
    p.resync_delay_s = 30.0;
    TwoNodes emu_net(p);
    auto& emu = emu_net.emu;
    step(emu);
    emu.fail_fiber("F1");
    CHECK(emu.status("AB") == LinkStatus::down);
    for (int i = 0; i < 5; ++i) {
        const auto r = step(emu);
        CHECK(r.sample.sbr_bps == 0.0);
        CHECK(r.blocks.empty());
    }
    emu.restore_fiber("F1");
    int switching = 0;
    std::size_t blocks = 0;
    for (int i = 0; i < 40; ++i) {
        const auto r = step(emu);
        if (r.sample.status == LinkStatus::switching) {
            ++switching;
            CHECK(r.sample.sbr_bps == 0.0);
        }
        if (i < 30) blocks += r.blocks.size();
    }
    CHECK(switching == 30);
    CHECK(blocks == 0);
    CHECK(emu.status("AB") == LinkStatus::running);
}

TEST_CASE("moving both ends to the spare fiber") {
    TwoNodes emu_net;
    auto& emu = emu_net.emu;
    emu.set_cross_connect("A", "1", "F2");
    CHECK(emu.status("AB") == LinkStatus::down); // ends disagree
    CHECK_FALSE(emu.pair("AB").fiber.has_value());
    emu.set_cross_connect("B", "1", "F2");
    CHECK(emu.status("AB") == LinkStatus::switching);
    CHECK(emu.pair("AB").fiber == "F2");
    for (int i = 0; i < 30; ++i) step(emu);
    const auto r = step(emu);
    CHECK(r.sample.status == LinkStatus::running);
    CHECK(r.sample.sbr_bps == doctest::Approx(link::sbr_model(1000.0, 9.5)));
    CHECK(r.sample.fiber_id == "F2");
}

TEST_CASE("cross-connect errors") {
    TwoNodes emu_net;
    auto& emu = emu_net.emu;
    emu.add_switch("C");
    emu.add_fiber({"F3", {"B", "C"}, 1.0, true});
    auto code = [&](auto f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::malformed_request;
    };
    CHECK(code([&] { emu.set_cross_connect("Z", "1", "F1"); }) == Errc::unknown_switch);
    CHECK(code([&] { emu.set_cross_connect("A", "9", "F1"); }) == Errc::unknown_port);
    CHECK(code([&] { emu.set_cross_connect("A", "1", "F9"); }) == Errc::unknown_fiber);
    CHECK(code([&] { emu.set_cross_connect("A", "1", "F3"); }) == Errc::unknown_fiber);
    emu.add_pair("AB2", {"A", "2"}, {"B", "2"}, std::nullopt, 1000.0);
    CHECK(code([&] { emu.set_cross_connect("A", "2", "F1"); }) == Errc::fiber_busy);
    CHECK(code([&] { emu.add_pair("AB3", {"A", "1"}, {"B", "3"}, std::nullopt, 1.0); }) == Errc::fiber_busy);
    CHECK(code([&] { emu.status("nope"); }) == Errc::unknown_link);
    CHECK(emu.status("AB2") == LinkStatus::down);
}

TEST_CASE("stopping and starting a pair") {
    TwoNodes emu_net;
    auto& emu = emu_net.emu;
    emu.stop_pair("AB");
    CHECK(emu.status("AB") == LinkStatus::down);
    CHECK(step(emu).blocks.empty());
    emu.start_pair("AB");
    CHECK(emu.status("AB") == LinkStatus::switching);
}

TEST_CASE("a negative start time runs the clock up to zero") {
    LinkEmulator emu(seed(), {}, -10.0);
    emu.add_fiber({"F1", {"A", "B"}, 0.0, true});
    emu.add_switch("A");
    emu.add_switch("B");
    emu.add_pair("AB", {"A", "1"}, {"B", "1"}, "F1", 256.0);
    CHECK(emu.status("AB") == LinkStatus::running);
    std::size_t blocks = 0;
    for (int i = 0; i < 10; ++i) blocks += step(emu).blocks.size();
    CHECK(blocks == 10);
    CHECK(emu.now() == 0.0);
    CHECK(step(emu).sample.t == 0.0);
}

TEST_CASE("measurement jitter is bounded and does not change key output") {
    link::ModelParams noisy;
    noisy.sbr_jitter = 0.02;
    TwoNodes a_net;
    auto& a = a_net.emu;
    TwoNodes b_net(noisy);
    auto& b = b_net.emu;
    const double rate = link::sbr_model(1000.0, 4.5);
    for (int i = 0; i < 500; ++i) {
        const auto ra = step(a);
        const auto rb = step(b);
        CHECK(std::abs(rb.sample.sbr_bps - rate) <= 0.02 * rate);
        CHECK(ra.blocks == rb.blocks);
    }
}

TEST_CASE("status names") {
    CHECK(link::to_string(LinkStatus::switching) == "SWITCHING");
    CHECK(link::parse_status("RUNNING") == LinkStatus::running);
    CHECK_FALSE(link::parse_status("UP").has_value());
}
