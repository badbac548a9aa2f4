#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mini_net.hpp"

#include "sdqn/controller.hpp"
#include "sdqn/error.hpp"

#include <algorithm>
#include <random>

using namespace sdqn;
using controller::Controller;
using controller::LinkInfo;
using controller::LinkState;
using controller::NetworkView;

namespace {

const char* kTriangle = R"(
[scenario]
seed = 3
duration = 3600
telemetry_interval = 60
resync_delay = 30
warmup = 600
controller = N1

[nodes]
N1 N2 N3

[fibers]
L1 = N1 N2 4.5
L5 = N1 N2 9.5
L2 = N2 N3 4.5

[links]
N1-N2 = N1:1 N2:1 L1 1000
N2-N3 = N2:2 N3:1 L2 1000

[sessions]
N1 = level=NONE ciphers=OTP secret=local
N2 = link=N1-N2 level=DATA_ONLY ciphers=OTP secret=two

[schedule]
600 fail_fiber L1
1800 restore_fiber L1
)";

std::vector<controller::Event> state_events(const Controller& c) {
    std::vector<controller::Event> out;
    for (const auto& e : c.view().events) {
        if (controller::is_state_change(e.kind)) out.push_back(e);
    }
    return out;
}

std::vector<std::string> kinds(const std::vector<controller::Event>& events) {
    std::vector<std::string> out;
    for (const auto& e : events) out.push_back(e.kind);
    return out;
}

LinkInfo ab_link(std::optional<std::string> current) {
    LinkInfo l;
    l.link_id = "A-B";
    l.endpoints = {"A", "B"};
    l.ports = {"1", "1"};
    l.home_fiber = current;
    l.current_fiber = std::move(current);
    return l;
}

} // namespace

TEST_SUITE("planning") {

TEST_CASE("backup selection prefers least loss, then smallest id") {
    NetworkView v;
    v.fibers["F1"] = {"F1", {"A", "B"}, 2.0, true, true};
    v.fibers["F2"] = {"F2", {"B", "A"}, 7.0, true, false};
    v.fibers["F3"] = {"F3", {"A", "B"}, 5.0, true, false};
    v.fibers["F4"] = {"F4", {"A", "B"}, 5.0, true, false};
    v.fibers["F5"] = {"F5", {"A", "B"}, 1.0, false, false}; // down
    v.fibers["F6"] = {"F6", {"A", "B"}, 0.5, true, true};   // busy
    v.fibers["F7"] = {"F7", {"A", "C"}, 0.1, true, false};  // wrong ends
    CHECK(controller::select_backup(ab_link("F1"), v) == "F3");
    v.fibers["F3"].operational = false;
    CHECK(controller::select_backup(ab_link("F1"), v) == "F4");
    v.fibers["F4"].in_use = true;
    CHECK(controller::select_backup(ab_link("F1"), v) == "F2");
    v.fibers["F2"].in_use = true;
    CHECK_FALSE(controller::select_backup(ab_link("F1"), v).has_value());
}

TEST_CASE("backup selection agrees with exhaustive search on random views") {
    std::mt19937_64 rng(17);
    for (int round = 0; round < 200; ++round) {
        NetworkView v;
        const int n = std::uniform_int_distribution<int>(0, 8)(rng);
        for (int i = 0; i < n; ++i) {
            controller::FiberInfo f;
            f.id = "F" + std::to_string(i);
            const bool ours = std::bernoulli_distribution(0.7)(rng);
            f.endpoints = ours ? std::pair<std::string, std::string>{"A", "B"} : std::pair<std::string, std::string>{"A", "C"};
            f.loss_db = std::uniform_int_distribution<int>(0, 4)(rng) * 2.5;
            f.operational = std::bernoulli_distribution(0.8)(rng);
            f.in_use = std::bernoulli_distribution(0.3)(rng);
            v.fibers[f.id] = f;
        }
        const auto link = ab_link(n > 0 ? std::optional<std::string>("F0") : std::nullopt);
        std::vector<controller::FiberInfo> ok;
        for (const auto& [id, f] : v.fibers) {
            if (f.endpoints.second == "B" && f.operational && !f.in_use && f.id != link.current_fiber) ok.push_back(f);
        }
        std::optional<std::string> expected;
        if (!ok.empty()) {
            const auto best = std::min_element(ok.begin(), ok.end(), [](const auto& a, const auto& b) {
                return a.loss_db != b.loss_db ? a.loss_db < b.loss_db : a.id < b.id;
            });
            expected = best->id;
        }
        CHECK(controller::select_backup(link, v) == expected);
    }
}

TEST_CASE("failover plan: switch both ends, then re-arm") {
    NetworkView v;
    v.fibers["F1"] = {"F1", {"A", "B"}, 2.0, true, true};
    v.fibers["F2"] = {"F2", {"A", "B"}, 3.0, true, false};
    v.links["A-B"] = ab_link("F1");
    const auto plan = controller::plan_failover("A-B", v, 10.0);
    REQUIRE(plan.steps.size() == 3);
    CHECK(plan.purpose == "failover");
    CHECK(plan.from_fiber == "F1");
    CHECK(plan.to_fiber == "F2");
    CHECK(plan.steps[0].node == "A");
    CHECK(plan.steps[1].node == "B");
    CHECK(plan.steps[0].previous_fiber == "F1");
    CHECK(plan.steps[2].kind == controller::PlanStep::Kind::rearm);
    CHECK(v.events.empty());
}

TEST_CASE("no candidate means an empty plan and a no-backup event") {
    NetworkView v;
    v.fibers["F1"] = {"F1", {"A", "B"}, 2.0, false, true};
    v.links["A-B"] = ab_link("F1");
    const auto plan = controller::plan_failover("A-B", v, 10.0);
    CHECK(plan.empty());
    REQUIRE(v.events.size() == 1);
    CHECK(v.events[0].kind == "no-backup");
    CHECK(v.events[0].t == 10.0);
}

TEST_CASE("revert only when the home fiber is free and working") {
    NetworkView v;
    v.fibers["F1"] = {"F1", {"A", "B"}, 2.0, true, false};
    v.fibers["F2"] = {"F2", {"A", "B"}, 3.0, true, true};
    auto l = ab_link("F2");
    l.home_fiber = "F1";
    v.links["A-B"] = l;
    const auto plan = controller::plan_revert("A-B", v);
    REQUIRE_FALSE(plan.empty());
    CHECK(plan.to_fiber == "F1");
    v.fibers["F1"].operational = false;
    CHECK(controller::plan_revert("A-B", v).empty());
    v.fibers["F1"].operational = true;
    v.fibers["F1"].in_use = true;
    CHECK(controller::plan_revert("A-B", v).empty());
    v.links["A-B"].current_fiber = "F1";
    v.fibers["F1"].in_use = false;
    CHECK(controller::plan_revert("A-B", v).empty());
}

TEST_CASE("reconcile derives the common fiber and detects half-attached fibers") {
    NetworkView v;
    v.fibers["F1"] = {"F1", {"A", "B"}, 2.0, true, false};
    v.links["A-B"] = ab_link(std::nullopt);
    for (const auto* n : {"A", "B"}) {
        agent::NodeModel m;
        m.node_id = n;
        m.qkd_interfaces.push_back({"1", n, "F1"});
        m.qkd_links.push_back({"A-B", "1", n == std::string("A") ? "B" : "A", "1", "F1", link::LinkStatus::running, 2});
        v.nodes[n] = m;
    }
    v.reconcile();
    CHECK(v.links["A-B"].current_fiber == "F1");
    CHECK(v.fibers["F1"].in_use);
    CHECK(v.invariant_violations().empty());
    v.nodes["B"].qkd_interfaces[0].connected_fiber = std::nullopt;
    v.nodes["B"].qkd_links[0].attached_fiber = std::nullopt;
    v.reconcile();
    CHECK_FALSE(v.links["A-B"].current_fiber.has_value());
    CHECK(v.invariant_violations().size() == 1);
}

TEST_CASE("failover policy validation") {
    controller::FailoverPolicy p;
    p.outage_threshold = 0;
    CHECK_THROWS_AS(p.validate(), Error);
    CHECK_THROWS_AS(Controller("N1", p), Error);
}

TEST_CASE("event lines are single-line JSON with sorted keys") {
    const controller::Event e{28920, "link-outage", {{"link_id", "N1-N2"}, {"fiber_id", "L1"}}};
    CHECK(e.to_json_line() == R"({"fiber_id":"L1","kind":"link-outage","link_id":"N1-N2","t":28920.0})");
}

} // TEST_SUITE

TEST_SUITE("telemetry ingest") {

TEST_CASE("samples of unknown links are dropped and logged once") {
    Controller c("N1");
    CHECK_FALSE(c.ingest_sample({"X-Y", "F", 0, 1.0, 0.02, link::LinkStatus::running}));
    CHECK_FALSE(c.ingest_sample({"X-Y", "F", 60, 1.0, 0.02, link::LinkStatus::running}));
    CHECK(c.dropped_samples() == 2);
    CHECK(kinds(c.view().events) == std::vector<std::string>{"dropped-sample"});
}

TEST_CASE("outage needs consecutive zero samples, counted per link") {
    harness::MiniNet net(kTriangle);
    net.controller.bootstrap(0);
    auto& c = net.controller;
    const auto zero = [](const std::string& id, double t) {
        return link::MonitoringSample{id, "", t, 0.0, 0.0, link::LinkStatus::down};
    };
    const auto up = [](const std::string& id, double t) {
        return link::MonitoringSample{id, "L", t, 300.0, 0.03, link::LinkStatus::running};
    };
    CHECK(c.ingest_sample(zero("N1-N2", 0)));
    CHECK(c.ingest_sample(zero("N1-N2", 60)));
    CHECK_FALSE(c.ingest_sample(zero("N1-N2", 60))); // duplicate
    CHECK(c.ingest_sample(zero("N2-N3", 60)));
    CHECK(c.ingest_sample(up("N1-N2", 120)));
    CHECK(c.ingest_sample(zero("N1-N2", 180)));
    CHECK(c.ingest_sample(zero("N2-N3", 120)));
    CHECK(state_events(c).empty());
    CHECK(c.ingest_sample(zero("N2-N3", 180)));
    const auto ev = state_events(c);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].kind == "link-outage");
    CHECK(ev[0].details["link_id"] == "N2-N3");
    CHECK(ev[0].t == 180);
    CHECK(c.view().links.at("N2-N3").state == LinkState::outage);
    CHECK(c.view().links.at("N1-N2").state == LinkState::normal);
}

TEST_CASE("exports select by time range and group by carrying fiber") {
    harness::MiniNet net(kTriangle);
    net.controller.bootstrap(0);
    auto& c = net.controller;
    for (double t : {0.0, 60.0, 120.0}) {
        c.ingest_sample({"N1-N2", t < 100 ? "L1" : "L5", t, 1.0, 0.0, link::LinkStatus::running});
        c.ingest_sample({"N2-N3", "L2", t, 1.0, 0.0, link::LinkStatus::running});
    }
    CHECK(c.export_monitoring(0, 120).size() == 4);
    CHECK(c.export_monitoring(500, 600).empty());
    const auto by_fiber = c.export_by_fiber(0, 1000);
    CHECK(by_fiber.at("L1").size() == 2);
    CHECK(by_fiber.at("L5").size() == 1);
    CHECK(by_fiber.at("L2").size() == 3);
    c.log(5, "note", {});
    CHECK(c.export_events(0, 10).size() == 3); // two get-config rpcs + note
    CHECK(c.export_events(1, 10).size() == 1);
    CHECK(c.export_events(6, 10).empty());
}

} // TEST_SUITE

TEST_SUITE("failover") {

TEST_CASE("bootstrap learns links and home fibers from the agents") {
    harness::MiniNet net(kTriangle);
    CHECK(net.controller.bootstrap(0));
    const auto& v = net.controller.view();
    CHECK(v.nodes.size() == 2);
    REQUIRE(v.links.size() == 2);
    CHECK(v.links.at("N1-N2").home_fiber == "L1");
    CHECK(v.links.at("N2-N3").home_fiber == "L2");
    CHECK(v.links.at("N1-N2").endpoints == std::pair<std::string, std::string>{"N1", "N2"});
    CHECK(v.fibers.at("L1").in_use);
    CHECK_FALSE(v.fibers.at("L5").in_use);
}

TEST_CASE("fail, fail over, restore, revert") {
    harness::MiniNet net(kTriangle);
    net.run(0, 2400);
    const auto ev = state_events(net.controller);
    REQUIRE(kinds(ev) ==
            std::vector<std::string>{"link-outage", "failover-complete", "fiber-restored", "revert-complete"});
    CHECK(ev[0].t == 720); // third zero report: 600, 660, 720
    CHECK(ev[0].details["link_id"] == "N1-N2");
    CHECK(ev[1].t == 750); // 30 s re-sync after the switch
    CHECK(ev[1].details["new_fiber"] == "L5");
    CHECK(ev[1].details["key_bits"].get<std::uint64_t>() > 0);
    CHECK(ev[2].t == 1800);
    CHECK(ev[3].t == 1830);
    CHECK(ev[3].details["new_fiber"] == "L1");
    CHECK(net.emulator.pair("N1-N2").fiber == "L1");
    CHECK(net.controller.view().links.at("N1-N2").current_fiber == "L1");
    CHECK(net.controller.view().invariant_violations().empty());
    for (const auto& [id, node] : net.nodes) CHECK(node->agent->coherence_violations().empty());
    // samples while on the spare carry the spare's id and lower rate
    const auto by_fiber = net.controller.export_by_fiber(750, 1800);
    REQUIRE(by_fiber.contains("L5"));
    for (const auto& s : by_fiber.at("L5")) {
        if (s.sbr_bps > 0) CHECK(s.sbr_bps == doctest::Approx(link::sbr_model(1000, 9.5)));
    }
}

TEST_CASE("no revert when disabled") {
    std::string text = kTriangle;
    text.replace(text.find("warmup = 600"), 12, "warmup = 600\nrevert_on_restore = false");
    harness::MiniNet net(text);
    net.run(0, 2400);
    CHECK(kinds(state_events(net.controller)) ==
          std::vector<std::string>{"link-outage", "failover-complete", "fiber-restored"});
    CHECK(net.emulator.pair("N1-N2").fiber == "L5");
}

TEST_CASE("no backup available") {
    harness::MiniNet net(kTriangle);
    net.emulator.fail_fiber("L5");
    net.run(0, 1000);
    const auto ev = state_events(net.controller);
    REQUIRE(kinds(ev) == std::vector<std::string>{"link-outage", "no-backup"});
    CHECK(net.controller.view().links.at("N1-N2").state == LinkState::failed);
    CHECK(net.emulator.pair("N1-N2").fiber == "L1");
}

TEST_CASE("a failed second switch is rolled back") {
    harness::MiniNet net(kTriangle);
    net.run(0, 700);
    net.sessions.at("N2")->ctrl_end->set_drop(true);
    net.run(700, 760);
    const auto ev = state_events(net.controller);
    REQUIRE(kinds(ev) == std::vector<std::string>{"link-outage", "failover-failed", "degraded"});
    CHECK(ev[1].details["step"] == 2);
    CHECK(ev[1].details["node"] == "N2");
    CHECK(ev[1].details["error"] == "timeout");
    CHECK(ev[1].details["rolled_back"] == true);
    CHECK(net.emulator.cross_connects("N1").at("1") == "L1");
    CHECK(net.emulator.cross_connects("N2").at("1") == "L1");
    CHECK(net.controller.view().links.at("N1-N2").state == LinkState::failed);
    CHECK(net.controller.view().links.at("N1-N2").current_fiber == "L1");
    CHECK(net.nodes.at("N1")->agent->coherence_violations().empty());
}

TEST_CASE("manual switch through the logged path") {
    harness::MiniNet net(kTriangle);
    net.controller.bootstrap(0);
    const auto reply = net.controller.manual_switch("N1", "1", "L5", 5);
    CHECK_FALSE(channel::rpc_error_tag(reply).has_value());
    CHECK(net.emulator.cross_connects("N1").at("1") == "L5");
    CHECK(net.controller.view().nodes.at("N1").interface("1")->connected_fiber == "L5");
    const auto bad = net.controller.manual_switch("N2", "1", "L2", 6);
    CHECK(channel::rpc_error_tag(bad) == "fiber-busy");
    std::size_t manual = 0;
    for (const auto& e : net.controller.view().events) manual += e.kind == "manual-switch";
    CHECK(manual == 2);
    CHECK_THROWS_AS(net.controller.manual_switch("N3", "1", "L2", 7), Error);
}

TEST_CASE("every rpc is logged with its key cost") {
    harness::MiniNet net(kTriangle);
    net.run(0, 800);
    std::set<std::string> ids;
    for (const auto& e : net.controller.view().events) {
        if (e.kind != "rpc") continue;
        CHECK(e.details.contains("request_bits"));
        CHECK(e.details.contains("reply_bits"));
        ids.insert(e.details["message_id"].get<std::string>());
        const auto bits = e.details["request_bits"].get<std::uint64_t>() + e.details["reply_bits"].get<std::uint64_t>();
        if (e.details["node"] == "N2") CHECK(bits > 0);
        if (e.details["node"] == "N1") CHECK(e.details["request_bits"].get<std::uint64_t>() == 0);
    }
    CHECK(ids.size() >= 5); // 2 get-config, 2 switch-port, 1 get-link-status
}

} // TEST_SUITE
