#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sdqn/error.hpp"
#include "sdqn/scenario.hpp"

#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

using namespace sdqn;
using scenario::ActionKind;

namespace {

const std::filesystem::path kDemo = std::filesystem::path(SDQN_SOURCE_DIR) / "scenarios" / "demo.scenario";

const char* kSmall = R"(
[scenario]
seed = 11
duration = 40m
telemetry_interval = 60
warmup = 300
controller = N1

[nodes]
N1 N2 N3

[fibers]
L1 = N1 N2 3
L5 = N1 N2 6
L2 = N2 N3 3

[links]
N1-N2 = N1:1 N2:1 L1 1000
N2-N3 = N2:2 N3:1 L2 1000

[sessions]
N1 = level=NONE ciphers=OTP secret=local
N2 = link=N1-N2 level=DATA_ONLY ciphers=OTP secret=s2

[schedule]
600 fail_fiber L1
1500 restore_fiber L1
)";

Errc code_of(const std::string& text) {
    try {
        scenario::parse_scenario(text, "t.scenario");
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::invariant_violation;
}

std::string message_of(const std::string& text) {
    try {
        scenario::parse_scenario(text, "t.scenario");
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
    const auto at = text.find(from);
    REQUIRE(at != std::string::npos);
    return text.replace(at, from.size(), to);
}

std::vector<std::string> state_kinds(const scenario::RunResult& r) {
    std::vector<std::string> out;
    for (const auto& e : r.events) {
        if (controller::is_state_change(e.kind)) out.push_back(e.kind);
    }
    return out;
}

int free_local_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return 0;
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof(addr);
    int port = 0;
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0 &&
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0) {
        port = ntohs(addr.sin_port);
    }
    ::close(fd);
    return port;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

} // namespace

TEST_SUITE("parsing") {

TEST_CASE("the demo scenario") {
    const auto s = scenario::load_scenario(kDemo);
    CHECK(s.seed == 20240501);
    CHECK(s.duration == 86400);
    CHECK(s.time_scale == 720);
    CHECK(s.sbr_jitter == 0.02);
    CHECK(s.nodes.size() == 4);
    CHECK(s.fibers.size() == 5);
    CHECK(s.links.size() == 4);
    CHECK(s.sessions.size() == 3);
    REQUIRE(s.schedule.size() == 2);
    CHECK(s.schedule[0].at == 28800);
    CHECK(s.schedule[0].kind == ActionKind::fail_fiber);
    CHECK(s.schedule[1].args == std::vector<std::string>{"L1"});
    const auto& n2 = s.sessions[1];
    CHECK(n2.link == "N1-N2");
    CHECK(n2.policy.level == codec::Level::data_only);
    CHECK(n2.policy.selected_tags.contains("attached_fiber"));
    CHECK(scenario::phase_boundaries(s) == std::vector<double>{28800, 57600});
}

TEST_CASE("syntax errors carry source and line") {
    CHECK(message_of("[scenario]\nseed = x\n").find("t.scenario:2:") != std::string::npos);
    CHECK(code_of("[bogus]\n") == Errc::parse_error);
    CHECK(code_of("seed = 1\n") == Errc::parse_error);
    CHECK(code_of(replace(kSmall, "seed = 11", "speed = 11")) == Errc::parse_error);
    CHECK(code_of(replace(kSmall, "L1 = N1 N2 3", "L1 = N1 N2")) == Errc::parse_error);
    CHECK(code_of(replace(kSmall, "N1:1 N2:1", "N1 N2:1")) == Errc::parse_error);
    CHECK(code_of(replace(kSmall, "secret=s2", "")) == Errc::parse_error);
    CHECK(code_of(replace(kSmall, "level=DATA_ONLY", "level=MOST")) == Errc::parse_error);
    CHECK(code_of(replace(kSmall, "600 fail_fiber L1", "600 cut L1")) == Errc::parse_error);
    CHECK(message_of(replace(kSmall, "1500 restore_fiber", "500 restore_fiber")).find("not sorted") !=
          std::string::npos);
}

TEST_CASE("reference errors") {
    CHECK(code_of(replace(kSmall, "controller = N1", "controller = N9")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "L2 = N2 N3 3", "L2 = N2 N4 3")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "N2:2 N3:1 L2", "N2:2 N3:1 L9")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "N2:2 N3:1 L2", "N2:1 N3:1 L2")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "N2:2 N3:1 L2", "N2:2 N3:1 L5")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "link=N1-N2", "link=N2-N3")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "N1 = level=NONE", "N1 = level=FULL")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "1500 restore_fiber L1", "1500 restore_fiber L8")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "1500 restore", "9000 restore")) == Errc::reference_error);
    CHECK(code_of(replace(kSmall, "warmup = 300", "warmup = 300\nsbr_jitter = 1.5")) == Errc::reference_error);
}

TEST_CASE("other schedule actions parse") {
    auto text = replace(kSmall, "1500 restore_fiber L1",
                        "1500 restore_fiber L1\n1600 manual_switch N1 1 L5\n1700 set_policy N2 level=FULL ciphers=OTP");
    const auto s = scenario::parse_scenario(text);
    REQUIRE(s.schedule.size() == 4);
    CHECK(s.schedule[2].kind == ActionKind::manual_switch);
    CHECK(s.schedule[2].args == std::vector<std::string>{"N1", "1", "L5"});
    CHECK(s.schedule[3].policy->level == codec::Level::full);
    CHECK(scenario::phase_boundaries(s) == std::vector<double>{600, 1500});
}

TEST_CASE("policy override touches only sessions over QKD links") {
    const auto s = scenario::parse_scenario(kSmall);
    codec::EncryptionPolicy full;
    full.level = codec::Level::full;
    full.ciphers = codec::Cipher::otp_then_aes256;
    const auto o = scenario::with_policy(s, full);
    CHECK(o.sessions[0].policy.level == codec::Level::none);
    CHECK(o.sessions[1].policy == full);
}

} // TEST_SUITE

TEST_SUITE("phases") {

TEST_CASE("phase statistics split on the boundaries") {
    std::vector<link::MonitoringSample> series;
    for (int t = 0; t < 30; ++t) {
        const double sbr = t < 10 ? 100.0 : t < 20 ? (t < 13 ? 0.0 : 40.0) : 100.0;
        series.push_back({"X", "F", static_cast<double>(t), sbr, sbr > 0 ? 0.02 : 0.0, link::LinkStatus::running});
    }
    const auto p = scenario::phase_stats(series, {10, 20}, 30);
    REQUIRE(p.size() == 3);
    CHECK(p[0].samples == 10);
    CHECK(p[0].mean_sbr == 100.0);
    CHECK(p[1].samples == 10);
    CHECK(p[1].up_samples == 7);
    CHECK(p[1].mean_sbr == doctest::Approx(28.0));
    CHECK(p[1].mean_sbr_up == doctest::Approx(40.0));
    CHECK(p[1].mean_qber_up == doctest::Approx(0.02));
    CHECK(p[2].begin == 20);
    CHECK(p[2].end == 30);
}

} // TEST_SUITE

TEST_SUITE("runs") {

TEST_CASE("a short unpaced run fails over and back") {
    const auto s = scenario::parse_scenario(kSmall);
    const auto dir = std::filesystem::temp_directory_path() / "sdqn-scenario-test";
    std::filesystem::remove_all(dir);
    scenario::RunOptions opts;
    opts.out_dir = dir;
    const auto r = scenario::run(s, opts);
    CHECK(r.exit_code == 0);
    CHECK(r.violations.empty());
    CHECK(state_kinds(r) ==
          std::vector<std::string>{"link-outage", "failover-complete", "fiber-restored", "revert-complete"});
    CHECK(r.final_assignment == r.initial_assignment);
    CHECK(r.monitoring.size() == 2 * 40);
    CHECK(r.bits_used > 0);
    CHECK(r.messages == r.usage.size());

    std::uint64_t used = 0;
    for (const auto& u : r.usage) used += u.usage.bits_used;
    CHECK(used == r.bits_used);
    std::uint64_t pads = 0;
    for (const auto& e : r.pad_entries) pads += e.range.bits();
    CHECK(pads == r.bits_used);

    const auto read = [&](const char* name) {
        std::ifstream in(dir / name);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    CHECK(first_line(read("monitoring.csv")) == "link_id,t_seconds,sbr_bps,qber,fiber_id");
    CHECK(first_line(read("key_usage.csv")).starts_with("t_seconds,session,sender,kind,seq,message_id,policy"));
    CHECK(read("monitoring.csv") == r.monitoring_csv());
    CHECK(read("events.jsonl") == r.events_jsonl());
    CHECK(read("summary.txt").find("all hold") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("runs are deterministic and seeds matter") {
    const auto s = scenario::parse_scenario(replace(kSmall, "warmup = 300", "warmup = 300\nsbr_jitter = 0.05"));
    const auto a = scenario::run(s);
    const auto b = scenario::run(s);
    CHECK(a.monitoring_csv() == b.monitoring_csv());
    CHECK(a.key_usage_csv() == b.key_usage_csv());
    CHECK(a.events_jsonl() == b.events_jsonl());
    scenario::RunOptions other;
    other.seed = 12;
    CHECK(scenario::run(s, other).monitoring_csv() != a.monitoring_csv());
}

TEST_CASE("scheduled manual switch and policy change") {
    const auto text = replace(kSmall, "1500 restore_fiber L1",
                              "1500 restore_fiber L1\n1800 set_policy N2 level=FULL ciphers=OTP_THEN_AES256\n"
                              "2000 manual_switch N2 1 L2");
    const auto r = scenario::run(scenario::parse_scenario(text));
    std::vector<nlohmann::json> actions;
    for (const auto& e : r.events) {
        if (e.kind == "action") actions.push_back(e.details);
    }
    REQUIRE(actions.size() == 4);
    CHECK(actions[2]["ok"] == true);
    CHECK(actions[3]["ok"] == true); // the command went through; the agent refused it
    bool refused = false;
    for (const auto& e : r.events) {
        if (e.kind == "manual-switch") refused = e.details["error"] == "fiber-busy";
    }
    CHECK(refused);
    bool full_after = false;
    for (const auto& u : r.usage) {
        if (u.t > 1800 && u.usage.policy.find("FULL") != std::string::npos) full_after = true;
        if (u.t < 1800) CHECK(u.usage.policy.find("FULL") == std::string::npos);
    }
    CHECK(full_after);
    CHECK(r.exit_code == 0);
}

TEST_CASE("policy comparison totals") {
    const auto s = scenario::parse_scenario(kSmall);
    std::vector<codec::EncryptionPolicy> policies(3);
    policies[0].level = codec::Level::none;
    policies[1].level = codec::Level::full;
    policies[2].level = codec::Level::data_only;
    const auto totals = scenario::compare_policies(s, policies);
    REQUIRE(totals.size() == 3);
    CHECK(totals[0].bits_used == 0);
    CHECK(totals[2].bits_used < totals[1].bits_used);
    CHECK(totals[0].messages == totals[1].messages);
    const auto table = scenario::policy_table(totals);
    CHECK(first_line(table) == "policy,messages,bits_used,bits_fetched,starved_notifications,exit_code");
}

TEST_CASE("live switch commands over the control port") {
    const int port = free_local_port();
    REQUIRE(port > 0);
    auto s = scenario::parse_scenario(
        replace(replace(kSmall, "duration = 40m", "duration = 10m"), "600 fail_fiber L1\n1500 restore_fiber L1\n", ""));
    scenario::RunOptions opts;
    opts.time_scale = 150.0; // four wall seconds
    opts.control_port = port;
    scenario::RunResult r;
    std::thread runner([&] { r = scenario::run(s, opts); });

    const auto post = [port](const std::string& body) {
        httplib::Client client("127.0.0.1", port);
        client.set_read_timeout(std::chrono::seconds(10));
        return client.Post("/switch", body, "application/json");
    };
    httplib::Result status;
    for (int i = 0; i < 100 && !status; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        httplib::Client client("127.0.0.1", port);
        status = client.Get("/status");
    }
    CHECK(static_cast<bool>(status));
    httplib::Result bad;
    httplib::Result good;
    httplib::Result junk;
    if (status) {
        bad = post(R"({"node":"N1","port":"1","fiber":"L2"})");
        good = post(R"({"node":"N1","port":"1","fiber":"L5"})");
        junk = post("{");
    }
    runner.join();
    REQUIRE(bad);
    REQUIRE(good);
    REQUIRE(junk);
    CHECK(bad->status == 409);
    CHECK(nlohmann::json::parse(bad->body)["error"] == "unknown-fiber");
    CHECK(good->status == 200);
    CHECK(junk->status == 400);
    std::size_t manual = 0;
    for (const auto& e : r.events) manual += e.kind == "manual-switch";
    CHECK(manual == 2);
}

} // TEST_SUITE
