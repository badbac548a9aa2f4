#include "sdqn/scenario.hpp"

#include "sdqn/agent.hpp"
#include "sdqn/control_channel.hpp"
#include "sdqn/error.hpp"
#include "sdqn/key_client.hpp"
#include "sdqn/key_delivery_api.hpp"
#include "sdqn/key_manager.hpp"
#include "sdqn/text.hpp"
#include "sdqn/transport.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <future>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace sdqn::scenario {

namespace {

Bytes to_bytes(const std::string& text) { return Bytes(text.begin(), text.end()); }

std::string controller_sae(const std::string& node) { return "controller@" + node; }
std::string agent_sae(const std::string& node) { return "agent@" + node; }

Bytes seed_bytes(std::uint64_t seed) {
    Bytes out(8);
    for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(seed >> (56 - 8 * i));
    return out;
}

std::uint64_t derive_u64(ByteView seed, const std::string& label) {
    const auto mac = hmac_sha256(seed, as_bytes(label));
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out = (out << 8) | mac[static_cast<std::size_t>(i)];
    return out;
}

std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\n") == std::string::npos) return text;
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

struct LiveCommand {
    std::string node;
    std::string port;
    std::string fiber;
    std::promise<nlohmann::json> reply;
};

class Runtime {
public:
    Runtime(const Scenario& s, const RunOptions& options)
        : s_(s),
          options_(options),
          seed_(seed_bytes(options.seed.value_or(s.seed))),
          emulator_(seed_, params(s), -s.warmup),
          controller_(s.controller, failover_policy(s)) {}

    RunResult run();

private:
    struct Node {
        std::unique_ptr<kms::KeyManager> kme;
        std::unique_ptr<kms::KeyDeliveryApi> api;
        codec::PadLedger ledger;
        std::unique_ptr<agent::Agent> agent;
    };

    struct Session {
        SessionSpec spec;
        std::unique_ptr<channel::MemoryEndpoint> ctrl_end;
        std::unique_ptr<channel::MemoryEndpoint> agent_end;
        std::unique_ptr<kms::ApiKeyClient> agent_keys;
        std::unique_ptr<channel::InitiatorSession> initiator;
        std::unique_ptr<channel::ResponderSession> responder;
        int generation = 0;
        std::vector<std::unique_ptr<channel::InitiatorSession>> retired;
    };

    static link::ModelParams params(const Scenario& s) {
        link::ModelParams p;
        p.sbr_jitter = s.sbr_jitter;
        p.resync_delay_s = s.resync_delay;
        return p;
    }

    static controller::FailoverPolicy failover_policy(const Scenario& s) {
        controller::FailoverPolicy p;
        p.outage_threshold = s.outage_threshold;
        p.revert_on_restore = s.revert_on_restore;
        p.resync_delay_s = s.resync_delay;
        return p;
    }

    Bytes credential(const std::string& sae) const {
        const auto mac = hmac_sha256(seed_, as_bytes("credential|" + sae));
        return Bytes(mac.begin(), mac.end());
    }

    void build();
    void open_session(Session& session, const codec::EncryptionPolicy& policy,
                      const std::optional<codec::EncryptionPolicy>& notification_policy);
    void step_emulator(bool deliver_samples);
    void apply(const Action& action);
    void drain_live_commands();
    void publish_telemetry();
    void record(const channel::MessageUsage& u);
    void check_invariants(std::vector<std::string>& out) const;
    std::map<std::string, std::optional<std::string>> assignment() const;
    void start_control_server();
    void stop_control_server();

    const Scenario& s_;
    const RunOptions& options_;
    Bytes seed_;
    link::LinkEmulator emulator_;
    controller::Controller controller_;
    std::map<std::string, std::unique_ptr<Node>> nodes_;
    std::map<std::string, std::unique_ptr<Session>> sessions_;
    std::unique_ptr<kms::ApiKeyClient> controller_keys_;
    double t_ = 0.0;
    std::vector<UsageRow> usage_;
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> cumulative_;

    std::mutex live_mutex_;
    std::deque<LiveCommand> live_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
    std::atomic<double> live_t_{0.0};
};

void Runtime::build() {
    for (const auto& f : s_.fibers) emulator_.add_fiber({f.id, {f.a, f.b}, f.loss_db, true});
    for (const auto& n : s_.nodes) emulator_.add_switch(n);
    for (const auto& l : s_.links) emulator_.add_pair(l.id, l.a, l.b, l.fiber, l.base_rate_bps);

    for (const auto& n : s_.nodes) {
        auto node = std::make_unique<Node>();
        node->kme = std::make_unique<kms::KeyManager>(n);
        node->api = std::make_unique<kms::KeyDeliveryApi>(*node->kme);
        std::vector<agent::Application> apps{{agent_sae(n), "agent"}};
        if (n == s_.controller) apps.insert(apps.begin(), {controller_sae(n), "controller"});
        node->agent = std::make_unique<agent::Agent>(n, emulator_, apps);
        node->kme->register_sae({agent_sae(n), credential(agent_sae(n)), {kms::Role::agent}});
        if (n == s_.controller) {
            node->kme->register_sae({controller_sae(n), credential(controller_sae(n)), {kms::Role::controller}});
        }
        nodes_.emplace(n, std::move(node));
    }
    for (const auto& l : s_.links) {
        auto& a = *nodes_.at(l.a.switch_id)->kme;
        auto& b = *nodes_.at(l.b.switch_id)->kme;
        a.register_link(l.id);
        b.register_link(l.id);
        kms::KeyManager::peer(a, b, l.id);
    }

    const auto ctrl = controller_sae(s_.controller);
    controller_keys_ =
        std::make_unique<kms::ApiKeyClient>(*nodes_.at(s_.controller)->api, ctrl, credential(ctrl));
    for (const auto& f : s_.fibers) controller_.add_fiber({f.id, {f.a, f.b}, f.loss_db, true, false});

    for (const auto& spec : s_.sessions) {
        auto session = std::make_unique<Session>();
        session->spec = spec;
        const auto agent = agent_sae(spec.node);
        if (spec.link) {
            for (const auto& node : {s_.controller, spec.node}) {
                auto& kme = *nodes_.at(node)->kme;
                kme.add_pool(*spec.link, ctrl, agent);
                kme.add_pool(*spec.link, agent, ctrl);
            }
        }
        session->agent_keys =
            std::make_unique<kms::ApiKeyClient>(*nodes_.at(spec.node)->api, agent, credential(agent));
        auto [c, a] = channel::MemoryEndpoint::make_pair();
        session->ctrl_end = std::move(c);
        session->agent_end = std::move(a);

        channel::SessionConfig cfg;
        cfg.session_id = spec.node;
        cfg.local_sae = agent;
        cfg.peer_sae = ctrl;
        cfg.policy = spec.policy;
        cfg.notification_policy = spec.notification_policy;
        cfg.bootstrap_secret = to_bytes(spec.secret);
        auto* agent_model = nodes_.at(spec.node)->agent.get();
        session->responder = std::make_unique<channel::ResponderSession>(
            cfg, *session->agent_end, *session->agent_keys, nodes_.at(spec.node)->ledger,
            codec::seeded_nonces(derive_u64(seed_, "nonce|" + agent)),
            [agent_model](const xml::Element& request) { return agent_model->handle(request); });
        session->responder->set_usage_sink([this](const channel::MessageUsage& u) { record(u); });
        auto* responder = session->responder.get();
        session->agent_end->set_on_data([responder] { responder->process(); });

        open_session(*session, spec.policy, spec.notification_policy);
        sessions_.emplace(spec.node, std::move(session));
    }
}

void Runtime::open_session(Session& session, const codec::EncryptionPolicy& policy,
                           const std::optional<codec::EncryptionPolicy>& notification_policy) {
    const auto ctrl = controller_sae(s_.controller);
    ++session.generation;
    channel::SessionConfig cfg;
    cfg.session_id = session.spec.node + "#" + std::to_string(session.generation);
    cfg.local_sae = ctrl;
    cfg.peer_sae = agent_sae(session.spec.node);
    cfg.policy = policy;
    cfg.notification_policy = notification_policy;
    cfg.bootstrap_secret = to_bytes(session.spec.secret);
    auto initiator = std::make_unique<channel::InitiatorSession>(
        cfg, *session.ctrl_end, *controller_keys_, nodes_.at(s_.controller)->ledger,
        codec::seeded_nonces(derive_u64(seed_, "nonce|" + cfg.session_id)));
    initiator->set_usage_sink([this](const channel::MessageUsage& u) { record(u); });
    initiator->open();
    if (session.initiator) session.retired.push_back(std::move(session.initiator));
    session.initiator = std::move(initiator);
    controller_.attach(session.spec.node, *session.initiator);
}

void Runtime::record(const channel::MessageUsage& u) {
    auto& [used, fetched] = cumulative_[u.sender_sae];
    used += u.bits_used;
    fetched += u.bits_fetched;
    usage_.push_back({t_, u, used, fetched});
}

void Runtime::step_emulator(bool deliver_samples) {
    for (auto& [link_id, result] : emulator_.advance(1.0)) {
        const auto p = emulator_.pair(link_id);
        if (!result.blocks.empty()) {
            nodes_.at(p.endpoints.first)->kme->push_keys(link_id, result.blocks);
            nodes_.at(p.endpoints.second)->kme->push_keys(link_id, result.blocks);
        }
        if (deliver_samples) {
            nodes_.at(p.endpoints.first)->agent->observe(result.sample);
            nodes_.at(p.endpoints.second)->agent->observe(result.sample);
        }
    }
}

void Runtime::apply(const Action& a) {
    nlohmann::json details{{"action", std::string(to_string(a.kind))}, {"args", a.args}};
    try {
        switch (a.kind) {
        case ActionKind::fail_fiber: emulator_.fail_fiber(a.args.at(0)); break;
        case ActionKind::restore_fiber: emulator_.restore_fiber(a.args.at(0)); break;
        case ActionKind::manual_switch:
            controller_.manual_switch(a.args.at(0), a.args.at(1), a.args.at(2), t_);
            break;
        case ActionKind::set_policy: {
            auto& session = *sessions_.at(a.args.at(0));
            details["policy"] = a.policy->to_string();
            open_session(session, *a.policy, std::nullopt);
            break;
        }
        }
        details["ok"] = true;
    } catch (const Error& e) {
        details["ok"] = false;
        details["error"] = e.what();
    }
    controller_.log(t_, "action", std::move(details));
}

void Runtime::drain_live_commands() {
    std::deque<LiveCommand> pending;
    {
        std::lock_guard lock(live_mutex_);
        pending.swap(live_);
    }
    for (auto& cmd : pending) {
        nlohmann::json reply{{"t", t_}, {"node", cmd.node}, {"port", cmd.port}, {"fiber", cmd.fiber}};
        try {
            const auto r = controller_.manual_switch(cmd.node, cmd.port, cmd.fiber, t_);
            const auto tag = channel::rpc_error_tag(r);
            reply["ok"] = !tag;
            if (tag) reply["error"] = *tag;
        } catch (const Error& e) {
            reply["ok"] = false;
            reply["error"] = e.what();
        }
        cmd.reply.set_value(reply);
    }
}

void Runtime::publish_telemetry() {
    for (auto& [node, session] : sessions_) {
        session->responder->notify(nodes_.at(node)->agent->telemetry(t_).to_xml());
    }
    controller_.poll(t_);
}

std::map<std::string, std::optional<std::string>> Runtime::assignment() const {
    std::map<std::string, std::optional<std::string>> out;
    for (const auto& l : s_.links) out[l.id] = emulator_.pair(l.id).fiber;
    return out;
}

void Runtime::check_invariants(std::vector<std::string>& out) const {
    codec::PadLedger combined;
    for (const auto& [id, node] : nodes_) {
        if (node->ledger.has_overlaps()) out.push_back("pad reuse in the ledger of " + id);
        for (const auto& e : node->ledger.entries()) {
            try {
                combined.commit(id + "/" + e.message_id, std::span(&e.range, 1));
            } catch (const Error& err) {
                out.push_back(std::string("pad reuse across nodes: ") + err.what());
            }
        }
        for (const auto& [master, slave] : node->kme->pools()) {
            const auto a = node->kme->audit(master, slave);
            if (a.pushed != a.available + a.delivered_enc) {
                out.push_back("key conservation broken in pool " + master + "->" + slave + " at " + id);
            }
        }
        for (const auto& v : node->agent->coherence_violations()) out.push_back(v);
    }
    std::unordered_set<KeyId> seen;
    for (const auto& row : usage_) {
        for (const auto& k : row.usage.key_ids) {
            if (!seen.insert(k).second) out.push_back("key " + k.to_string() + " used by two messages");
        }
    }
    for (const auto& v : controller_.view().invariant_violations()) out.push_back(v);
    for (const auto& [id, link] : controller_.view().links) {
        if (!emulator_.has_pair(id)) continue;
        const auto actual = emulator_.pair(id).fiber;
        if (link.current_fiber != actual) {
            out.push_back("controller believes " + id + " is on " + link.current_fiber.value_or("-") +
                          ", devices are on " + actual.value_or("-"));
        }
    }
}

void Runtime::start_control_server() {
    if (!options_.control_port) return;
    server_ = std::make_unique<httplib::Server>();
    server_->Post("/switch", [this](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            return;
        }
        LiveCommand cmd{body.value("node", ""), body.value("port", ""), body.value("fiber", ""), {}};
        auto reply = cmd.reply.get_future();
        {
            std::lock_guard lock(live_mutex_);
            live_.push_back(std::move(cmd));
        }
        if (reply.wait_for(std::chrono::seconds(30)) != std::future_status::ready) {
            res.status = 504;
            res.set_content(nlohmann::json{{"error", "run did not pick up the command"}}.dump(), "application/json");
            return;
        }
        const auto out = reply.get();
        res.status = out.value("ok", false) ? 200 : 409;
        res.set_content(out.dump(), "application/json");
    });
    server_->Get("/status", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(nlohmann::json{{"t", live_t_.load()}, {"duration", s_.duration}}.dump(), "application/json");
    });
    if (!server_->bind_to_port("127.0.0.1", *options_.control_port)) {
        throw Error(Errc::session_closed, "cannot listen on port " + std::to_string(*options_.control_port));
    }
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
}

void Runtime::stop_control_server() {
    if (!server_) return;
    server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    std::lock_guard lock(live_mutex_);
    for (auto& cmd : live_) cmd.reply.set_value({{"ok", false}, {"error", "run finished"}});
    live_.clear();
}

RunResult Runtime::run() {
    RunResult result;
    const auto wall_start = std::chrono::steady_clock::now();

    build();
    for (double w = -s_.warmup; w < 0.0; w += 1.0) step_emulator(false);
    result.initial_assignment = assignment();
    start_control_server();

    const double time_scale = options_.time_scale.value_or(s_.time_scale);
    const auto ticks = static_cast<long long>(std::ceil(s_.duration));
    const auto interval = static_cast<long long>(std::llround(s_.telemetry_interval));
    std::size_t next_action = 0;
    bool bootstrapped = false;
    try {
        for (long long tick = 0; tick < ticks; ++tick) {
            t_ = static_cast<double>(tick);
            live_t_ = t_;
            if (!bootstrapped) bootstrapped = controller_.bootstrap(t_);
            while (next_action < s_.schedule.size() && s_.schedule[next_action].at <= t_) {
                apply(s_.schedule[next_action++]);
            }
            drain_live_commands();
            step_emulator(true);
            if (interval <= 1 || tick % interval == 0) publish_telemetry();
            controller_.on_tick(t_);
            if (tick % 3600 == 0) check_invariants(result.violations);
            if (options_.on_tick) options_.on_tick(t_);
            if (time_scale > 0) {
                std::this_thread::sleep_until(wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                               std::chrono::duration<double>((t_ + 1) / time_scale)));
            }
        }
    } catch (const Error& e) {
        result.violations.push_back(std::string("run aborted at t=") + format_number(t_) + ": " + e.what());
    }
    stop_control_server();
    check_invariants(result.violations);
    std::sort(result.violations.begin(), result.violations.end());
    result.violations.erase(std::unique(result.violations.begin(), result.violations.end()), result.violations.end());

    result.final_assignment = assignment();
    result.monitoring = controller_.export_monitoring(0.0, s_.duration);
    result.events = controller_.view().events;
    result.usage = usage_;
    for (const auto& [id, node] : nodes_) {
        for (auto& e : node->ledger.entries()) {
            e.message_id = id + "/" + e.message_id;
            result.pad_entries.push_back(std::move(e));
        }
    }
    for (const auto& row : usage_) {
        result.bits_used += row.usage.bits_used;
        result.bits_fetched += row.usage.bits_fetched;
    }
    result.messages = usage_.size();
    for (const auto& [node, session] : sessions_) result.starved_notifications += session->responder->starved_notifications();

    const auto bounds = phase_boundaries(s_);
    std::map<std::string, std::vector<link::MonitoringSample>> by_link;
    for (const auto& m : result.monitoring) by_link[m.link_id].push_back(m);
    for (const auto& [id, series] : by_link) result.phases[id] = phase_stats(series, bounds, s_.duration);

    result.exit_code = result.violations.empty() ? 0 : 2;
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return result;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::parse_error, "cannot write " + path.string());
    out << content;
}

} // namespace

std::vector<double> phase_boundaries(const Scenario& scenario) {
    std::set<double> b;
    for (const auto& a : scenario.schedule) {
        if (a.kind == ActionKind::fail_fiber || a.kind == ActionKind::restore_fiber) b.insert(a.at);
    }
    b.erase(0.0);
    return {b.begin(), b.end()};
}

std::vector<PhaseStats> phase_stats(const std::vector<link::MonitoringSample>& series,
                                    const std::vector<double>& boundaries, double duration) {
    std::vector<double> edges{0.0};
    edges.insert(edges.end(), boundaries.begin(), boundaries.end());
    edges.push_back(duration);
    std::vector<PhaseStats> out;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        PhaseStats p;
        p.begin = edges[i];
        p.end = edges[i + 1];
        double sum = 0.0;
        double sum_up = 0.0;
        double qber_up = 0.0;
        for (const auto& s : series) {
            if (s.t < p.begin || s.t >= p.end) continue;
            ++p.samples;
            sum += s.sbr_bps;
            if (s.sbr_bps > 0.0) {
                ++p.up_samples;
                sum_up += s.sbr_bps;
                qber_up += s.qber;
            }
        }
        if (p.samples > 0) p.mean_sbr = sum / static_cast<double>(p.samples);
        if (p.up_samples > 0) {
            p.mean_sbr_up = sum_up / static_cast<double>(p.up_samples);
            p.mean_qber_up = qber_up / static_cast<double>(p.up_samples);
        }
        out.push_back(p);
    }
    return out;
}

std::string RunResult::monitoring_csv() const {
    std::string out = "link_id,t_seconds,sbr_bps,qber,fiber_id\n";
    for (const auto& m : monitoring) {
        out += csv_field(m.link_id) + "," + format_number(m.t) + "," + format_number(m.sbr_bps) + "," +
               format_number(m.qber) + "," + csv_field(m.fiber_id) + "\n";
    }
    return out;
}

std::string RunResult::events_jsonl() const {
    std::string out;
    for (const auto& e : events) out += e.to_json_line() + "\n";
    return out;
}

std::string RunResult::key_usage_csv() const {
    std::string out =
        "t_seconds,session,sender,kind,seq,message_id,policy,bits_used,bits_fetched,cumulative_used,cumulative_fetched\n";
    for (const auto& r : usage) {
        const auto& u = r.usage;
        out += format_number(r.t) + "," + csv_field(u.session_id) + "," + csv_field(u.sender_sae) + "," +
               std::string(channel::to_string(u.kind)) + "," + std::to_string(u.seq) + "," + csv_field(u.message_id) +
               "," + csv_field(u.policy) + "," + std::to_string(u.bits_used) + "," + std::to_string(u.bits_fetched) +
               "," + std::to_string(r.cumulative_used) + "," + std::to_string(r.cumulative_fetched) + "\n";
    }
    return out;
}

std::string RunResult::summary_text() const {
    std::ostringstream out;
    out << "Phase-wise mean SBR per link (bps)\n";
    for (const auto& [link, phases] : this->phases) {
        out << "link " << link << "\n";
        for (std::size_t i = 0; i < phases.size(); ++i) {
            const auto& p = phases[i];
            out << "  phase " << i + 1 << " [" << format_number(p.begin) << ", " << format_number(p.end)
                << "): samples=" << p.samples << " up=" << p.up_samples << " mean_sbr=" << format_number(p.mean_sbr)
                << " mean_sbr_up=" << format_number(p.mean_sbr_up) << " mean_qber_up=" << format_number(p.mean_qber_up)
                << "\n";
        }
        if (phases.size() >= 2 && phases[0].mean_sbr > 0) {
            out << "  ratio phase2/phase1=" << format_number(phases[1].mean_sbr / phases[0].mean_sbr) << "\n";
        }
    }
    out << "\nFiber assignment\n";
    for (const auto& [link, fiber] : initial_assignment) {
        const auto end = final_assignment.count(link) ? final_assignment.at(link) : std::nullopt;
        out << "  " << link << ": initial=" << fiber.value_or("-") << " final=" << end.value_or("-")
            << (fiber == end ? "" : " (changed)") << "\n";
    }
    out << "\nEvents\n";
    std::map<std::string, std::size_t> kinds;
    for (const auto& e : events) ++kinds[e.kind];
    for (const auto& [kind, n] : kinds) out << "  " << kind << ": " << n << "\n";
    for (const auto& e : events) {
        if (controller::is_state_change(e.kind)) out << "  t=" << format_number(e.t) << " " << e.kind << "\n";
    }
    out << "\nControl-plane key material\n";
    std::map<std::string, std::tuple<std::size_t, std::uint64_t, std::uint64_t>> per_sender;
    for (const auto& r : usage) {
        auto& [n, used, fetched] = per_sender[r.usage.sender_sae];
        ++n;
        used += r.usage.bits_used;
        fetched += r.usage.bits_fetched;
    }
    for (const auto& [sender, totals] : per_sender) {
        const auto& [n, used, fetched] = totals;
        out << "  " << sender << ": messages=" << n << " bits_used=" << used << " bits_fetched=" << fetched << "\n";
    }
    out << "  total: messages=" << messages << " bits_used=" << bits_used << " bits_fetched=" << bits_fetched
        << " starved_notifications=" << starved_notifications << "\n";
    out << "\nInvariants\n";
    if (violations.empty()) out << "  all hold\n";
    for (const auto& v : violations) out << "  VIOLATION " << v << "\n";
    return out.str();
}

RunResult run(const Scenario& scenario, const RunOptions& options) {
    validate(scenario);
    Runtime runtime(scenario, options);
    auto result = runtime.run();
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        write_file(*options.out_dir / "monitoring.csv", result.monitoring_csv());
        write_file(*options.out_dir / "events.jsonl", result.events_jsonl());
        write_file(*options.out_dir / "key_usage.csv", result.key_usage_csv());
        write_file(*options.out_dir / "summary.txt", result.summary_text());
    }
    return result;
}

std::vector<PolicyTotals> compare_policies(const Scenario& scenario,
                                           const std::vector<codec::EncryptionPolicy>& policies) {
    std::vector<PolicyTotals> out;
    for (const auto& p : policies) {
        auto variant = with_policy(scenario, p);
        RunOptions options;
        options.time_scale = 0.0;
        const auto r = run(variant, options);
        out.push_back({p.to_string(), r.bits_used, r.bits_fetched, r.messages, r.starved_notifications, r.exit_code});
    }
    return out;
}

std::string policy_table(const std::vector<PolicyTotals>& totals) {
    std::ostringstream out;
    out << "policy,messages,bits_used,bits_fetched,starved_notifications,exit_code\n";
    for (const auto& t : totals) {
        out << csv_field(t.policy) << "," << t.messages << "," << t.bits_used << "," << t.bits_fetched << ","
            << t.starved_notifications << "," << t.exit_code << "\n";
    }
    return out.str();
}

} // namespace sdqn::scenario
