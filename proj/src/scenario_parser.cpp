#include "sdqn/scenario.hpp"

#include "sdqn/error.hpp"
#include "sdqn/text.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace sdqn::scenario {

namespace {

class Parser {
public:
    Parser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

    Scenario parse() {
        std::istringstream in{std::string(text_)};
        std::string raw;
        std::string section;
        while (std::getline(in, raw)) {
            ++line_;
            std::string_view l = raw;
            if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
            l = trim(l);
            if (l.empty()) continue;
            if (l.front() == '[') {
                if (l.back() != ']') fail("unterminated section header");
                section = std::string(trim(l.substr(1, l.size() - 2)));
                static const std::set<std::string> known{"scenario", "nodes", "fibers", "links", "sessions", "schedule"};
                if (!known.contains(section)) fail("unknown section [" + section + "]");
                continue;
            }
            if (section.empty()) fail("content before the first section");
            if (section == "scenario") scenario_line(l);
            else if (section == "nodes") node_line(l);
            else if (section == "fibers") fiber_line(l);
            else if (section == "links") link_line(l);
            else if (section == "sessions") session_line(l);
            else schedule_line(l);
        }
        return std::move(s_);
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw Error(Errc::parse_error, source_ + ":" + std::to_string(line_) + ": " + msg);
    }

    static std::vector<std::string> words(std::string_view text) {
        std::vector<std::string> out;
        std::istringstream in{std::string(text)};
        std::string w;
        while (in >> w) out.push_back(w);
        return out;
    }

    std::pair<std::string, std::string> key_value(std::string_view l) const {
        const auto eq = l.find('=');
        if (eq == std::string_view::npos) fail("expected 'key = value'");
        auto key = std::string(trim(l.substr(0, eq)));
        auto value = std::string(trim(l.substr(eq + 1)));
        if (key.empty()) fail("missing key before '='");
        return {std::move(key), std::move(value)};
    }

    double number(const std::string& text) const {
        const auto v = parse_number(text);
        if (!v) fail("'" + text + "' is not a number");
        return *v;
    }

    /// Seconds, with an optional h/m/s suffix.
    double duration(std::string text) const {
        double unit = 1.0;
        if (!text.empty() && (text.back() == 'h' || text.back() == 'm' || text.back() == 's')) {
            unit = text.back() == 'h' ? 3600.0 : text.back() == 'm' ? 60.0 : 1.0;
            text.pop_back();
        }
        return number(text) * unit;
    }

    bool boolean(const std::string& text) const {
        if (text == "true" || text == "yes" || text == "1") return true;
        if (text == "false" || text == "no" || text == "0") return false;
        fail("'" + text + "' is not a boolean");
    }

    std::map<std::string, std::string> options(const std::vector<std::string>& items, std::size_t from) const {
        std::map<std::string, std::string> out;
        for (auto i = from; i < items.size(); ++i) {
            const auto eq = items[i].find('=');
            if (eq == std::string::npos || eq == 0) fail("expected key=value, got '" + items[i] + "'");
            if (!out.emplace(items[i].substr(0, eq), items[i].substr(eq + 1)).second) {
                fail("option '" + items[i].substr(0, eq) + "' given twice");
            }
        }
        return out;
    }

    std::optional<codec::EncryptionPolicy> policy(const std::map<std::string, std::string>& opts,
                                                  const std::string& prefix) const {
        const auto level = opts.find(prefix + "level");
        const auto ciphers = opts.find(prefix + "ciphers");
        const auto tags = opts.find(prefix + "tags");
        if (level == opts.end() && ciphers == opts.end() && tags == opts.end()) return std::nullopt;
        codec::EncryptionPolicy p;
        try {
            if (level != opts.end()) p.level = codec::parse_level(level->second);
            if (ciphers != opts.end()) p.ciphers = codec::parse_cipher(ciphers->second);
            if (tags != opts.end()) {
                std::istringstream in(tags->second);
                std::string t;
                while (std::getline(in, t, ',')) {
                    if (!t.empty()) p.selected_tags.insert(t);
                }
            }
            p.validate();
        } catch (const Error& e) {
            fail(e.what());
        }
        return p;
    }

    void scenario_line(std::string_view l) {
        const auto [key, value] = key_value(l);
        if (key == "seed") {
            const auto v = parse_integer(value);
            if (!v || *v < 0) fail("seed must be a non-negative integer");
            s_.seed = static_cast<std::uint64_t>(*v);
        } else if (key == "time_scale") {
            s_.time_scale = number(value);
        } else if (key == "duration") {
            s_.duration = duration(value);
        } else if (key == "telemetry_interval") {
            s_.telemetry_interval = duration(value);
        } else if (key == "resync_delay") {
            s_.resync_delay = duration(value);
        } else if (key == "warmup") {
            s_.warmup = duration(value);
        } else if (key == "sbr_jitter") {
            s_.sbr_jitter = number(value);
        } else if (key == "outage_threshold") {
            const auto v = parse_integer(value);
            if (!v) fail("outage_threshold must be an integer");
            s_.outage_threshold = static_cast<int>(*v);
        } else if (key == "revert_on_restore") {
            s_.revert_on_restore = boolean(value);
        } else if (key == "controller") {
            s_.controller = value;
        } else {
            fail("unknown scenario key '" + key + "'");
        }
    }

    void node_line(std::string_view l) {
        for (auto& w : words(l)) s_.nodes.push_back(std::move(w));
    }

    void fiber_line(std::string_view l) {
        const auto [id, rest] = key_value(l);
        const auto w = words(rest);
        if (w.size() != 3) fail("fiber needs '<node> <node> <loss_db>'");
        s_.fibers.push_back({id, w[0], w[1], number(w[2])});
    }

    link::PortRef port_ref(const std::string& text) const {
        const auto colon = text.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
            fail("expected '<node>:<port>', got '" + text + "'");
        }
        return {text.substr(0, colon), text.substr(colon + 1)};
    }

    void link_line(std::string_view l) {
        const auto [id, rest] = key_value(l);
        const auto w = words(rest);
        if (w.size() < 3 || w.size() > 4) fail("link needs '<node>:<port> <node>:<port> <fiber|-> [base_rate_bps]'");
        LinkSpec spec;
        spec.id = id;
        spec.a = port_ref(w[0]);
        spec.b = port_ref(w[1]);
        if (w[2] != "-") spec.fiber = w[2];
        if (w.size() == 4) spec.base_rate_bps = number(w[3]);
        s_.links.push_back(std::move(spec));
    }

    void session_line(std::string_view l) {
        const auto [node, rest] = key_value(l);
        const auto opts = options(words(rest), 0);
        static const std::set<std::string> known{"link",       "level",          "ciphers",     "tags",
                                                 "notify_level", "notify_ciphers", "notify_tags", "secret"};
        for (const auto& [k, v] : opts) {
            if (!known.contains(k)) fail("unknown session option '" + k + "'");
        }
        SessionSpec spec;
        spec.node = node;
        if (const auto it = opts.find("link"); it != opts.end()) spec.link = it->second;
        spec.policy = policy(opts, "").value_or(codec::EncryptionPolicy{});
        spec.notification_policy = policy(opts, "notify_");
        const auto secret = opts.find("secret");
        if (secret == opts.end() || secret->second.empty()) fail("session for " + node + " needs secret=...");
        spec.secret = secret->second;
        s_.sessions.push_back(std::move(spec));
    }

    void schedule_line(std::string_view l) {
        const auto w = words(l);
        if (w.size() < 2) fail("expected '<time> <action> <args...>'");
        Action a;
        a.line = line_;
        a.at = duration(w[0]);
        const auto& verb = w[1];
        if (verb == "fail_fiber" || verb == "restore_fiber") {
            if (w.size() != 3) fail(verb + " takes one fiber id");
            a.kind = verb == "fail_fiber" ? ActionKind::fail_fiber : ActionKind::restore_fiber;
            a.args = {w[2]};
        } else if (verb == "manual_switch") {
            if (w.size() != 5) fail("manual_switch takes '<node> <port> <fiber>'");
            a.kind = ActionKind::manual_switch;
            a.args = {w[2], w[3], w[4]};
        } else if (verb == "set_policy") {
            if (w.size() < 4) fail("set_policy takes '<node> level=.. ciphers=..'");
            a.kind = ActionKind::set_policy;
            a.args = {w[2]};
            const auto opts = options(w, 3);
            for (const auto& [k, v] : opts) {
                if (k.rfind("notify_", 0) != 0 && k != "level" && k != "ciphers" && k != "tags") {
                    fail("unknown set_policy option '" + k + "'");
                }
            }
            a.policy = policy(opts, "");
            if (!a.policy) fail("set_policy needs level= and ciphers=");
        } else {
            fail("unknown action '" + verb + "'");
        }
        if (!s_.schedule.empty() && a.at < s_.schedule.back().at) {
            throw Error(Errc::reference_error, source_ + ":" + std::to_string(line_) +
                                                   ": schedule is not sorted by time");
        }
        s_.schedule.push_back(std::move(a));
    }

    std::string_view text_;
    std::string source_;
    int line_ = 0;
    Scenario s_;
};

[[noreturn]] void reference(const std::string& msg) { throw Error(Errc::reference_error, msg); }

} // namespace

std::string_view to_string(ActionKind kind) noexcept {
    switch (kind) {
    case ActionKind::fail_fiber: return "fail_fiber";
    case ActionKind::restore_fiber: return "restore_fiber";
    case ActionKind::manual_switch: return "manual_switch";
    case ActionKind::set_policy: return "set_policy";
    }
    return "?";
}

Scenario parse_scenario(std::string_view text, const std::string& source) {
    auto s = Parser(text, source).parse();
    validate(s);
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::parse_error, path.string() + ": cannot open");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_scenario(text.str(), path.string());
}

void validate(const Scenario& s) {
    if (!(s.duration > 0)) reference("duration must be positive");
    if (!(s.telemetry_interval > 0)) reference("telemetry_interval must be positive");
    if (s.time_scale < 0) reference("time_scale must not be negative");
    if (s.warmup < 0 || s.resync_delay < 0) reference("warmup and resync_delay must not be negative");
    if (s.sbr_jitter < 0 || s.sbr_jitter >= 1) reference("sbr_jitter must lie in [0, 1)");
    if (s.outage_threshold < 1) reference("outage_threshold must be at least 1");

    const std::set<std::string> nodes(s.nodes.begin(), s.nodes.end());
    if (nodes.size() != s.nodes.size()) reference("duplicate node id");
    if (!nodes.contains(s.controller)) reference("controller '" + s.controller + "' is not a node");

    std::map<std::string, const FiberSpec*> fibers;
    for (const auto& f : s.fibers) {
        if (!nodes.contains(f.a) || !nodes.contains(f.b)) reference("fiber " + f.id + " ends at an unknown node");
        if (f.a == f.b) reference("fiber " + f.id + " loops back to " + f.a);
        if (f.loss_db < 0) reference("fiber " + f.id + " has negative loss");
        if (!fibers.emplace(f.id, &f).second) reference("duplicate fiber id " + f.id);
    }

    std::map<std::string, const LinkSpec*> links;
    std::set<std::pair<std::string, std::string>> ports;
    std::set<std::string> carried;
    for (const auto& l : s.links) {
        for (const auto* p : {&l.a, &l.b}) {
            if (!nodes.contains(p->switch_id)) reference("link " + l.id + " uses unknown node " + p->switch_id);
            if (!ports.emplace(p->switch_id, p->port).second) {
                reference("port " + p->switch_id + ":" + p->port + " is used twice");
            }
        }
        if (l.a.switch_id == l.b.switch_id) reference("link " + l.id + " has both ends at " + l.a.switch_id);
        if (!(l.base_rate_bps > 0)) reference("link " + l.id + " needs a positive base rate");
        if (l.fiber) {
            const auto f = fibers.find(*l.fiber);
            if (f == fibers.end()) reference("link " + l.id + " uses unknown fiber " + *l.fiber);
            const std::set<std::string> fe{f->second->a, f->second->b};
            if (fe != std::set<std::string>{l.a.switch_id, l.b.switch_id}) {
                reference("fiber " + *l.fiber + " does not join the ends of link " + l.id);
            }
            if (!carried.insert(*l.fiber).second) reference("fiber " + *l.fiber + " carries two links");
        }
        if (!links.emplace(l.id, &l).second) reference("duplicate link id " + l.id);
    }

    std::set<std::string> session_nodes;
    for (const auto& ss : s.sessions) {
        if (!nodes.contains(ss.node)) reference("session for unknown node " + ss.node);
        if (!session_nodes.insert(ss.node).second) reference("two sessions for node " + ss.node);
        if (ss.node == s.controller) {
            if (ss.link) reference("the controller's local session does not use a QKD link");
            if (ss.policy.level != codec::Level::none) reference("the controller's local session must use level NONE");
            continue;
        }
        if (!ss.link) reference("session for " + ss.node + " needs link=...");
        const auto l = links.find(*ss.link);
        if (l == links.end()) reference("session for " + ss.node + " uses unknown link " + *ss.link);
        const std::set<std::string> ends{l->second->a.switch_id, l->second->b.switch_id};
        if (ends != std::set<std::string>{s.controller, ss.node}) {
            reference("link " + *ss.link + " does not join " + s.controller + " and " + ss.node);
        }
    }

    for (const auto& a : s.schedule) {
        const auto where = "schedule line " + std::to_string(a.line);
        if (a.at < 0 || a.at >= s.duration) reference(where + ": time outside the run");
        switch (a.kind) {
        case ActionKind::fail_fiber:
        case ActionKind::restore_fiber:
            if (!fibers.contains(a.args.at(0))) reference(where + ": unknown fiber " + a.args.at(0));
            break;
        case ActionKind::manual_switch:
            if (!session_nodes.contains(a.args.at(0))) reference(where + ": no session to " + a.args.at(0));
            if (!fibers.contains(a.args.at(2))) reference(where + ": unknown fiber " + a.args.at(2));
            break;
        case ActionKind::set_policy:
            if (!session_nodes.contains(a.args.at(0)) || a.args.at(0) == s.controller) {
                reference(where + ": no remote session to " + a.args.at(0));
            }
            break;
        }
    }
    for (std::size_t i = 1; i < s.schedule.size(); ++i) {
        if (s.schedule[i].at < s.schedule[i - 1].at) reference("schedule is not sorted by time");
    }
}

Scenario with_policy(Scenario scenario, const codec::EncryptionPolicy& policy) {
    policy.validate();
    for (auto& ss : scenario.sessions) {
        if (!ss.link) continue;
        auto p = policy;
        if (p.level == codec::Level::selected_fields && p.selected_tags.empty()) p.selected_tags = ss.policy.selected_tags;
        p.validate();
        ss.policy = p;
        ss.notification_policy.reset();
    }
    return scenario;
}

} // namespace sdqn::scenario
