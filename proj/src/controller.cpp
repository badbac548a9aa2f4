#include "sdqn/controller.hpp"

#include "sdqn/error.hpp"

#include <algorithm>
#include <tuple>

namespace sdqn::controller {

namespace {

std::pair<std::string, std::string> sorted_pair(std::string a, std::string b) {
    if (b < a) std::swap(a, b);
    return {std::move(a), std::move(b)};
}

const xml::Element* data_child(const xml::Element& reply, std::string_view tag) {
    const auto* data = reply.child("data");
    return data ? data->child(tag) : nullptr;
}

Plan switch_plan(const LinkInfo& link, const NetworkView& view, std::string purpose, std::string target) {
    Plan plan;
    plan.link_id = link.link_id;
    plan.purpose = std::move(purpose);
    plan.from_fiber = link.current_fiber;
    plan.to_fiber = target;
    for (const auto& [node, port] : {std::pair{link.endpoints.first, link.ports.first},
                                     std::pair{link.endpoints.second, link.ports.second}}) {
        PlanStep step;
        step.kind = PlanStep::Kind::switch_port;
        step.node = node;
        step.port = port;
        step.fiber_id = target;
        step.previous_fiber = link.current_fiber;
        if (const auto n = view.nodes.find(node); n != view.nodes.end()) {
            if (const auto* iface = n->second.interface(port)) step.previous_fiber = iface->connected_fiber;
        }
        plan.steps.push_back(std::move(step));
    }
    PlanStep rearm;
    rearm.kind = PlanStep::Kind::rearm;
    rearm.node = link.endpoints.first;
    rearm.fiber_id = target;
    plan.steps.push_back(std::move(rearm));
    return plan;
}

} // namespace

std::string Event::to_json_line() const {
    nlohmann::json j = details;
    j["t"] = t;
    j["kind"] = kind;
    return j.dump();
}

bool is_state_change(std::string_view kind) noexcept {
    return kind == "link-outage" || kind == "failover-complete" || kind == "fiber-restored" ||
           kind == "revert-complete" || kind == "failover-failed" || kind == "revert-failed" ||
           kind == "no-backup" || kind == "degraded";
}

void FailoverPolicy::validate() const {
    if (outage_threshold < 1) throw Error(Errc::invalid_policy, "outage_threshold must be at least 1");
    if (resync_delay_s < 0) throw Error(Errc::invalid_policy, "resync delay must not be negative");
    if (max_rearm_attempts < 1) throw Error(Errc::invalid_policy, "max_rearm_attempts must be at least 1");
}

std::string_view to_string(LinkState state) noexcept {
    switch (state) {
    case LinkState::normal: return "normal";
    case LinkState::outage: return "outage";
    case LinkState::rearming: return "rearming";
    case LinkState::failed: return "failed";
    }
    return "?";
}

void NetworkView::reconcile() {
    for (auto& [id, link] : links) {
        std::vector<std::optional<std::string>> seen;
        for (const auto& node : {link.endpoints.first, link.endpoints.second}) {
            const auto n = nodes.find(node);
            if (n == nodes.end()) continue;
            if (const auto* entry = n->second.link(id)) seen.push_back(entry->attached_fiber);
        }
        if (seen.empty()) continue;
        const bool agree = std::all_of(seen.begin(), seen.end(), [&](const auto& f) { return f == seen.front(); });
        link.current_fiber = agree ? seen.front() : std::nullopt;
    }
    for (auto& [id, fiber] : fibers) {
        fiber.in_use = false;
        for (const auto& [node, model] : nodes) {
            for (const auto& i : model.qkd_interfaces) {
                if (i.connected_fiber == id) fiber.in_use = true;
            }
        }
    }
}

std::vector<std::string> NetworkView::invariant_violations() const {
    std::vector<std::string> out;
    for (const auto& [id, fiber] : fibers) {
        if (!fiber.in_use) continue;
        int expected = 0;
        int attached = 0;
        for (const auto& node : {fiber.endpoints.first, fiber.endpoints.second}) {
            const auto n = nodes.find(node);
            if (n == nodes.end()) continue;
            ++expected;
            for (const auto& i : n->second.qkd_interfaces) {
                if (i.connected_fiber == id) ++attached;
            }
        }
        if (attached != expected) {
            out.push_back("fiber " + id + " attached at " + std::to_string(attached) + " of " +
                          std::to_string(expected) + " known endpoint interfaces");
        }
    }
    return out;
}

std::optional<std::string> select_backup(const LinkInfo& link, const NetworkView& view) {
    const FiberInfo* best = nullptr;
    for (const auto& [id, f] : view.fibers) {
        if (sorted_pair(f.endpoints.first, f.endpoints.second) != link.endpoints) continue;
        if (!f.operational || f.in_use || f.id == link.current_fiber) continue;
        if (best == nullptr || std::tie(f.loss_db, f.id) < std::tie(best->loss_db, best->id)) best = &f;
    }
    if (best == nullptr) return std::nullopt;
    return best->id;
}

Plan plan_failover(const std::string& link_id, NetworkView& view, double t) {
    const auto& link = view.links.at(link_id);
    const auto backup = select_backup(link, view);
    if (!backup) {
        view.events.push_back({t, "no-backup", {{"link_id", link_id}, {"fiber_id", link.current_fiber.value_or("")}}});
        Plan empty;
        empty.link_id = link_id;
        empty.purpose = "failover";
        empty.from_fiber = link.current_fiber;
        return empty;
    }
    return switch_plan(link, view, "failover", *backup);
}

Plan plan_revert(const std::string& link_id, const NetworkView& view) {
    const auto& link = view.links.at(link_id);
    Plan empty;
    empty.link_id = link_id;
    empty.purpose = "revert";
    if (!link.home_fiber || link.home_fiber == link.current_fiber) return empty;
    const auto f = view.fibers.find(*link.home_fiber);
    if (f == view.fibers.end() || !f->second.operational || f->second.in_use) return empty;
    return switch_plan(link, view, "revert", *link.home_fiber);
}

Controller::Controller(std::string node_id, FailoverPolicy policy)
    : node_id_(std::move(node_id)), policy_(policy) {
    policy_.validate();
}

void Controller::add_fiber(FiberInfo fiber) {
    auto id = fiber.id;
    view_.fibers[id] = std::move(fiber);
}

void Controller::attach(const std::string& node, channel::InitiatorSession& session) {
    sessions_[node] = &session;
    session.set_notification_handler([this](const xml::Element& body) {
        try {
            ingest_report(agent::TelemetryReport::from_xml(body), now_);
        } catch (const Error& e) {
            log(now_, "bad-notification", {{"error", e.what()}});
        }
    });
}

void Controller::detach(const std::string& node) { sessions_.erase(node); }

std::string Controller::next_message_id() { return std::to_string(next_message_++); }

void Controller::log(double t, std::string kind, nlohmann::json details) {
    view_.events.push_back({t, std::move(kind), std::move(details)});
}

xml::Element Controller::call(const std::string& node, xml::Element rpc, const std::string& op, double t,
                              std::uint64_t* key_bits) {
    const auto* mid = rpc.attribute("message-id");
    nlohmann::json details{{"node", node}, {"op", op}, {"message_id", mid ? *mid : std::string()}};
    const auto it = sessions_.find(node);
    if (it == sessions_.end()) {
        details["ok"] = false;
        details["error"] = std::string(to_string(Errc::session_closed));
        log(t, "rpc", std::move(details));
        throw Error(Errc::session_closed, "no control session to " + node);
    }
    auto& session = *it->second;
    const auto account = [&] {
        const auto& cost = session.last_round();
        details["request_bits"] = cost.request_bits_used;
        details["reply_bits"] = cost.reply_bits_used;
        details["attempts"] = cost.attempts;
        control_bits_ += cost.total_used();
        if (key_bits != nullptr) *key_bits += cost.total_used();
    };
    try {
        auto reply = session.send_rpc(std::move(rpc));
        account();
        const auto tag = channel::rpc_error_tag(reply);
        details["ok"] = !tag.has_value();
        if (tag) details["error"] = *tag;
        log(t, "rpc", std::move(details));
        return reply;
    } catch (const Error& e) {
        account();
        details["ok"] = false;
        details["error"] = std::string(to_string(e.code()));
        log(t, "rpc", std::move(details));
        throw;
    }
}

xml::Element Controller::request(const std::string& node, xml::Element rpc, const std::string& op, double t) {
    now_ = t;
    if (rpc.attribute("message-id") == nullptr) rpc.set_attribute("message-id", next_message_id());
    return call(node, std::move(rpc), op, t, nullptr);
}

bool Controller::bootstrap(double t) {
    now_ = t;
    bool complete = true;
    for (const auto& [node, session] : sessions_) {
        if (view_.nodes.contains(node)) continue;
        try {
            const auto reply = call(node, agent::rpc::get_config(next_message_id()), "get-config", t, nullptr);
            const auto* model = data_child(reply, "qkd_node");
            if (model == nullptr) throw Error(Errc::malformed_request, "get-config reply from " + node + " has no qkd_node");
            view_.nodes[node] = agent::NodeModel::from_xml(*model);
        } catch (const Error&) {
            complete = false;
        }
    }
    for (const auto& [node, model] : view_.nodes) {
        for (const auto& l : model.qkd_links) {
            auto& info = view_.links[l.link_id];
            info.link_id = l.link_id;
            info.endpoints = sorted_pair(node, l.remote_node);
            const bool local_first = info.endpoints.first == node;
            (local_first ? info.ports.first : info.ports.second) = l.local_port;
            (local_first ? info.ports.second : info.ports.first) = l.remote_port;
        }
    }
    view_.reconcile();
    for (auto& [id, link] : view_.links) {
        if (!link.home_fiber) link.home_fiber = link.current_fiber;
    }
    return complete;
}

void Controller::poll(double t) {
    now_ = t;
    for (const auto& [node, session] : sessions_) {
        while (true) {
            try {
                session->poll();
                break;
            } catch (const Error& e) {
                log(t, "bad-notification", {{"node", node}, {"error", e.what()}});
            }
        }
    }
}

void Controller::ingest_report(const agent::TelemetryReport& report, double t) {
    for (const auto& s : report.samples) ingest_sample(s);
    for (const auto& f : report.fibers) ingest_fiber_state(f.fiber_id, f.operational, t);
}

bool Controller::ingest_sample(const link::MonitoringSample& sample) {
    const auto link = view_.links.find(sample.link_id);
    if (link == view_.links.end()) {
        ++dropped_;
        if (unknown_links_.insert(sample.link_id).second) {
            log(sample.t, "dropped-sample", {{"link_id", sample.link_id}, {"reason", "unknown-link"}});
        }
        return false;
    }
    auto& series = view_.samples[sample.link_id];
    if (!series.emplace(sample.t, sample).second) return false;

    auto& info = link->second;
    if (sample.sbr_bps > 0.0) {
        info.zero_run = 0;
        if (info.state == LinkState::failed) info.state = LinkState::normal;
        return true;
    }
    ++info.zero_run;
    if (info.state == LinkState::normal && info.zero_run >= policy_.outage_threshold) {
        info.state = LinkState::outage;
        log(sample.t, "link-outage",
            {{"link_id", info.link_id},
             {"fiber_id", info.current_fiber.value_or("")},
             {"zero_samples", info.zero_run}});
        pending_failover_.insert(info.link_id);
    }
    return true;
}

void Controller::ingest_fiber_state(const std::string& fiber_id, bool operational, double t) {
    const auto it = view_.fibers.find(fiber_id);
    if (it == view_.fibers.end()) return;
    auto& fiber = it->second;
    if (fiber.operational == operational) return;
    fiber.operational = operational;
    if (!operational) return;
    log(t, "fiber-restored", {{"fiber_id", fiber_id}});
    if (!policy_.revert_on_restore) return;
    for (const auto& [id, link] : view_.links) {
        if (link.home_fiber == fiber_id && link.current_fiber != fiber_id) pending_revert_.insert(id);
    }
}

void Controller::apply_switch(const std::string& node, const std::string& port, const std::string& fiber_id) {
    const auto n = view_.nodes.find(node);
    if (n != view_.nodes.end()) {
        auto& model = n->second;
        if (auto* iface = model.interface(port)) {
            iface->connected_fiber = fiber_id;
        } else {
            model.qkd_interfaces.push_back({port, node, fiber_id});
        }
        for (auto& l : model.qkd_links) {
            if (l.local_port == port) l.attached_fiber = fiber_id;
        }
    }
    view_.reconcile();
}

bool Controller::execute_plan(const Plan& plan, double t) {
    now_ = t;
    std::uint64_t bits = 0;
    std::vector<const PlanStep*> done;
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const auto& step = plan.steps[i];
        if (step.kind != PlanStep::Kind::switch_port) continue;
        try {
            const auto reply = call(step.node, agent::rpc::switch_port(next_message_id(), step.node, step.port, step.fiber_id),
                                    "switch-port", t, &bits);
            if (const auto tag = channel::rpc_error_tag(reply)) {
                throw Error(errc_from_string(*tag).value_or(Errc::malformed_request),
                            step.node + "/" + step.port + " refused " + step.fiber_id);
            }
            apply_switch(step.node, step.port, step.fiber_id);
            done.push_back(&step);
        } catch (const Error& e) {
            bool rolled_back = true;
            for (auto d = done.rbegin(); d != done.rend(); ++d) {
                const auto& undo = **d;
                if (!undo.previous_fiber) {
                    rolled_back = false;
                    continue;
                }
                try {
                    const auto reply = call(undo.node,
                                            agent::rpc::switch_port(next_message_id(), undo.node, undo.port, *undo.previous_fiber),
                                            "switch-port", t, &bits);
                    if (channel::rpc_error_tag(reply)) {
                        rolled_back = false;
                    } else {
                        apply_switch(undo.node, undo.port, *undo.previous_fiber);
                    }
                } catch (const Error&) {
                    rolled_back = false;
                }
            }
            log(t, plan.purpose + "-failed",
                {{"link_id", plan.link_id},
                 {"step", i + 1},
                 {"node", step.node},
                 {"error", std::string(to_string(e.code()))},
                 {"rolled_back", rolled_back},
                 {"key_bits", bits}});
            if (!rolled_back || plan.purpose == "failover") {
                log(t, "degraded",
                    {{"link_id", plan.link_id}, {"reason", rolled_back ? "no working path" : "rollback-failure"}});
            }
            last_plan_bits_ = bits;
            return false;
        }
    }
    last_plan_bits_ = bits;
    return true;
}

void Controller::start(const Plan& plan, double t, std::uint64_t key_bits) {
    auto& r = rearm_[plan.link_id];
    r.plan = plan;
    r.started_at = t;
    r.ready_at = t + policy_.resync_delay_s;
    r.key_bits = key_bits;
    r.attempts = 0;
    view_.links.at(plan.link_id).state = LinkState::rearming;
}

void Controller::check_rearm(const std::string& link_id, Rearm& r, double t) {
    if (t < r.ready_at) return;
    ++r.attempts;
    const auto& step = r.plan.steps.back();
    auto& link = view_.links.at(link_id);
    std::string status = "unreachable";
    try {
        const auto reply =
            call(step.node, agent::rpc::get_link_status(next_message_id(), link_id), "get-link-status", t, &r.key_bits);
        if (const auto* s = data_child(reply, "qkd_link_status")) {
            if (const auto* st = s->child("qkdl_status")) status = st->text();
        }
    } catch (const Error&) {
    }
    if (status == link::to_string(link::LinkStatus::running)) {
        log(t, r.plan.purpose + "-complete",
            {{"link_id", link_id},
             {"old_fiber", r.plan.from_fiber.value_or("")},
             {"new_fiber", r.plan.to_fiber},
             {"key_bits", r.key_bits},
             {"started_at", r.started_at},
             {"rearm_attempts", r.attempts}});
        link.state = LinkState::normal;
        link.zero_run = 0;
        r.attempts = -1;
        return;
    }
    if (r.attempts >= policy_.max_rearm_attempts) {
        log(t, r.plan.purpose + "-failed",
            {{"link_id", link_id}, {"reason", "link not running after re-arm"}, {"status", status}, {"key_bits", r.key_bits}});
        log(t, "degraded", {{"link_id", link_id}, {"reason", "no working path"}});
        link.state = LinkState::failed;
        r.attempts = -1;
    }
}

void Controller::on_tick(double t) {
    now_ = t;
    const auto failovers = std::exchange(pending_failover_, {});
    for (const auto& id : failovers) {
        auto& link = view_.links.at(id);
        if (rearm_.contains(id) || link.state != LinkState::outage) continue;
        const auto plan = plan_failover(id, view_, t);
        if (plan.empty()) {
            link.state = LinkState::failed;
            continue;
        }
        if (execute_plan(plan, t)) {
            start(plan, t, last_plan_bits_);
        } else {
            link.state = LinkState::failed;
        }
    }
    const auto reverts = std::exchange(pending_revert_, {});
    for (const auto& id : reverts) {
        if (rearm_.contains(id) || view_.links.at(id).state != LinkState::normal) continue;
        const auto plan = plan_revert(id, view_);
        if (plan.empty()) continue;
        if (execute_plan(plan, t)) start(plan, t, last_plan_bits_);
    }
    for (auto it = rearm_.begin(); it != rearm_.end();) {
        check_rearm(it->first, it->second, t);
        it = it->second.attempts < 0 ? rearm_.erase(it) : std::next(it);
    }
}

xml::Element Controller::manual_switch(const std::string& node, const std::string& port, const std::string& fiber_id,
                                       double t) {
    now_ = t;
    auto reply = call(node, agent::rpc::switch_port(next_message_id(), node, port, fiber_id), "switch-port", t, nullptr);
    const auto tag = channel::rpc_error_tag(reply);
    if (!tag) apply_switch(node, port, fiber_id);
    log(t, "manual-switch",
        {{"node", node}, {"port", port}, {"fiber_id", fiber_id}, {"ok", !tag}, {"error", tag.value_or("")}});
    return reply;
}

std::vector<link::MonitoringSample> Controller::export_monitoring(double from, double to) const {
    std::vector<link::MonitoringSample> out;
    for (const auto& [link, series] : view_.samples) {
        for (auto it = series.lower_bound(from); it != series.end() && it->first < to; ++it) out.push_back(it->second);
    }
    return out;
}

std::map<std::string, std::vector<link::MonitoringSample>> Controller::export_by_fiber(double from, double to) const {
    std::map<std::string, std::vector<link::MonitoringSample>> out;
    for (const auto& s : export_monitoring(from, to)) {
        if (!s.fiber_id.empty()) out[s.fiber_id].push_back(s);
    }
    for (auto& [fiber, series] : out) {
        std::stable_sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    }
    return out;
}

std::vector<Event> Controller::export_events(double from, double to) const {
    std::vector<Event> out;
    for (const auto& e : view_.events) {
        if (e.t >= from && e.t < to) out.push_back(e);
    }
    return out;
}

} // namespace sdqn::controller
