#include "sdqn/agent.hpp"

#include "sdqn/bytes.hpp"
#include "sdqn/control_channel.hpp"
#include "sdqn/error.hpp"
#include "sdqn/text.hpp"

#include <algorithm>

namespace sdqn::agent {

namespace {

std::string leaf(const xml::Element& e, std::string_view tag) {
    const auto* c = e.child(tag);
    if (c == nullptr) throw Error(Errc::malformed_request, "<" + e.tag + "> lacks <" + std::string(tag) + ">");
    return c->text();
}

std::optional<std::string> optional_leaf(const xml::Element& e, std::string_view tag) {
    const auto* c = e.child(tag);
    if (c == nullptr || c->text().empty()) return std::nullopt;
    return c->text();
}

double number_leaf(const xml::Element& e, std::string_view tag) {
    const auto text = leaf(e, tag);
    const auto v = parse_number(text);
    if (!v) throw Error(Errc::malformed_request, "<" + std::string(tag) + "> is not a number: '" + text + "'");
    return *v;
}

xml::Element rpc_envelope(const std::string& message_id) {
    xml::Element rpc("rpc");
    rpc.set_attribute("message-id", message_id);
    rpc.set_attribute("xmlns", std::string(kNetconfNs));
    return rpc;
}

xml::Element edit_config_envelope(const std::string& message_id, const std::string& node_id, xml::Element link) {
    auto rpc = rpc_envelope(message_id);
    auto& edit = rpc.add(xml::Element("edit-config"));
    edit.add(xml::Element("target")).add(xml::Element("running"));
    auto& node = edit.add(xml::Element("config")).add(xml::Element("qkd_node"));
    node.set_attribute("xmlns", std::string(kNodeNs));
    node.add_leaf("qkdn_id", qkdn_id_for(node_id));
    node.add(xml::Element("qkd_links")).add(std::move(link));
    return rpc;
}

xml::Element ok_reply() {
    auto reply = channel::rpc_ok_reply();
    reply.set_attribute("xmlns", std::string(kNetconfNs));
    return reply;
}

xml::Element data_reply(xml::Element content) {
    xml::Element reply("rpc-reply");
    reply.set_attribute("xmlns", std::string(kNetconfNs));
    reply.add(xml::Element("data")).add(std::move(content));
    return reply;
}

} // namespace

std::string qkdn_id_for(const std::string& node_id) { return Uuid::from_name(node_id).to_string(); }

const LinkEntry* NodeModel::link(std::string_view link_id) const {
    for (const auto& l : qkd_links) {
        if (l.link_id == link_id) return &l;
    }
    return nullptr;
}

LinkEntry* NodeModel::link(std::string_view link_id) {
    return const_cast<LinkEntry*>(std::as_const(*this).link(link_id));
}

const InterfaceEntry* NodeModel::interface(std::string_view port) const {
    for (const auto& i : qkd_interfaces) {
        if (i.port == port) return &i;
    }
    return nullptr;
}

InterfaceEntry* NodeModel::interface(std::string_view port) {
    return const_cast<InterfaceEntry*>(std::as_const(*this).interface(port));
}

xml::Element NodeModel::to_xml() const {
    xml::Element node("qkd_node");
    node.set_attribute("xmlns", std::string(kNodeNs));
    node.add_leaf("qkdn_id", qkdn_id);
    node.add_leaf("node_id", node_id);

    auto& interfaces = node.add(xml::Element("qkd_interfaces"));
    for (const auto& i : qkd_interfaces) {
        auto& e = interfaces.add(xml::Element("qkd_interface"));
        e.add_leaf("qkdi_id", i.switch_id + ":" + i.port);
        e.add_leaf("switch_id", i.switch_id);
        e.add_leaf("port", i.port);
        e.add_leaf("connected_fiber", i.connected_fiber.value_or(""));
    }

    auto& links = node.add(xml::Element("qkd_links"));
    for (const auto& l : qkd_links) {
        auto& e = links.add(xml::Element("qkd_link"));
        e.add_leaf("qkdl_id", l.link_id);
        e.add(xml::Element("qkdl_local")).add_leaf("qkdn_id", qkdn_id).add_leaf("port", l.local_port);
        e.add(xml::Element("qkdl_remote"))
            .add_leaf("qkdn_id", qkdn_id_for(l.remote_node))
            .add_leaf("node_id", l.remote_node)
            .add_leaf("port", l.remote_port);
        e.add_leaf("attached_fiber", l.attached_fiber.value_or(""));
        e.add_leaf("qkdl_status", std::string(link::to_string(l.status)));
        e.add_leaf("loss_db", format_number(l.loss_db));
    }

    auto& apps = node.add(xml::Element("qkd_applications"));
    for (const auto& a : qkd_applications) {
        apps.add(xml::Element("qkd_app")).add_leaf("app_id", a.sae_id).add_leaf("role", a.role);
    }
    return node;
}

NodeModel NodeModel::from_xml(const xml::Element& node) {
    if (node.tag != "qkd_node") throw Error(Errc::malformed_request, "expected <qkd_node>, got <" + node.tag + ">");
    NodeModel m;
    m.qkdn_id = leaf(node, "qkdn_id");
    m.node_id = leaf(node, "node_id");
    if (const auto* interfaces = node.child("qkd_interfaces")) {
        for (const auto* i : interfaces->children_named("qkd_interface")) {
            m.qkd_interfaces.push_back({leaf(*i, "port"), leaf(*i, "switch_id"), optional_leaf(*i, "connected_fiber")});
        }
    }
    if (const auto* links = node.child("qkd_links")) {
        for (const auto* l : links->children_named("qkd_link")) {
            LinkEntry e;
            e.link_id = leaf(*l, "qkdl_id");
            const auto* local = l->child("qkdl_local");
            const auto* remote = l->child("qkdl_remote");
            if (local == nullptr || remote == nullptr) throw Error(Errc::malformed_request, "qkd_link without ends");
            e.local_port = leaf(*local, "port");
            e.remote_node = leaf(*remote, "node_id");
            e.remote_port = leaf(*remote, "port");
            e.attached_fiber = optional_leaf(*l, "attached_fiber");
            const auto status = link::parse_status(leaf(*l, "qkdl_status"));
            if (!status) throw Error(Errc::malformed_request, "bad qkdl_status");
            e.status = *status;
            e.loss_db = number_leaf(*l, "loss_db");
            m.qkd_links.push_back(std::move(e));
        }
    }
    if (const auto* apps = node.child("qkd_applications")) {
        for (const auto* a : apps->children_named("qkd_app")) m.qkd_applications.push_back({leaf(*a, "app_id"), leaf(*a, "role")});
    }
    return m;
}

xml::Element TelemetryReport::to_xml() const {
    xml::Element n("notification");
    n.set_attribute("xmlns", std::string(kNotificationNs));
    n.add_leaf("eventTime", format_number(t));
    auto& body = n.add(xml::Element("qkd_telemetry"));
    body.set_attribute("xmlns", std::string(kNodeNs));
    body.add_leaf("qkdn_id", qkdn_id_for(node_id));
    body.add_leaf("node_id", node_id);
    for (const auto& s : samples) {
        body.add(xml::Element("link_sample"))
            .add_leaf("qkdl_id", s.link_id)
            .add_leaf("fiber_id", s.fiber_id)
            .add_leaf("t", format_number(s.t))
            .add_leaf("sbr", format_number(s.sbr_bps))
            .add_leaf("qber", format_number(s.qber))
            .add_leaf("status", std::string(link::to_string(s.status)));
    }
    for (const auto& f : fibers) {
        body.add(xml::Element("fiber_state"))
            .add_leaf("fiber_id", f.fiber_id)
            .add_leaf("operational", f.operational ? "true" : "false");
    }
    return n;
}

TelemetryReport TelemetryReport::from_xml(const xml::Element& notification) {
    const auto* body = notification.child("qkd_telemetry");
    if (notification.tag != "notification" || body == nullptr) {
        throw Error(Errc::malformed_request, "not a telemetry notification");
    }
    TelemetryReport r;
    r.node_id = leaf(*body, "node_id");
    r.t = number_leaf(notification, "eventTime");
    for (const auto* s : body->children_named("link_sample")) {
        link::MonitoringSample m;
        m.link_id = leaf(*s, "qkdl_id");
        m.fiber_id = leaf(*s, "fiber_id");
        m.t = number_leaf(*s, "t");
        m.sbr_bps = number_leaf(*s, "sbr");
        m.qber = number_leaf(*s, "qber");
        const auto status = link::parse_status(leaf(*s, "status"));
        if (!status) throw Error(Errc::malformed_request, "bad link status");
        m.status = *status;
        r.samples.push_back(std::move(m));
    }
    for (const auto* f : body->children_named("fiber_state")) {
        const auto op = leaf(*f, "operational");
        if (op != "true" && op != "false") throw Error(Errc::malformed_request, "bad operational flag");
        r.fibers.push_back({leaf(*f, "fiber_id"), op == "true"});
    }
    return r;
}

namespace rpc {

xml::Element get_config(const std::string& message_id) {
    auto rpc = rpc_envelope(message_id);
    rpc.add(xml::Element("get-config")).add(xml::Element("source")).add(xml::Element("running"));
    return rpc;
}

xml::Element delete_link(const std::string& message_id, const std::string& node_id, const std::string& link_id) {
    xml::Element link("qkd_link");
    link.set_attribute("operation", "delete");
    link.add_leaf("qkdl_id", link_id);
    return edit_config_envelope(message_id, node_id, std::move(link));
}

xml::Element create_link(const std::string& message_id, const std::string& node_id, const CreateLink& spec) {
    xml::Element link("qkd_link");
    link.set_attribute("operation", "create");
    link.add_leaf("qkdl_id", spec.link_id);
    link.add(xml::Element("qkdl_local")).add_leaf("port", spec.local_port);
    link.add(xml::Element("qkdl_remote"))
        .add_leaf("qkdn_id", qkdn_id_for(spec.remote_node))
        .add_leaf("node_id", spec.remote_node)
        .add_leaf("port", spec.remote_port);
    if (spec.fiber_id) link.add_leaf("fiber_id", *spec.fiber_id);
    link.add_leaf("base_rate", format_number(spec.base_rate_bps));
    return edit_config_envelope(message_id, node_id, std::move(link));
}

xml::Element switch_port(const std::string& message_id, const std::string& switch_id, const std::string& port,
                         const std::string& fiber_id) {
    auto rpc = rpc_envelope(message_id);
    rpc.add(xml::Element("switch-port"))
        .add_leaf("switch_id", switch_id)
        .add_leaf("port", port)
        .add_leaf("fiber_id", fiber_id);
    return rpc;
}

xml::Element get_link_status(const std::string& message_id, const std::string& link_id) {
    auto rpc = rpc_envelope(message_id);
    rpc.add(xml::Element("get-link-status")).add_leaf("qkdl_id", link_id);
    return rpc;
}

} // namespace rpc

Agent::Agent(std::string node_id, link::LinkEmulator& emulator, std::vector<Application> applications)
    : node_id_(std::move(node_id)), qkdn_id_(qkdn_id_for(node_id_)), emulator_(emulator) {
    model_.node_id = node_id_;
    model_.qkdn_id = qkdn_id_;
    model_.qkd_applications = std::move(applications);
    for (const auto& [port, fiber] : emulator_.cross_connects(node_id_)) {
        model_.qkd_interfaces.push_back({port, node_id_, fiber});
    }
    for (const auto& p : emulator_.pairs_at(node_id_)) {
        const bool first = p.ports.first.switch_id == node_id_;
        const auto& local = first ? p.ports.first : p.ports.second;
        const auto& remote = first ? p.ports.second : p.ports.first;
        LinkEntry e;
        e.link_id = p.link_id;
        e.local_port = local.port;
        e.remote_node = remote.switch_id;
        e.remote_port = remote.port;
        e.attached_fiber = model_.interface(local.port)->connected_fiber;
        model_.qkd_links.push_back(std::move(e));
    }
}

NodeModel Agent::snapshot() const {
    NodeModel m = model_;
    for (auto& l : m.qkd_links) {
        l.status = emulator_.status(l.link_id);
        l.loss_db = l.attached_fiber ? emulator_.fiber(*l.attached_fiber).loss_db : 0.0;
    }
    return m;
}

NodeModel Agent::model() const {
    std::lock_guard lock(mutex_);
    return snapshot();
}

xml::Element Agent::handle(const xml::Element& request) {
    std::lock_guard lock(mutex_);
    const auto* mid = request.attribute("message-id");
    const std::string message_id = mid ? *mid : std::string();
    const xml::Element* op = nullptr;
    for (const auto& c : request.children) {
        if (!c.is_element()) continue;
        if (op != nullptr) {
            op = nullptr;
            break;
        }
        op = &c.element();
    }
    if (request.tag != "rpc" || op == nullptr) {
        return channel::rpc_error_reply(to_string(Errc::malformed_request), "expected <rpc> with one operation");
    }

    const bool mutating = op->tag == "edit-config" || op->tag == "switch-port";
    if (mutating && !message_id.empty()) {
        if (const auto it = replies_.find(message_id); it != replies_.end()) {
            ++replays_;
            return it->second;
        }
    }
    xml::Element reply;
    try {
        reply = dispatch(*op, message_id);
    } catch (const Error& e) {
        reply = channel::rpc_error_reply(to_string(e.code()), e.what());
        reply.set_attribute("xmlns", std::string(kNetconfNs));
    }
    if (mutating && !message_id.empty()) replies_.emplace(message_id, reply);
    return reply;
}

xml::Element Agent::dispatch(const xml::Element& op, const std::string&) {
    if (op.tag == "get-config") return get_config();
    if (op.tag == "edit-config") return edit_config(op);
    if (op.tag == "switch-port") return switch_port(op);
    if (op.tag == "get-link-status") return link_status(op);
    throw Error(Errc::malformed_request, "unsupported operation <" + op.tag + ">");
}

xml::Element Agent::get_config() const { return data_reply(snapshot().to_xml()); }

xml::Element Agent::edit_config(const xml::Element& op) {
    const auto* config = op.child("config");
    const auto* node = config ? config->child("qkd_node") : nullptr;
    const auto* links = node ? node->child("qkd_links") : nullptr;
    if (links == nullptr) throw Error(Errc::malformed_request, "edit-config without config/qkd_node/qkd_links");
    if (leaf(*node, "qkdn_id") != qkdn_id_) {
        throw Error(Errc::malformed_request, "qkdn_id does not name node " + node_id_);
    }
    const auto entries = links->children_named("qkd_link");
    if (entries.size() != 1) throw Error(Errc::malformed_request, "exactly one qkd_link per edit-config");
    const auto* operation = entries.front()->attribute("operation");
    if (operation == nullptr) throw Error(Errc::malformed_request, "qkd_link without operation");
    if (*operation == "delete") return delete_link(leaf(*entries.front(), "qkdl_id"));
    if (*operation == "create") return create_link(*entries.front());
    throw Error(Errc::malformed_request, "unsupported qkd_link operation '" + *operation + "'");
}

xml::Element Agent::delete_link(const std::string& link_id) {
    const auto it = std::find_if(model_.qkd_links.begin(), model_.qkd_links.end(),
                                 [&](const LinkEntry& l) { return l.link_id == link_id; });
    if (it == model_.qkd_links.end()) throw Error(Errc::unknown_link, link_id + " at " + node_id_);
    emulator_.stop_pair(link_id);
    model_.qkd_links.erase(it);
    deleted_.insert(link_id);
    latest_.erase(link_id);
    return ok_reply();
}

xml::Element Agent::create_link(const xml::Element& spec) {
    const auto link_id = leaf(spec, "qkdl_id");
    const auto* local = spec.child("qkdl_local");
    const auto* remote = spec.child("qkdl_remote");
    if (local == nullptr || remote == nullptr) throw Error(Errc::malformed_request, "qkd_link without ends");
    const auto local_port = leaf(*local, "port");
    const auto remote_node = leaf(*remote, "node_id");
    const auto remote_port = leaf(*remote, "port");
    const auto fiber = optional_leaf(spec, "fiber_id");
    const double base_rate = spec.child("base_rate") ? number_leaf(spec, "base_rate") : 1000.0;

    if (model_.link(link_id) != nullptr) return ok_reply();

    if (emulator_.has_pair(link_id)) {
        const auto p = emulator_.pair(link_id);
        const auto& mine = p.ports.first.switch_id == node_id_ ? p.ports.first : p.ports.second;
        if (mine.switch_id != node_id_ || mine.port != local_port) {
            throw Error(Errc::malformed_request, link_id + " does not terminate at " + node_id_ + "/" + local_port);
        }
        if (fiber && emulator_.cross_connects(node_id_).at(local_port) != fiber) {
            emulator_.set_cross_connect(node_id_, local_port, *fiber);
        }
        emulator_.start_pair(link_id);
    } else {
        emulator_.add_pair(link_id, {node_id_, local_port}, {remote_node, remote_port}, fiber, base_rate);
    }

    const auto attached = emulator_.cross_connects(node_id_).at(local_port);
    if (auto* iface = model_.interface(local_port)) {
        iface->connected_fiber = attached;
    } else {
        model_.qkd_interfaces.push_back({local_port, node_id_, attached});
    }
    LinkEntry e;
    e.link_id = link_id;
    e.local_port = local_port;
    e.remote_node = remote_node;
    e.remote_port = remote_port;
    e.attached_fiber = attached;
    model_.qkd_links.push_back(std::move(e));
    std::sort(model_.qkd_links.begin(), model_.qkd_links.end(),
              [](const LinkEntry& a, const LinkEntry& b) { return a.link_id < b.link_id; });
    deleted_.erase(link_id);
    return ok_reply();
}

xml::Element Agent::switch_port(const xml::Element& op) {
    const auto switch_id = leaf(op, "switch_id");
    const auto port = leaf(op, "port");
    const auto fiber = leaf(op, "fiber_id");
    if (switch_id != node_id_) throw Error(Errc::unknown_switch, switch_id + " is not the switch of " + node_id_);
    emulator_.set_cross_connect(switch_id, port, fiber);
    if (auto* iface = model_.interface(port)) {
        iface->connected_fiber = fiber;
    } else {
        model_.qkd_interfaces.push_back({port, switch_id, fiber});
    }
    for (auto& l : model_.qkd_links) {
        if (l.local_port == port) l.attached_fiber = fiber;
    }
    return ok_reply();
}

xml::Element Agent::link_status(const xml::Element& op) const {
    const auto link_id = leaf(op, "qkdl_id");
    const auto* entry = model_.link(link_id);
    if (entry == nullptr) throw Error(Errc::unknown_link, link_id + " at " + node_id_);
    xml::Element status("qkd_link_status");
    status.set_attribute("xmlns", std::string(kNodeNs));
    status.add_leaf("qkdl_id", link_id);
    status.add_leaf("qkdl_status", std::string(link::to_string(emulator_.status(link_id))));
    status.add_leaf("attached_fiber", entry->attached_fiber.value_or(""));
    return data_reply(std::move(status));
}

void Agent::observe(const link::MonitoringSample& sample) {
    std::lock_guard lock(mutex_);
    if (model_.link(sample.link_id) == nullptr) return;
    latest_[sample.link_id] = sample;
}

TelemetryReport Agent::telemetry(double t) const {
    std::lock_guard lock(mutex_);
    TelemetryReport r;
    r.node_id = node_id_;
    r.t = t;
    for (const auto& l : model_.qkd_links) {
        if (const auto it = latest_.find(l.link_id); it != latest_.end()) r.samples.push_back(it->second);
    }
    for (const auto& f : emulator_.fibers_at(node_id_)) r.fibers.push_back({f.id, f.operational});
    return r;
}

std::vector<std::string> Agent::coherence_violations() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    const auto actual = emulator_.cross_connects(node_id_);
    for (const auto& i : model_.qkd_interfaces) {
        const auto it = actual.find(i.port);
        if (it == actual.end()) {
            out.push_back(node_id_ + "/" + i.port + " is not a port of the switch");
        } else if (it->second != i.connected_fiber) {
            out.push_back(node_id_ + "/" + i.port + " model says " + i.connected_fiber.value_or("-") + ", switch has " +
                          it->second.value_or("-"));
        }
    }
    for (const auto& l : model_.qkd_links) {
        const auto port = actual.find(l.local_port);
        const auto on_port = port == actual.end() ? std::nullopt : port->second;
        if (on_port != l.attached_fiber) {
            out.push_back(l.link_id + " at " + node_id_ + " model fiber " + l.attached_fiber.value_or("-") +
                          ", port carries " + on_port.value_or("-"));
        }
    }
    for (const auto& id : deleted_) {
        if (emulator_.has_pair(id) && emulator_.pair(id).enabled && model_.link(id) == nullptr) {
            out.push_back(id + " was deleted at " + node_id_ + " but its devices still run");
        }
    }
    return out;
}

std::size_t Agent::replays() const {
    std::lock_guard lock(mutex_);
    return replays_;
}

} // namespace sdqn::agent
