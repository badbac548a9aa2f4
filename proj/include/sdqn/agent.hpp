#pragma once

#include "sdqn/link_emulator.hpp"
#include "sdqn/xml.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sdqn::agent {

inline constexpr std::string_view kNetconfNs = "urn:ietf:params:xml:ns:netconf:base:1.0";
inline constexpr std::string_view kNotificationNs = "urn:ietf:params:xml:ns:netconf:notification:1.0";
inline constexpr std::string_view kNodeNs = "urn:etsi:qkd:yang:etsi-qkd-node";

/// Stable qkdn_id of a node: name-based UUID of its node name.
std::string qkdn_id_for(const std::string& node_id);

struct LinkEntry {
    std::string link_id;
    std::string local_port;
    std::string remote_node;
    std::string remote_port;
    std::optional<std::string> attached_fiber; // fiber on the local port
    link::LinkStatus status = link::LinkStatus::down;
    double loss_db = 0.0;

    bool operator==(const LinkEntry&) const = default;
};

struct InterfaceEntry {
    std::string port;
    std::string switch_id;
    std::optional<std::string> connected_fiber;

    bool operator==(const InterfaceEntry&) const = default;
};

struct Application {
    std::string sae_id;
    std::string role;

    bool operator==(const Application&) const = default;
};

struct NodeModel {
    std::string node_id;
    std::string qkdn_id;
    std::vector<LinkEntry> qkd_links;
    std::vector<InterfaceEntry> qkd_interfaces;
    std::vector<Application> qkd_applications;

    const LinkEntry* link(std::string_view link_id) const;
    LinkEntry* link(std::string_view link_id);
    const InterfaceEntry* interface(std::string_view port) const;
    InterfaceEntry* interface(std::string_view port);

    /// `<qkd_node xmlns="urn:etsi:qkd:yang:etsi-qkd-node">...`
    xml::Element to_xml() const;
    /// Throws malformed-request.
    static NodeModel from_xml(const xml::Element& node);

    bool operator==(const NodeModel&) const = default;
};

struct FiberState {
    std::string fiber_id;
    bool operational = true;

    bool operator==(const FiberState&) const = default;
};

/// Body of one telemetry NOTIFICATION.
struct TelemetryReport {
    std::string node_id;
    double t = 0.0;
    std::vector<link::MonitoringSample> samples;
    std::vector<FiberState> fibers;

    xml::Element to_xml() const;
    /// Throws malformed-request.
    static TelemetryReport from_xml(const xml::Element& notification);

    bool operator==(const TelemetryReport&) const = default;
};

/// RPC request builders, shared by the controller and the tests.
namespace rpc {
xml::Element get_config(const std::string& message_id);
xml::Element delete_link(const std::string& message_id, const std::string& node_id, const std::string& link_id);
struct CreateLink {
    std::string link_id;
    std::string local_port;
    std::string remote_node;
    std::string remote_port;
    std::optional<std::string> fiber_id;
    double base_rate_bps = 1000.0;
};
xml::Element create_link(const std::string& message_id, const std::string& node_id, const CreateLink& link);
xml::Element switch_port(const std::string& message_id, const std::string& switch_id, const std::string& port,
                         const std::string& fiber_id);
xml::Element get_link_status(const std::string& message_id, const std::string& link_id);
} // namespace rpc

/// Node agent: the node model of one node, backed by the emulated devices and
/// switch of that node. RPCs run one at a time; model snapshots taken for
/// telemetry never see a half-applied RPC.
class Agent {
public:
    Agent(std::string node_id, link::LinkEmulator& emulator, std::vector<Application> applications = {});

    const std::string& node_id() const noexcept { return node_id_; }
    const std::string& qkdn_id() const noexcept { return qkdn_id_; }

    /// Current model; link statuses and losses are read live from the devices.
    NodeModel model() const;

    /// Answers one <rpc>. Mutating operations are remembered by message-id and
    /// a replay returns the first reply without touching state again.
    xml::Element handle(const xml::Element& request);

    /// Latest sample of a local link, as measured by the devices.
    void observe(const link::MonitoringSample& sample);
    TelemetryReport telemetry(double t) const;

    /// Differences between the model and the emulator, empty when coherent.
    std::vector<std::string> coherence_violations() const;
    std::size_t replays() const;

private:
    xml::Element dispatch(const xml::Element& op, const std::string& message_id);
    xml::Element get_config() const;
    xml::Element edit_config(const xml::Element& op);
    xml::Element delete_link(const std::string& link_id);
    xml::Element create_link(const xml::Element& link);
    xml::Element switch_port(const xml::Element& op);
    xml::Element link_status(const xml::Element& op) const;
    NodeModel snapshot() const;

    std::string node_id_;
    std::string qkdn_id_;
    link::LinkEmulator& emulator_;
    mutable std::mutex mutex_;
    NodeModel model_;
    std::set<std::string> deleted_;
    std::map<std::string, link::MonitoringSample> latest_;
    std::map<std::string, xml::Element> replies_;
    std::size_t replays_ = 0;
};

} // namespace sdqn::agent
