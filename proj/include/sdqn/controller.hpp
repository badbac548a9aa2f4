#pragma once

#include "sdqn/agent.hpp"
#include "sdqn/control_channel.hpp"
#include "sdqn/link_emulator.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sdqn::controller {

struct FiberInfo {
    std::string id;
    std::pair<std::string, std::string> endpoints;
    double loss_db = 0.0;
    bool operational = true;
    bool in_use = false;
};

/// One entry of the append-only event log.
struct Event {
    double t = 0.0;
    std::string kind;
    nlohmann::json details = nlohmann::json::object();

    /// `{"kind":..,"t":..,<details>}` on one line, keys sorted.
    std::string to_json_line() const;
};

/// Kinds that mark a change of network state, as opposed to per-RPC records.
bool is_state_change(std::string_view kind) noexcept;

struct FailoverPolicy {
    int outage_threshold = 3; // consecutive zero-SBR samples
    bool revert_on_restore = true;
    double resync_delay_s = 30.0;
    int max_rearm_attempts = 10;

    void validate() const;
};

enum class LinkState { normal, outage, rearming, failed };

std::string_view to_string(LinkState state) noexcept;

struct LinkInfo {
    std::string link_id;
    std::pair<std::string, std::string> endpoints; // sorted node ids
    std::pair<std::string, std::string> ports;     // port at endpoints.first / .second
    std::optional<std::string> home_fiber;         // carrier when the controller started
    std::optional<std::string> current_fiber;      // common fiber per the node models
    int zero_run = 0;
    LinkState state = LinkState::normal;
};

struct NetworkView {
    std::map<std::string, agent::NodeModel> nodes;
    std::map<std::string, FiberInfo> fibers;
    std::map<std::string, LinkInfo> links;
    std::map<std::string, std::map<double, link::MonitoringSample>> samples; // link -> t -> sample
    std::vector<Event> events;

    /// Recomputes current_fiber of every link and in_use of every fiber from
    /// the node models.
    void reconcile();
    /// Descriptions of broken invariants, empty when consistent.
    std::vector<std::string> invariant_violations() const;
};

struct PlanStep {
    enum class Kind { switch_port, rearm };
    Kind kind = Kind::switch_port;
    std::string node;
    std::string port;
    std::string fiber_id;
    std::optional<std::string> previous_fiber;
};

struct Plan {
    std::string link_id;
    std::string purpose; // "failover" or "revert"
    std::optional<std::string> from_fiber;
    std::string to_fiber;
    std::vector<PlanStep> steps;

    bool empty() const noexcept { return steps.empty(); }
};

/// Operational, unused fiber joining the link's endpoints with the least loss;
/// ties go to the smallest fiber id.
std::optional<std::string> select_backup(const LinkInfo& link, const NetworkView& view);

/// Switch at endpoint A, switch at endpoint B, re-arm. Empty plan plus a
/// no-backup event when no candidate exists.
Plan plan_failover(const std::string& link_id, NetworkView& view, double t);
/// Same shape, back onto the link's home fiber. Empty when that is impossible.
Plan plan_revert(const std::string& link_id, const NetworkView& view);

/// Central controller. Runs on the scenario thread: telemetry ingest, planning
/// and plan execution all go through the single NetworkView it owns.
class Controller {
public:
    Controller(std::string node_id, FailoverPolicy policy = {});

    const std::string& node_id() const noexcept { return node_id_; }
    const FailoverPolicy& policy() const noexcept { return policy_; }
    const NetworkView& view() const noexcept { return view_; }

    void add_fiber(FiberInfo fiber);
    /// Registers the open session towards `node`; replaces an earlier one.
    void attach(const std::string& node, channel::InitiatorSession& session);
    void detach(const std::string& node);
    bool attached(const std::string& node) const { return sessions_.contains(node); }

    /// Reads the model of every attached node not yet known and learns links
    /// and their home fibers. True once every attached node is known.
    bool bootstrap(double t);

    /// Drains telemetry from all sessions at scenario time t.
    void poll(double t);
    void ingest_report(const agent::TelemetryReport& report, double t);
    /// False when the sample is dropped (unknown link or already stored).
    bool ingest_sample(const link::MonitoringSample& sample);
    void ingest_fiber_state(const std::string& fiber_id, bool operational, double t);

    /// Runs pending failovers and reverts, then re-arm checks.
    void on_tick(double t);
    /// Executes the switch steps of a plan, rolling back on failure.
    bool execute_plan(const Plan& plan, double t);
    /// Operator command; returns the agent's reply.
    xml::Element manual_switch(const std::string& node, const std::string& port, const std::string& fiber_id,
                               double t);
    /// Sends an arbitrary RPC through the logged path.
    xml::Element request(const std::string& node, xml::Element rpc, const std::string& op, double t);

    void log(double t, std::string kind, nlohmann::json details);
    std::string next_message_id();

    /// Samples with from <= t < to, ordered by link id then time.
    std::vector<link::MonitoringSample> export_monitoring(double from, double to) const;
    /// The same samples grouped by the fiber that carried them.
    std::map<std::string, std::vector<link::MonitoringSample>> export_by_fiber(double from, double to) const;
    std::vector<Event> export_events(double from, double to) const;

    std::uint64_t control_bits_used() const noexcept { return control_bits_; }
    std::size_t dropped_samples() const noexcept { return dropped_; }

private:
    struct Rearm {
        Plan plan;
        double ready_at = 0.0;
        double started_at = 0.0;
        std::uint64_t key_bits = 0;
        int attempts = 0;
    };

    xml::Element call(const std::string& node, xml::Element rpc, const std::string& op, double t,
                      std::uint64_t* key_bits);
    void apply_switch(const std::string& node, const std::string& port, const std::string& fiber_id);
    void start(const Plan& plan, double t, std::uint64_t key_bits);
    void check_rearm(const std::string& link_id, Rearm& r, double t);

    std::string node_id_;
    FailoverPolicy policy_;
    NetworkView view_;
    std::map<std::string, channel::InitiatorSession*> sessions_;
    std::set<std::string> pending_failover_;
    std::set<std::string> pending_revert_;
    std::map<std::string, Rearm> rearm_;
    std::set<std::string> unknown_links_;
    std::uint64_t next_message_ = 1;
    std::uint64_t control_bits_ = 0;
    std::size_t dropped_ = 0;
    double now_ = 0.0;
    std::uint64_t last_plan_bits_ = 0;
};

} // namespace sdqn::controller
