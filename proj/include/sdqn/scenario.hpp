#pragma once

#include "sdqn/controller.hpp"
#include "sdqn/crypto_codec.hpp"
#include "sdqn/link_emulator.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sdqn::scenario {

struct FiberSpec {
    std::string id;
    std::string a;
    std::string b;
    double loss_db = 0.0;
};

struct LinkSpec {
    std::string id;
    link::PortRef a;
    link::PortRef b;
    std::optional<std::string> fiber;
    double base_rate_bps = 1000.0;
};

struct SessionSpec {
    std::string node;
    std::optional<std::string> link; // QKD link whose keys protect the session; none for the local agent
    codec::EncryptionPolicy policy;
    std::optional<codec::EncryptionPolicy> notification_policy;
    std::string secret;
};

enum class ActionKind { fail_fiber, restore_fiber, manual_switch, set_policy };

std::string_view to_string(ActionKind kind) noexcept;

struct Action {
    double at = 0.0;
    ActionKind kind = ActionKind::fail_fiber;
    std::vector<std::string> args; // fiber | node port fiber | node
    std::optional<codec::EncryptionPolicy> policy;
    int line = 0;
};

struct Scenario {
    std::uint64_t seed = 1;
    double time_scale = 0.0; // scenario seconds per wall second; 0 runs unpaced
    double duration = 86400.0;
    double telemetry_interval = 60.0;
    double resync_delay = 30.0;
    double warmup = 600.0; // key accumulation before t = 0
    double sbr_jitter = 0.0;
    int outage_threshold = 3;
    bool revert_on_restore = true;
    std::string controller;
    std::vector<std::string> nodes;
    std::vector<FiberSpec> fibers;
    std::vector<LinkSpec> links;
    std::vector<SessionSpec> sessions;
    std::vector<Action> schedule;
};

/// Parses the line-oriented scenario format. Throws parse-error (with the
/// line number) or reference-error.
Scenario parse_scenario(std::string_view text, const std::string& source = "<scenario>");
Scenario load_scenario(const std::filesystem::path& path);
/// Cross-reference checks; throws reference-error.
void validate(const Scenario& scenario);

/// Replaces the policy of every session that travels over a QKD link.
Scenario with_policy(Scenario scenario, const codec::EncryptionPolicy& policy);

struct PhaseStats {
    double begin = 0.0;
    double end = 0.0;
    std::size_t samples = 0;
    std::size_t up_samples = 0;
    double mean_sbr = 0.0;    // over all samples
    double mean_sbr_up = 0.0; // over samples with sbr > 0
    double mean_qber_up = 0.0;
};

/// Phase boundaries are the times of scheduled fail/restore actions.
std::vector<double> phase_boundaries(const Scenario& scenario);
std::vector<PhaseStats> phase_stats(const std::vector<link::MonitoringSample>& series,
                                    const std::vector<double>& boundaries, double duration);

struct UsageRow {
    double t = 0.0;
    channel::MessageUsage usage;
    std::uint64_t cumulative_used = 0;    // per sender SAE
    std::uint64_t cumulative_fetched = 0; // per sender SAE
};

struct RunOptions {
    std::optional<std::uint64_t> seed;
    std::optional<double> time_scale;
    std::optional<std::filesystem::path> out_dir;
    std::optional<int> control_port;
    /// Called after every tick with the scenario time; used for progress output.
    std::function<void(double)> on_tick;
};

struct RunResult {
    int exit_code = 0;
    std::vector<std::string> violations;
    std::vector<link::MonitoringSample> monitoring;
    std::vector<controller::Event> events;
    std::vector<UsageRow> usage;
    /// Every pad range consumed, from the ledgers of all nodes.
    std::vector<codec::PadLedger::Entry> pad_entries;
    std::map<std::string, std::optional<std::string>> initial_assignment; // link -> fiber
    std::map<std::string, std::optional<std::string>> final_assignment;
    std::map<std::string, std::vector<PhaseStats>> phases; // per link
    std::uint64_t bits_used = 0;
    std::uint64_t bits_fetched = 0;
    std::uint64_t starved_notifications = 0;
    std::size_t messages = 0;
    double wall_seconds = 0.0;

    std::string monitoring_csv() const;
    std::string events_jsonl() const;
    std::string key_usage_csv() const;
    std::string summary_text() const;
};

RunResult run(const Scenario& scenario, const RunOptions& options = {});

struct PolicyTotals {
    std::string policy;
    std::uint64_t bits_used = 0;
    std::uint64_t bits_fetched = 0;
    std::size_t messages = 0;
    std::uint64_t starved_notifications = 0;
    int exit_code = 0;
};

/// Runs the scenario once per policy, unpaced, and totals control-plane keys.
std::vector<PolicyTotals> compare_policies(const Scenario& scenario,
                                           const std::vector<codec::EncryptionPolicy>& policies);
std::string policy_table(const std::vector<PolicyTotals>& totals);

} // namespace sdqn::scenario
