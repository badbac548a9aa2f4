#pragma once

#include "sdqn/bytes.hpp"
#include "sdqn/key_block.hpp"

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sdqn::link {

enum class LinkStatus { running, down, switching };

std::string_view to_string(LinkStatus status) noexcept;
std::optional<LinkStatus> parse_status(std::string_view text) noexcept;

struct Fiber {
    std::string id;
    std::pair<std::string, std::string> endpoints; // node ids
    double loss_db = 0.0;
    bool operational = true;
};

struct MonitoringSample {
    std::string link_id;
    std::string fiber_id; // fiber carrying the link at sample time, empty when none
    double t = 0.0;       // scenario seconds
    double sbr_bps = 0.0;
    double qber = 0.0;
    LinkStatus status = LinkStatus::down;

    bool operator==(const MonitoringSample&) const = default;
};

struct ModelParams {
    double qber_base = 0.02;
    double qber_slope_per_db = 0.002;
    double qber_jitter = 0.003;
    double qber_cap = 0.12;
    /// Relative measurement noise on reported SBR (0 = exact model value).
    double sbr_jitter = 0.0;
    double resync_delay_s = 30.0;
};

/// Secret bit rate after `loss_db` of attenuation: base * 10^(-loss/10).
double sbr_model(double base_rate_bps, double loss_db) noexcept;

/// Deterministic uniform noise in [-1, 1), portable across standard libraries.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed) : engine_(seed) {}
    double symmetric_unit();

private:
    std::mt19937_64 engine_;
};

/// qber_base + slope*loss + jitter, clamped to [0, qber_cap]. A null noise
/// stream disables jitter.
double qber_model(double loss_db, NoiseStream* noise, const ModelParams& params = {});

/// Block `index` of `link_id` under the scenario seed. Both ends of a link
/// compute the same block without talking to each other.
KeyBlock derive_key_block(ByteView seed, const std::string& link_id, std::uint64_t index);

struct PortRef {
    std::string switch_id; // one switch per node, named after the node
    std::string port;
};

struct PairView {
    std::string link_id;
    std::pair<std::string, std::string> endpoints;
    std::pair<PortRef, PortRef> ports;
    std::optional<std::string> fiber; // common fiber of both ports, if any
    double loss_db = 0.0;
    double base_rate_bps = 0.0;
    bool enabled = true;
    LinkStatus status = LinkStatus::down;
};

struct StepResult {
    std::vector<KeyBlock> blocks;
    MonitoringSample sample;
};

/// Emulated QKD device pairs over fibers and per-node optical switches, on one
/// scenario clock. All methods are serialized through one mutex, so a step
/// never observes a half-applied cross-connect.
class LinkEmulator {
public:
    /// The clock starts at `start_time`; a negative start lets devices build
    /// up key material before scenario time zero.
    explicit LinkEmulator(Bytes seed, ModelParams params = {}, double start_time = 0.0);

    const ModelParams& params() const noexcept { return params_; }
    double now() const;

    void add_fiber(Fiber fiber);
    void add_switch(const std::string& switch_id);
    /// Registers a pair whose ports are cross-connected to `initial_fiber` at
    /// both ends; the link starts RUNNING when that fiber is operational.
    void add_pair(const std::string& link_id, const PortRef& a, const PortRef& b,
                  const std::optional<std::string>& initial_fiber, double base_rate_bps);
    bool has_pair(const std::string& link_id) const;

    void set_cross_connect(const std::string& switch_id, const std::string& port, const std::string& fiber_id);
    void fail_fiber(const std::string& fiber_id);
    void restore_fiber(const std::string& fiber_id);
    void stop_pair(const std::string& link_id);
    void start_pair(const std::string& link_id);

    /// Advances the clock by dt for every pair (ordered by link id).
    std::vector<std::pair<std::string, StepResult>> advance(double dt);

    LinkStatus status(const std::string& link_id) const;
    PairView pair(const std::string& link_id) const;
    std::vector<PairView> pairs_at(const std::string& node) const;
    std::map<std::string, std::optional<std::string>> cross_connects(const std::string& switch_id) const;
    Fiber fiber(const std::string& fiber_id) const;
    std::vector<Fiber> fibers() const;
    std::vector<Fiber> fibers_at(const std::string& node) const;
    std::uint64_t blocks_emitted(const std::string& link_id) const;

private:
    struct Pair {
        std::string link_id;
        PortRef a;
        PortRef b;
        std::pair<std::string, std::string> endpoints;
        double base_rate_bps = 0.0;
        bool enabled = true;
        double switching_until = 0.0;
        double carry_bits = 0.0;
        std::uint64_t next_block = 0;
        NoiseStream noise;
    };

    std::optional<std::string> common_fiber(const Pair& p) const;
    bool path_up(const Pair& p) const;
    LinkStatus status_of(const Pair& p, double t) const;
    PairView view_of(const Pair& p) const;
    void resync(Pair& p);
    StepResult step(Pair& p, double dt);
    Pair& pair_ref(const std::string& link_id);
    const Pair& pair_ref(const std::string& link_id) const;

    mutable std::mutex mutex_;
    Bytes seed_;
    ModelParams params_;
    double now_ = 0.0;
    std::map<std::string, Fiber> fibers_;
    std::map<std::string, std::map<std::string, std::optional<std::string>>> switches_;
    std::map<std::string, Pair> pairs_;
};

} // namespace sdqn::link
