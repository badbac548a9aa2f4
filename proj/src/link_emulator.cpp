#include "sdqn/link_emulator.hpp"

#include "sdqn/error.hpp"

#include <algorithm>
#include <cmath>

namespace sdqn::link {

std::string_view to_string(LinkStatus status) noexcept {
    switch (status) {
    case LinkStatus::running: return "RUNNING";
    case LinkStatus::down: return "DOWN";
    case LinkStatus::switching: return "SWITCHING";
    }
    return "?";
}

std::optional<LinkStatus> parse_status(std::string_view text) noexcept {
    for (auto s : {LinkStatus::running, LinkStatus::down, LinkStatus::switching}) {
        if (to_string(s) == text) return s;
    }
    return std::nullopt;
}

double sbr_model(double base_rate_bps, double loss_db) noexcept {
    return base_rate_bps * std::pow(10.0, -loss_db / 10.0);
}

double NoiseStream::symmetric_unit() {
    // 53 random mantissa bits -> [0,1) -> [-1,1)
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
}

double qber_model(double loss_db, NoiseStream* noise, const ModelParams& params) {
    double q = params.qber_base + params.qber_slope_per_db * loss_db;
    if (noise != nullptr) q += params.qber_jitter * noise->symmetric_unit();
    return std::clamp(q, 0.0, params.qber_cap);
}

namespace {

Bytes label(std::string_view kind, const std::string& link_id, std::uint64_t index) {
    Bytes out(kind.begin(), kind.end());
    out.push_back('|');
    out.insert(out.end(), link_id.begin(), link_id.end());
    out.push_back('|');
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(index >> (8 * i)));
    return out;
}

std::uint64_t noise_seed(ByteView seed, const std::string& link_id) {
    const auto mac = hmac_sha256(seed, label("noise", link_id, 0));
    std::uint64_t s = 0;
    for (int i = 0; i < 8; ++i) s = (s << 8) | mac[static_cast<std::size_t>(i)];
    return s;
}

} // namespace

KeyBlock derive_key_block(ByteView seed, const std::string& link_id, std::uint64_t index) {
    const auto material = hmac_sha256(seed, label("key", link_id, index));
    const auto id_bytes = hmac_sha256(seed, label("id", link_id, index));
    return {Uuid::from_random(std::span<const std::uint8_t, 16>(id_bytes.data(), 16)),
            Bytes(material.begin(), material.end())};
}

LinkEmulator::LinkEmulator(Bytes seed, ModelParams params, double start_time)
    : seed_(std::move(seed)), params_(params), now_(start_time) {}

double LinkEmulator::now() const {
    std::lock_guard lock(mutex_);
    return now_;
}

void LinkEmulator::add_fiber(Fiber fiber) {
    std::lock_guard lock(mutex_);
    if (fiber.loss_db < 0.0) throw Error(Errc::reference_error, "fiber " + fiber.id + " has negative loss");
    const auto id = fiber.id;
    fibers_[id] = std::move(fiber);
}

void LinkEmulator::add_switch(const std::string& switch_id) {
    std::lock_guard lock(mutex_);
    switches_.try_emplace(switch_id);
}

void LinkEmulator::add_pair(const std::string& link_id, const PortRef& a, const PortRef& b,
                            const std::optional<std::string>& initial_fiber, double base_rate_bps) {
    std::lock_guard lock(mutex_);
    if (pairs_.contains(link_id)) throw Error(Errc::duplicate_key_id, "link " + link_id + " already exists");
    for (const auto* ref : {&a, &b}) {
        auto sw = switches_.find(ref->switch_id);
        if (sw == switches_.end()) throw Error(Errc::unknown_switch, ref->switch_id);
        if (sw->second.contains(ref->port)) throw Error(Errc::fiber_busy, ref->switch_id + "/" + ref->port + " in use");
    }
    if (initial_fiber) {
        const auto f = fibers_.find(*initial_fiber);
        if (f == fibers_.end()) throw Error(Errc::unknown_fiber, *initial_fiber);
        for (const auto* ref : {&a, &b}) {
            for (const auto& [port, fiber] : switches_[ref->switch_id]) {
                if (fiber == *initial_fiber) throw Error(Errc::fiber_busy, *initial_fiber + " at " + ref->switch_id);
            }
        }
    }
    switches_[a.switch_id][a.port] = initial_fiber;
    switches_[b.switch_id][b.port] = initial_fiber;
    Pair p{link_id, a, b, {a.switch_id, b.switch_id}, base_rate_bps, true, now_, 0.0, 0,
           NoiseStream(noise_seed(seed_, link_id))};
    pairs_.emplace(link_id, std::move(p));
}

bool LinkEmulator::has_pair(const std::string& link_id) const {
    std::lock_guard lock(mutex_);
    return pairs_.contains(link_id);
}

LinkEmulator::Pair& LinkEmulator::pair_ref(const std::string& link_id) {
    const auto it = pairs_.find(link_id);
    if (it == pairs_.end()) throw Error(Errc::unknown_link, link_id);
    return it->second;
}

const LinkEmulator::Pair& LinkEmulator::pair_ref(const std::string& link_id) const {
    const auto it = pairs_.find(link_id);
    if (it == pairs_.end()) throw Error(Errc::unknown_link, link_id);
    return it->second;
}

std::optional<std::string> LinkEmulator::common_fiber(const Pair& p) const {
    const auto& fa = switches_.at(p.a.switch_id).at(p.a.port);
    const auto& fb = switches_.at(p.b.switch_id).at(p.b.port);
    if (fa && fb && *fa == *fb) return fa;
    return std::nullopt;
}

bool LinkEmulator::path_up(const Pair& p) const {
    if (!p.enabled) return false;
    const auto f = common_fiber(p);
    return f && fibers_.at(*f).operational;
}

LinkStatus LinkEmulator::status_of(const Pair& p, double t) const {
    if (!path_up(p)) return LinkStatus::down;
    return t < p.switching_until ? LinkStatus::switching : LinkStatus::running;
}

void LinkEmulator::resync(Pair& p) {
    if (path_up(p)) p.switching_until = now_ + params_.resync_delay_s;
}

void LinkEmulator::set_cross_connect(const std::string& switch_id, const std::string& port,
                                     const std::string& fiber_id) {
    std::lock_guard lock(mutex_);
    auto sw = switches_.find(switch_id);
    if (sw == switches_.end()) throw Error(Errc::unknown_switch, switch_id);
    auto slot = sw->second.find(port);
    if (slot == sw->second.end()) throw Error(Errc::unknown_port, switch_id + "/" + port);
    const auto f = fibers_.find(fiber_id);
    if (f == fibers_.end()) throw Error(Errc::unknown_fiber, fiber_id);
    if (f->second.endpoints.first != switch_id && f->second.endpoints.second != switch_id) {
        throw Error(Errc::unknown_fiber, fiber_id + " does not terminate at " + switch_id);
    }
    for (const auto& [other, attached] : sw->second) {
        if (other != port && attached == fiber_id) {
            throw Error(Errc::fiber_busy, fiber_id + " already on " + switch_id + "/" + other);
        }
    }
    slot->second = fiber_id;
    for (auto& [id, p] : pairs_) {
        if ((p.a.switch_id == switch_id && p.a.port == port) || (p.b.switch_id == switch_id && p.b.port == port)) {
            resync(p);
        }
    }
}

void LinkEmulator::fail_fiber(const std::string& fiber_id) {
    std::lock_guard lock(mutex_);
    const auto f = fibers_.find(fiber_id);
    if (f == fibers_.end()) throw Error(Errc::unknown_fiber, fiber_id);
    f->second.operational = false;
}

void LinkEmulator::restore_fiber(const std::string& fiber_id) {
    std::lock_guard lock(mutex_);
    const auto f = fibers_.find(fiber_id);
    if (f == fibers_.end()) throw Error(Errc::unknown_fiber, fiber_id);
    if (f->second.operational) return;
    f->second.operational = true;
    for (auto& [id, p] : pairs_) {
        if (common_fiber(p) == fiber_id) resync(p);
    }
}

void LinkEmulator::stop_pair(const std::string& link_id) {
    std::lock_guard lock(mutex_);
    pair_ref(link_id).enabled = false;
}

void LinkEmulator::start_pair(const std::string& link_id) {
    std::lock_guard lock(mutex_);
    auto& p = pair_ref(link_id);
    if (p.enabled) return;
    p.enabled = true;
    resync(p);
}

StepResult LinkEmulator::step(Pair& p, double dt) {
    StepResult out;
    const double t0 = now_;
    const double t1 = now_ + dt;
    const auto fiber = common_fiber(p);
    const double loss = fiber ? fibers_.at(*fiber).loss_db : 0.0;
    const double rate = sbr_model(p.base_rate_bps, loss);

    auto& s = out.sample;
    s.link_id = p.link_id;
    s.fiber_id = fiber.value_or("");
    s.t = t0;
    s.status = status_of(p, t0);
    if (s.status == LinkStatus::running) {
        s.sbr_bps = params_.sbr_jitter > 0.0 ? rate * (1.0 + params_.sbr_jitter * p.noise.symmetric_unit()) : rate;
        s.qber = qber_model(loss, &p.noise, params_);
    }

    if (path_up(p)) {
        const double running = std::max(0.0, t1 - std::max(t0, p.switching_until));
        p.carry_bits += rate * running;
    }
    while (p.carry_bits >= static_cast<double>(kBlockBits)) {
        p.carry_bits -= static_cast<double>(kBlockBits);
        out.blocks.push_back(derive_key_block(seed_, p.link_id, p.next_block++));
    }
    return out;
}

std::vector<std::pair<std::string, StepResult>> LinkEmulator::advance(double dt) {
    if (!(dt > 0.0)) throw Error(Errc::reference_error, "step duration must be positive");
    std::lock_guard lock(mutex_);
    std::vector<std::pair<std::string, StepResult>> out;
    out.reserve(pairs_.size());
    for (auto& [id, p] : pairs_) out.emplace_back(id, step(p, dt));
    now_ += dt;
    return out;
}

LinkStatus LinkEmulator::status(const std::string& link_id) const {
    std::lock_guard lock(mutex_);
    return status_of(pair_ref(link_id), now_);
}

PairView LinkEmulator::view_of(const Pair& p) const {
    PairView v;
    v.link_id = p.link_id;
    v.endpoints = p.endpoints;
    v.ports = {p.a, p.b};
    v.fiber = common_fiber(p);
    v.loss_db = v.fiber ? fibers_.at(*v.fiber).loss_db : 0.0;
    v.base_rate_bps = p.base_rate_bps;
    v.enabled = p.enabled;
    v.status = status_of(p, now_);
    return v;
}

PairView LinkEmulator::pair(const std::string& link_id) const {
    std::lock_guard lock(mutex_);
    return view_of(pair_ref(link_id));
}

std::vector<PairView> LinkEmulator::pairs_at(const std::string& node) const {
    std::lock_guard lock(mutex_);
    std::vector<PairView> out;
    for (const auto& [id, p] : pairs_) {
        if (p.endpoints.first == node || p.endpoints.second == node) out.push_back(view_of(p));
    }
    return out;
}

std::map<std::string, std::optional<std::string>> LinkEmulator::cross_connects(const std::string& switch_id) const {
    std::lock_guard lock(mutex_);
    const auto sw = switches_.find(switch_id);
    if (sw == switches_.end()) throw Error(Errc::unknown_switch, switch_id);
    return sw->second;
}

Fiber LinkEmulator::fiber(const std::string& fiber_id) const {
    std::lock_guard lock(mutex_);
    const auto f = fibers_.find(fiber_id);
    if (f == fibers_.end()) throw Error(Errc::unknown_fiber, fiber_id);
    return f->second;
}

std::vector<Fiber> LinkEmulator::fibers() const {
    std::lock_guard lock(mutex_);
    std::vector<Fiber> out;
    for (const auto& [id, f] : fibers_) out.push_back(f);
    return out;
}

std::vector<Fiber> LinkEmulator::fibers_at(const std::string& node) const {
    std::lock_guard lock(mutex_);
    std::vector<Fiber> out;
    for (const auto& [id, f] : fibers_) {
        if (f.endpoints.first == node || f.endpoints.second == node) out.push_back(f);
    }
    return out;
}

std::uint64_t LinkEmulator::blocks_emitted(const std::string& link_id) const {
    std::lock_guard lock(mutex_);
    return pair_ref(link_id).next_block;
}

} // namespace sdqn::link
