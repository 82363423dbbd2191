#ifndef NETFENCE_CHANNELS_HPP
#define NETFENCE_CHANNELS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "netfence/params.hpp"
#include "netfence/rng.hpp"
#include "netfence/types.hpp"

namespace netfence {

enum class EnqResult : uint8_t { enqueued, dropped };

// RED queue for the regular channel. Each queue also carries the
// monitoring-cycle state of the traffic it polices (loss EWMA, mon
// timestamps, decr-stamping window), so that in per-AS fallback mode a
// well-behaved AS's window can go quiet independently of a flooding one.
template <typename PacketT>
class RedQueue {
public:
    RedQueue() = default;
    RedQueue(double link_bps, const Params& p)
        : qlim_(p.qlim_bytes(link_bps)), minth_(p.red_minthresh(link_bps)),
          maxth_(p.red_maxthresh(link_bps)), wq_(p.red_wq), maxp_(p.red_max_p) {}

    EnqResult enqueue(PacketT pkt, double now, Rng& rng) {
        uint32_t len = pkt.wire_len();
        avg_ = (1.0 - wq_) * avg_ + wq_ * double(bytes_);
        bool drop = false;
        if (double(bytes_) + len > qlim_) {
            drop = true;  // hard limit on the instantaneous queue
        } else if (avg_ > maxth_) {
            drop = true;
        } else if (avg_ >= minth_) {
            double p = maxp_ * (avg_ - minth_) / (maxth_ - minth_);
            drop = rng.bernoulli(p);
        }
        if (drop) {
            interval_drops_++;
            congestion_last_ = now;
            ever_congested_ = true;
            return EnqResult::dropped;
        }
        q_.push_back(std::move(pkt));
        bytes_ += len;
        return EnqResult::enqueued;
    }

    std::optional<PacketT> dequeue() {
        if (q_.empty()) return std::nullopt;
        PacketT pkt = std::move(q_.front());
        q_.pop_front();
        bytes_ -= pkt.wire_len();
        interval_deques_++;
        return pkt;
    }

    const PacketT* front() const { return q_.empty() ? nullptr : &q_.front(); }
    bool empty() const { return q_.empty(); }
    uint64_t bytes() const { return bytes_; }
    double avg() const { return avg_; }
    double drop_ewma() const { return drop_ewma_; }
    bool mon_active() const { return mon_since_ >= 0.0; }
    double mon_since() const { return mon_since_; }
    double last_attack() const { return last_attack_; }

    // decr feedback keeps being stamped until two control intervals after
    // the most recent congestion event
    bool in_decr_window(double now, double i_lim) const {
        return ever_congested_ && now <= congestion_last_ + 2.0 * i_lim;
    }
    double congestion_last() const { return congestion_last_; }

    // Loss-EWMA attack detection, run once per detection interval. With no
    // dequeues in the interval the EWMA is left unchanged.
    void detection_tick(double now, double p_th, double t_b) {
        if (interval_deques_ > 0) {
            apply_loss_sample(double(interval_drops_) / double(interval_deques_),
                              now, p_th, t_b);
        } else {
            apply_loss_sample_keep_ewma(now, p_th, t_b);
        }
        interval_drops_ = 0;
        interval_deques_ = 0;
    }

    void apply_loss_sample(double dr, double now, double p_th, double t_b) {
        drop_ewma_ = 0.9 * drop_ewma_ + 0.1 * dr;
        apply_loss_sample_keep_ewma(now, p_th, t_b);
    }

    void refresh_attack(double now) {  // utilization-based detection hook
        if (mon_since_ < 0.0) mon_since_ = now;
        last_attack_ = now;
    }

    // Fallback queues start from the parent's monitoring state.
    void seed_from(const RedQueue& parent) {
        avg_ = 0.0;
        drop_ewma_ = parent.drop_ewma_;
        mon_since_ = parent.mon_since_;
        last_attack_ = parent.last_attack_;
        congestion_last_ = parent.congestion_last_;
        ever_congested_ = parent.ever_congested_;
    }

    void scale_limits(double factor) {
        qlim_ *= factor;
        minth_ *= factor;
        maxth_ *= factor;
    }

    void set_drop_ewma_for_test(double v) { drop_ewma_ = v; }
    void set_avg_for_test(double v) { avg_ = v; }

private:
    void apply_loss_sample_keep_ewma(double now, double p_th, double t_b) {
        if (drop_ewma_ > p_th) {
            if (mon_since_ < 0.0) mon_since_ = now;
            last_attack_ = now;
        } else if (mon_since_ >= 0.0 && now - last_attack_ > t_b) {
            mon_since_ = -1.0;
        }
    }

    std::deque<PacketT> q_;
    uint64_t bytes_ = 0;
    double qlim_ = 0, minth_ = 0, maxth_ = 0, wq_ = 0.1, maxp_ = 0.1;
    double avg_ = 0;
    uint64_t interval_drops_ = 0, interval_deques_ = 0;
    double drop_ewma_ = 0;
    double mon_since_ = -1.0;
    double last_attack_ = -1.0;
    double congestion_last_ = -1e18;
    bool ever_congested_ = false;
};

enum class Channel : uint8_t { request, regular, legacy };

// Output link discipline: strict priority among request levels (higher
// first) under a hard 5% share, then the regular channel, legacy last.
// In per-AS fallback mode the regular channel becomes a DRR ring of
// per-source-AS RED queues with equal quanta.
template <typename PacketT>
class LinkChannels {
public:
    LinkChannels() = default;
    LinkChannels(double link_bps, const Params& p) : bps_(link_bps), p_(p) {
        regular_.emplace_back(link_bps, p);
        req_budget_ = p.request_frac * link_bps * p.request_window / 8.0;
        legacy_cap_ = p.qlim_bytes(link_bps);
        level_cap_ = 16384.0;
    }

    struct Picked {
        PacketT pkt;
        Channel channel;
        uint32_t queue = 0;  // regular queue index (AS slot in fallback)
    };

    EnqResult enqueue_request(PacketT pkt, uint32_t level, double /*now*/) {
        level = std::min<uint32_t>(level, 15);
        auto& q = request_[level];
        if (req_level_bytes_[level] + pkt.wire_len() > level_cap_)
            return EnqResult::dropped;
        req_level_bytes_[level] += pkt.wire_len();
        q.push_back(std::move(pkt));
        return EnqResult::enqueued;
    }

    EnqResult enqueue_regular(PacketT pkt, uint32_t as_slot, double now, Rng& rng) {
        uint32_t idx = fallback_ ? slot_index(as_slot) : 0;
        auto r = regular_[idx].enqueue(std::move(pkt), now, rng);
        if (r == EnqResult::enqueued && fallback_ && !drr_active_[idx]) {
            drr_active_[idx] = true;
            drr_ring_.push_back(idx);
        }
        return r;
    }

    EnqResult enqueue_legacy(PacketT pkt, double /*now*/) {
        if (legacy_bytes_ + pkt.wire_len() > legacy_cap_) return EnqResult::dropped;
        legacy_bytes_ += pkt.wire_len();
        legacy_.push_back(std::move(pkt));
        return EnqResult::enqueued;
    }

    // Selects the next packet to transmit, honoring the request cap over
    // fixed accounting windows. At most one packet per window may overrun
    // an exhausted budget so small links stay live.
    std::optional<Picked> pick(double now) {
        roll_window(now);
        for (int lvl = 15; lvl >= 0; lvl--) {
            auto& q = request_[lvl];
            if (q.empty()) continue;
            uint32_t len = q.front().wire_len();
            if (req_window_bytes_ > 0 && req_window_bytes_ + len > req_budget_)
                break;  // over budget; fall through to regular/legacy
            req_window_bytes_ += len;
            Picked p{std::move(q.front()), Channel::request, 0};
            q.pop_front();
            req_level_bytes_[lvl] -= len;
            return p;
        }
        if (!fallback_) {
            if (auto pkt = regular_[0].dequeue())
                return Picked{std::move(*pkt), Channel::regular, 0};
        } else if (auto p = drr_pick()) {
            return p;
        }
        if (!legacy_.empty()) {
            Picked p{std::move(legacy_.front()), Channel::legacy, 0};
            legacy_.pop_front();
            legacy_bytes_ -= p.pkt.wire_len();
            return p;
        }
        return std::nullopt;
    }

    // When only the request channel is backlogged but its budget is spent,
    // transmission resumes at the next accounting window.
    double next_wake(double now) const {
        for (const auto& q : request_)
            if (!q.empty())
                return (std::floor(now / p_.request_window) + 1.0) * p_.request_window;
        return std::numeric_limits<double>::quiet_NaN();
    }

    bool request_backlog() const {
        for (const auto& q : request_)
            if (!q.empty()) return true;
        return false;
    }
    bool regular_backlog() const {
        for (const auto& q : regular_)
            if (!q.empty()) return true;
        return false;
    }
    bool empty() const {
        return !request_backlog() && !regular_backlog() && legacy_.empty();
    }

    uint64_t backlog_bytes() const {
        uint64_t b = uint64_t(legacy_bytes_);
        for (const auto& q : request_)
            for (const auto& p : q) b += p.wire_len();
        for (const auto& q : regular_) b += q.bytes();
        return b;
    }

    // Enables per-source-AS queuing; existing backlog stays in queue 0
    // (which the first AS takes over), new arrivals are separated. Queue
    // caps shrink so aggregate buffering is unchanged.
    void enable_fallback(const std::vector<uint32_t>& as_slots, double /*now*/) {
        if (fallback_) return;
        fallback_ = true;
        slot_of_.clear();
        fb_share_ = 1.0 / double(std::max<size_t>(as_slots.size(), 1));
        bool first = true;
        for (uint32_t as : as_slots) {
            if (slot_of_.count(as)) continue;
            uint32_t idx;
            if (first) {
                idx = 0;
                first = false;
            } else {
                regular_.emplace_back(bps_, p_);
                idx = uint32_t(regular_.size() - 1);
                regular_[idx].seed_from(regular_[0]);
            }
            slot_of_[as] = idx;
        }
        for (auto& q : regular_) q.scale_limits(fb_share_);
        drr_deficit_.assign(regular_.size(), 0.0);
        drr_active_.assign(regular_.size(), false);
        drr_ring_.clear();
        for (uint32_t i = 0; i < regular_.size(); i++) {
            if (!regular_[i].empty()) {
                drr_active_[i] = true;
                drr_ring_.push_back(i);
            }
        }
    }

    bool fallback_enabled() const { return fallback_; }
    uint32_t queue_for_as(uint32_t as_slot) { return fallback_ ? slot_index(as_slot) : 0; }

    std::vector<RedQueue<PacketT>>& regular_queues() { return regular_; }
    const std::vector<RedQueue<PacketT>>& regular_queues() const { return regular_; }

    bool any_mon(double /*now*/) const {
        for (const auto& q : regular_)
            if (q.mon_active()) return true;
        return false;
    }

    uint64_t request_bytes_window() const { return uint64_t(req_window_bytes_); }

private:
    uint32_t slot_index(uint32_t as_slot) {
        auto it = slot_of_.find(as_slot);
        if (it != slot_of_.end()) return it->second;
        regular_.emplace_back(bps_, p_);
        regular_.back().seed_from(regular_[0]);
        regular_.back().scale_limits(fb_share_);
        uint32_t idx = uint32_t(regular_.size() - 1);
        slot_of_[as_slot] = idx;
        drr_deficit_.push_back(0.0);
        drr_active_.push_back(false);
        return idx;
    }

    std::optional<Picked> drr_pick() {
        size_t guard = drr_ring_.size() + 1;
        while (!drr_ring_.empty() && guard--) {
            uint32_t idx = drr_ring_.front();
            auto& q = regular_[idx];
            if (q.empty()) {
                drr_ring_.pop_front();
                drr_active_[idx] = false;
                drr_deficit_[idx] = 0.0;
                guard = drr_ring_.size() + 1;
                continue;
            }
            if (drr_deficit_[idx] < double(q.front()->wire_len())) {
                drr_deficit_[idx] += double(p_.mtu);
                drr_ring_.pop_front();
                drr_ring_.push_back(idx);
                continue;
            }
            auto pkt = q.dequeue();
            drr_deficit_[idx] -= double(pkt->wire_len());
            if (q.empty()) {
                drr_ring_.pop_front();
                drr_active_[idx] = false;
                drr_deficit_[idx] = 0.0;
            }
            return Picked{std::move(*pkt), Channel::regular, idx};
        }
        return std::nullopt;
    }

    void roll_window(double now) {
        uint64_t w = uint64_t(std::floor(now / p_.request_window));
        if (w != req_window_idx_) {
            req_window_idx_ = w;
            req_window_bytes_ = 0;
        }
    }

    double bps_ = 0;
    Params p_;
    std::array<std::deque<PacketT>, 16> request_;
    std::array<double, 16> req_level_bytes_{};
    double level_cap_ = 16384.0;
    std::vector<RedQueue<PacketT>> regular_;
    std::deque<PacketT> legacy_;
    double legacy_bytes_ = 0, legacy_cap_ = 0;
    double req_budget_ = 0;
    double req_window_bytes_ = 0;
    uint64_t req_window_idx_ = ~0ULL;
    bool fallback_ = false;
    double fb_share_ = 1.0;
    std::map<uint32_t, uint32_t> slot_of_;
    std::vector<double> drr_deficit_;
    std::vector<bool> drr_active_;
    std::deque<uint32_t> drr_ring_;
};

} // namespace netfence

#endif
