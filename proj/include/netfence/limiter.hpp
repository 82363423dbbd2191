#ifndef NETFENCE_LIMITER_HPP
#define NETFENCE_LIMITER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>

#include "netfence/params.hpp"
#include "netfence/types.hpp"

namespace netfence {

// Per-sender token bucket for request packets. Admitting a level-k packet
// costs 2^(k-1) tokens; level 0 is never rate limited. The drop check uses
// the uncapped accrual since the last admitted packet, so a sender that
// waited long enough can always afford a high level; the depth cap applies
// only to the balance carried forward.
class RequestLimiter {
public:
    RequestLimiter() = default;
    RequestLimiter(double refill_per_s, double depth, double now)
        : refill_(refill_per_s), depth_(depth), last_refill_(now) {}

    bool police(uint32_t level, double now) {
        if (level == 0) return true;
        double avail = tokens_ + (now - last_refill_) * refill_;
        double cost = std::ldexp(1.0, int(level) - 1);  // 2^(k-1)
        if (cost > avail) return false;
        avail = std::min(avail, depth_);
        tokens_ = std::max(0.0, avail - cost);
        last_refill_ = now;
        return true;
    }

    double tokens(double now) const {
        return std::min(depth_, tokens_ + (now - last_refill_) * refill_);
    }
    void set_tokens(double t, double now) {
        tokens_ = t;
        last_refill_ = now;
    }

private:
    double refill_ = 1000.0;
    double depth_ = 100.0;
    double tokens_ = 0.0;
    double last_refill_ = 0.0;
};

enum class PoliceVerdict : uint8_t { pass, cached, drop };

struct AdjustOutcome {
    bool increased = false;
    bool decreased = false;
    double rate = 0;
    double throughput_bps = 0;
};

// Per-(sender, bottleneck link) rate limiter: a queue drained at the rate
// limit (leaky bucket), plus the AIMD bookkeeping driven by validated
// feedback. The template parameter is the cached packet type; it only
// needs a wire_len() in bytes.
//
// Egress is counted when a packet actually departs, so cached bytes are
// never double counted in the throughput used by the adjustment rule.
template <typename PacketT>
class RateLimiter {
public:
    RateLimiter() = default;
    RateLimiter(double now, const Params& p)
        : rate_(p.init_rate_bps), floor_(p.rate_floor_bps), incr_(p.delta_ai_bps),
          decr_(p.delta_md), interval_(p.i_lim), max_delay_(p.max_cache_delay),
          t_s_(std::floor(now)), last_depart_(now - 1e9), vc_last_release_(now - 1e9),
          last_decr_seen_(now), last_drop_(-1e18), created_(now) {}

    double rate() const { return rate_; }
    double interval_start() const { return t_s_; }
    bool has_incr() const { return has_incr_; }
    size_t cache_packets() const { return cache_.size(); }
    uint64_t cache_bytes() const { return cache_bytes_; }
    uint64_t interval_bytes() const { return interval_bytes_; }

    // Records feedback observed on a packet this limiter polices.
    // own_link: the feedback names this limiter's bottleneck.
    void update_status(FbAction action, bool own_link, uint32_t pkt_ts, double now) {
        if (own_link) {
            is_active_ = true;
            if (action == FbAction::incr) {
                if (double(pkt_ts) >= t_s_) has_incr_ = true;
            } else {
                last_decr_seen_ = now;
            }
        } else {
            is_active_star_ = true;
            if (action == FbAction::incr && double(pkt_ts) >= t_s_)
                has_incr_star_ = true;
        }
    }

    // Leaky-bucket admission (queue drained at the rate limit). PASS only
    // when the bucket is idle and the inter-departure spacing is already
    // met; otherwise cache a copy, unless the projected cache delay
    // exceeds the drop bound. The caller keeps the packet on pass.
    PoliceVerdict police(const PacketT& pkt, double now) {
        uint32_t len = pkt.wire_len();
        if (cache_.empty() && (now - last_depart_) * rate_ >= double(len) * 8.0) {
            last_depart_ = now;
            interval_bytes_ += len;
            return PoliceVerdict::pass;
        }
        double backlog_service = double(cache_bytes_ + len) * 8.0 / rate_;
        if (backlog_service > max_delay_) {
            last_drop_ = now;
            return PoliceVerdict::drop;
        }
        cache_.push_back(pkt);
        cache_bytes_ += len;
        return PoliceVerdict::cached;
    }

    // Time the head of the cache is allowed to depart; NaN when idle.
    double next_unleash_time() const {
        if (cache_.empty()) return std::numeric_limits<double>::quiet_NaN();
        return last_depart_ + double(cache_.front().wire_len()) * 8.0 / rate_;
    }

    std::optional<PacketT> unleash(double now) {
        if (cache_.empty()) return std::nullopt;
        PacketT pkt = std::move(cache_.front());
        cache_.pop_front();
        cache_bytes_ -= pkt.wire_len();
        last_depart_ = now;
        interval_bytes_ += pkt.wire_len();
        return pkt;
    }

    // Virtual-clock admission used when one packet must clear several
    // limiters at once: departure_i = max(now, departure_{i-1} + len/rate),
    // the same spacing the queued leaky bucket produces. The packet's
    // dwell time is candidate - now.
    double release_candidate(uint32_t len, double now) const {
        return std::max(now, vc_last_release_ + double(len) * 8.0 / rate_);
    }
    void commit_release(uint32_t len, double now) {
        vc_last_release_ = release_candidate(len, now);
        pending_release_ += len;
    }
    void on_released(uint32_t len) {
        interval_bytes_ += len;
        if (pending_release_ >= len) pending_release_ -= len;
    }
    void note_drop(double now) { last_drop_ = now; }

    // End-of-interval rate adjustment. Core rule: additive increase only
    // when fresh incr feedback was seen and the interval throughput
    // exceeded half the limit, multiplicative decrease otherwise. The
    // extended rule set additionally credits incr feedback from other
    // bottlenecks and holds the rate when only foreign feedback was seen.
    AdjustOutcome adjust(double now, bool extended_rules = false) {
        AdjustOutcome out;
        out.throughput_bps = double(interval_bytes_) * 8.0 / interval_;
        double old = rate_;
        if (!extended_rules) {
            if (has_incr_) {
                if (out.throughput_bps > rate_ / 2.0) rate_ += incr_;
            } else {
                rate_ *= (1.0 - decr_);
            }
        } else {
            if (has_incr_ || has_incr_star_) {
                if (out.throughput_bps >= rate_ / 2.0) rate_ += incr_;
            } else if (is_active_) {
                rate_ *= (1.0 - decr_);
            } else if (is_active_star_) {
                // held: this bottleneck's feedback was masked by another
            } else {
                rate_ *= (1.0 - decr_);
            }
        }
        rate_ = std::max(rate_, floor_);
        out.increased = rate_ > old;
        out.decreased = rate_ < old;
        out.rate = rate_;
        has_incr_ = has_incr_star_ = is_active_ = is_active_star_ = false;
        t_s_ = std::floor(now);
        interval_bytes_ = 0;
        return out;
    }

    // Idle termination rule: no decr feedback seen and nothing discarded
    // for t_a seconds.
    bool expired(double now, double t_a) const {
        return now - std::max(last_decr_seen_, last_drop_) > t_a;
    }

    double created() const { return created_; }
    double last_activity() const { return std::max(last_decr_seen_, last_drop_); }

private:
    double rate_ = 64000.0;
    double floor_ = 1000.0;
    double incr_ = 12000.0;
    double decr_ = 0.1;
    double interval_ = 2.0;
    double max_delay_ = 1.0;
    double t_s_ = 0.0;
    bool has_incr_ = false;
    bool has_incr_star_ = false;
    bool is_active_ = false;
    bool is_active_star_ = false;
    std::deque<PacketT> cache_;
    uint64_t cache_bytes_ = 0;
    uint64_t interval_bytes_ = 0;
    uint64_t pending_release_ = 0;
    double last_depart_ = 0.0;
    double vc_last_release_ = 0.0;
    double last_decr_seen_ = 0.0;
    double last_drop_ = -1e18;
    double created_ = 0.0;
};

} // namespace netfence

#endif
