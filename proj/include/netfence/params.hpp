#ifndef NETFENCE_PARAMS_HPP
#define NETFENCE_PARAMS_HPP

#include <cstdint>

namespace netfence {

// Protocol parameters. Defaults follow the reference parameter table;
// Q_lim and the RED thresholds are per-link and derived from capacity
// via the *_frac fields.
struct Params {
    double l1_tokens_per_s = 1000.0;   // level-1 request rate: one token per ms
    double token_depth     = 100.0;    // request token bucket depth
    double i_lim           = 2.0;      // rate limiter control interval (s)
    double w               = 4.0;      // feedback expiration time (s)
    double delta_ai_bps    = 12000.0;  // additive increase step
    double delta_md        = 0.1;      // multiplicative decrease factor
    double p_th            = 0.02;     // loss rate threshold for attack detection
    double qlim_s          = 0.2;      // max queue: qlim_s * link bw
    double red_min_frac    = 0.5;      // minthresh = frac * Q_lim
    double red_max_frac    = 0.75;     // maxthresh = frac * Q_lim
    double red_wq          = 0.1;      // EWMA weight for avg queue length
    double red_max_p       = 0.1;      // RED drop probability at maxthresh
    double t_a             = 600.0;    // rate limiter idle termination (desk-scaled)
    double t_b             = 600.0;    // monitoring cycle termination (desk-scaled)
    double request_frac    = 0.05;     // request channel share of link capacity
    double request_window  = 0.1;      // request channel accounting window (s)
    double detect_interval = 1.0;      // attack detection tick period (s)
    double max_cache_delay = 1.0;      // rate limiter cache drop bound (s of service)
    double init_rate_bps   = 64000.0;  // initial rate limit of a fresh limiter
    double rate_floor_bps  = 1000.0;   // rate limit never decays below this
    double key_rotation_s  = 16.0;     // access key epoch length (4*w)
    double infer_stale_s   = 20.0;     // inference cache staleness window (10*I_lim)
    uint32_t max_priority  = 15;       // highest request priority level
    uint32_t mtu           = 1500;     // regular packet size incl. headers
    uint32_t small_pkt     = 92;       // request/ack/feedback packet size
    bool util_detection    = false;    // also enter mon on 95% utilization EWMA
    double util_th         = 0.95;

    double red_minthresh(double link_bps) const { return red_min_frac * qlim_bytes(link_bps); }
    double red_maxthresh(double link_bps) const { return red_max_frac * qlim_bytes(link_bps); }
    double qlim_bytes(double link_bps) const { return qlim_s * link_bps / 8.0; }
};

} // namespace netfence

#endif
