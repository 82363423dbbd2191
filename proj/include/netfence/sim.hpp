#ifndef NETFENCE_SIM_HPP
#define NETFENCE_SIM_HPP

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "netfence/channels.hpp"
#include "netfence/crypto.hpp"
#include "netfence/limiter.hpp"
#include "netfence/metrics.hpp"
#include "netfence/multipath.hpp"
#include "netfence/params.hpp"
#include "netfence/rng.hpp"
#include "netfence/scenario.hpp"
#include "netfence/types.hpp"
#include "netfence/wire.hpp"

// Deterministic discrete-event simulator of the congestion-policing
// architecture: hosts attach to access routers, which validate and stamp
// feedback and police senders; transit links run the three-channel
// discipline and update feedback while monitored. Events execute in
// (time, insertion) order; all randomness derives from the scenario seed.

namespace netfence::sim {

// transport flags
enum : uint8_t {
    TF_NONE = 0,
    TF_SYN = 1,
    TF_SYNACK = 2,
    TF_ACK = 3,
    TF_DATA = 4,
    TF_FB = 5,     // dedicated feedback carrier for one-way flows
    TF_PROBE = 6,  // request probe to (re)acquire feedback
};

enum class PktType : uint8_t { request, regular, legacy };

struct Packet {
    uint64_t id = 0;
    Addr src = 0, dst = 0;
    AsId src_as = 0;
    uint16_t len = 0;
    PktType type = PktType::request;
    uint8_t priority = 0;
    bool policed = false;  // passed its source access router

    bool has_fb = false;
    crypto::Feedback fwd;

    bool has_ret = false;
    FbMode ret_mode = FbMode::nop;
    FbAction ret_action = FbAction::incr;
    uint8_t ret_ts2 = 0;
    uint64_t ret_mac = 0;
    LinkId ret_link = 0;

    bool has_mfb = false;  // multi-bottleneck variant
    multipath::MultiFeedback mfb;
    bool has_ret_mfb = false;
    multipath::MultiFeedback ret_mfb;
    uint8_t ret_mts2 = 0;

    // the limiter set that admitted this packet (multi policing)
    std::array<LinkId, 8> police_set{};
    uint8_t police_n = 0;

    // transport
    uint8_t tf = TF_NONE;
    uint32_t flow = 0;
    uint64_t seq = 0, ack = 0;
    uint32_t payload = 0;

    uint32_t wire_len() const { return len; }
};

enum class Ev : uint8_t {
    arrive,
    link_ready,
    link_wake,
    unleash,
    release,
    adjust,
    mon_tick,
    host_timer,
    rotate_keys,
    metrics_tick,
    gc_tick,
};

// host timer codes
enum : uint32_t { HT_APP = 0, HT_RTO = 1, HT_FB = 2, HT_NEXT_TRANSFER = 3 };

struct Event {
    double t = 0;
    uint64_t seq = 0;
    Ev kind = Ev::arrive;
    uint32_t a = 0, b = 0;
    uint64_t c = 0;
    Packet pkt;
};

struct EvAfter {
    bool operator()(const Event& x, const Event& y) const {
        if (x.t != y.t) return x.t > y.t;
        return x.seq > y.seq;
    }
};

enum class NodeKind : uint8_t { host, access, core };
enum class RxKind : uint8_t { none, victim, colluder };

struct FbSlot {
    bool has = false;
    crypto::Feedback fb;
};
struct MSlot {
    bool has = false;
    multipath::MultiFeedback m;
};

// Feedback a sender can present toward one destination.
struct PresentStore {
    FbSlot incr;       // freshest incr
    FbSlot prev_incr;  // the incr before the freshest (stale-replay strategies)
    FbSlot any;        // freshest of anything
    MSlot m_clean;     // freshest multi without decr entries
    MSlot m_any;
};

// Freshest forward feedback observed from one peer, to be echoed back.
struct ReturnStore {
    FbSlot latest;
    FbSlot incr;
    FbSlot stale_incr;  // oldest still-valid incr
    MSlot m_latest;
    MSlot m_clean;
    double last_rx = -1;
    bool wants_fb = false;  // peer runs a one-way protocol
};

struct RcvFlow {
    uint64_t rcv_nxt = 0;
    std::map<uint64_t, uint64_t> ooo;
};

struct TcpConn {
    enum class St : uint8_t { closed, syn_sent, est } st = St::closed;
    uint32_t serial = 0;  // distinguishes packets of successive transfers
    uint64_t snd_una = 0, snd_nxt = 0;
    double cwnd = 0, ssthresh = 1e18;
    uint32_t dupacks = 0;
    uint64_t recover = 0;
    bool in_recovery = false;
    double srtt = -1, rttvar = 0, rto = 3.0;
    int syn_retx = 0;
    uint64_t file_bytes = 0;  // 0 = long-running
    double xfer_start = 0;
    uint32_t rto_gen = 0;
    uint64_t sample_end = 0;
    double sample_t = -1;
    bool pending_rtx = false;  // a retransmission is owed but was blocked
};

struct HostState {
    uint32_t node = 0;
    AsId as = 0;
    uint32_t gw = 0;  // access router node
    Role role = Role::tcp;
    RxKind rx = RxKind::none;
    bool is_sender = false;
    bool legit = false;
    Addr dst = 0;
    Rng rng;

    // request escalation
    double last_req_sent = -1;
    double next_req_ok = 0;
    double req_backoff = 1.0;

    // app model
    double rate_bps = 0;
    double pkt_interval = 0;
    double next_app = 0;
    double on_len = 0, off_len = 0, phase0 = 0;
    uint32_t req_level = 0;
    double gap_s = 0.5;
    uint64_t file_bytes = 0;

    TcpConn conn;
    std::map<Addr, PresentStore> present;
    std::map<Addr, ReturnStore> ret;
    std::map<Addr, RcvFlow> flows;
    bool capability = false;
};

struct LimiterEntry {
    RateLimiter<Packet> rl;
    uint32_t gen = 0;
};

struct RouterState {
    uint32_t node = 0;
    AsId as = 0;
    bool is_access = false;
    bool compromised = false;
    crypto::KeyRegistry reg;
    std::map<Addr, RequestLimiter> req_limiters;
    std::map<uint64_t, LimiterEntry> limiters;  // sender<<32 | link
    multipath::InferenceCache infer{20.0};
};

// Per-sender DRR used by the fair-queuing baseline.
struct DrrFifo {
    std::map<Addr, std::deque<Packet>> q;
    std::map<Addr, double> deficit;
    std::deque<Addr> ring;
    uint64_t bytes = 0;
    double per_queue_cap = 30000;
    double quantum = 1500;

    bool enqueue(Packet&& p) {
        auto& dq = q[p.src];
        double qb = 0;
        for (const auto& x : dq) qb += x.wire_len();
        if (qb + p.wire_len() > per_queue_cap) return false;
        if (dq.empty()) ring.push_back(p.src);
        bytes += p.wire_len();
        dq.push_back(std::move(p));
        return true;
    }
    std::optional<Packet> dequeue() {
        size_t guard = ring.size() + 1;
        while (!ring.empty() && guard--) {
            Addr a = ring.front();
            auto& dq = q[a];
            if (dq.empty()) {
                ring.pop_front();
                deficit[a] = 0;
                guard = ring.size() + 1;
                continue;
            }
            if (deficit[a] < double(dq.front().wire_len())) {
                deficit[a] += quantum;
                ring.pop_front();
                ring.push_back(a);
                continue;
            }
            Packet p = std::move(dq.front());
            dq.pop_front();
            deficit[a] -= double(p.wire_len());
            bytes -= p.wire_len();
            if (dq.empty()) {
                ring.pop_front();
                deficit[a] = 0;
            }
            return p;
        }
        return std::nullopt;
    }
    bool empty() const { return bytes == 0; }
};

struct LinkState {
    uint32_t id = 0;
    uint32_t from = 0, to = 0;
    double bps = 0;  // 0 = delay-only link with no queueing
    double delay = 0.01;
    bool busy = false;
    uint32_t wake_gen = 0;
    std::unique_ptr<LinkChannels<Packet>> ch;  // policing disciplines
    std::deque<Packet> fifo;                   // droptail baseline
    uint64_t fifo_bytes = 0;
    double fifo_cap = 0;
    std::unique_ptr<DrrFifo> drr;  // fq-drr baseline
    Rng rng;
    bool is_bottleneck = false;
    std::string label;
    // accounting
    uint64_t tx_bits_total = 0, tx_bits_interval = 0, tx_bits_window = 0;
    uint64_t enq_bytes = 0, deq_bytes = 0, drop_bytes = 0;
    double util_ewma = 0;
    double mon_started = -1;
};

struct LinkAudit {
    std::string label;
    uint64_t enqueued = 0, dequeued = 0, dropped = 0, resident = 0;
};

class Simulator {
public:
    explicit Simulator(const Scenario& sc) : sc_(sc) { build(); }

    Metrics run() {
        schedule(0.0, Ev::metrics_tick, 0, 0, 0);
        schedule(0.0, Ev::rotate_keys, 0, 0, 0);
        for (uint32_t li = 0; li < links_.size(); li++)
            if (links_[li].bps > 0) schedule(sc_.params.detect_interval, Ev::mon_tick, li, 0, 0);
        for (auto& r : routers_)
            if (r.is_access) schedule(30.0, Ev::gc_tick, r.node, 0, 0);
        start_traffic();

        while (!q_.empty()) {
            Event ev = q_.top();
            q_.pop();
            if (ev.t > sc_.duration) break;
            assert(ev.t + 1e-9 >= now_);
            now_ = std::max(now_, ev.t);
            dispatch(ev);
        }
        return finish();
    }

    // test hooks
    const std::vector<LinkAudit>& link_audits() const { return audits_; }

private:
    // ------------------------------------------------------------------
    // construction
    // ------------------------------------------------------------------

    uint32_t add_node(NodeKind k, AsId as) {
        kinds_.push_back(k);
        node_as_.push_back(as);
        node_state_idx_.push_back(0);
        return uint32_t(kinds_.size() - 1);
    }

    uint32_t add_host(AsId as, uint32_t gw) {
        uint32_t n = add_node(NodeKind::host, as);
        HostState h;
        h.node = n;
        h.as = as;
        h.gw = gw;
        h.rng = Rng(sc_.seed, 0x1000000ULL + n);
        node_state_idx_[n] = uint32_t(hosts_.size());
        host_index_[n] = uint32_t(hosts_.size());
        hosts_.push_back(std::move(h));
        return n;
    }

    uint32_t add_router(AsId as, bool access) {
        uint32_t n = add_node(access ? NodeKind::access : NodeKind::core, as);
        RouterState r;
        r.node = n;
        r.as = as;
        r.is_access = access;
        r.reg = crypto::KeyRegistry(as, splitmix64(sc_.seed ^ (0xabcdULL + n)), pair_keys_);
        r.infer = multipath::InferenceCache(sc_.params.infer_stale_s);
        node_state_idx_[n] = uint32_t(routers_.size());
        routers_.push_back(std::move(r));
        return n;
    }

    uint32_t add_link(uint32_t from, uint32_t to, double bps, const std::string& label = "") {
        LinkState l;
        l.id = uint32_t(links_.size());
        l.from = from;
        l.to = to;
        l.bps = bps;
        l.delay = sc_.link_delay;
        l.rng = Rng(sc_.seed, 0x2000000ULL + l.id);
        l.label = label.empty() ? "link:" + std::to_string(l.id) : label;
        if (bps > 0) {
            switch (sc_.policy) {
                case Policy::core:
                case Policy::b1:
                case Policy::b2:
                    l.ch = std::make_unique<LinkChannels<Packet>>(bps, sc_.params);
                    break;
                case Policy::droptail:
                    l.fifo_cap = sc_.params.qlim_bytes(bps);
                    break;
                case Policy::fq_drr:
                    l.drr = std::make_unique<DrrFifo>();
                    l.drr->per_queue_cap =
                        std::max(4500.0, sc_.params.qlim_bytes(bps) / 50.0);
                    break;
            }
        }
        links_.push_back(std::move(l));
        return uint32_t(links_.size() - 1);
    }

    void add_duplex(uint32_t a, uint32_t b, double bps, const std::string& label = "") {
        add_link(a, b, bps, label.empty() ? "" : label + ">");
        add_link(b, a, bps, label.empty() ? "" : label + "<");
    }

    struct Site {
        uint32_t victim_host = 0;
        std::vector<uint32_t> colluders;
    };

    Site build_site(uint32_t attach_router, AsId base_as, const std::string& tag) {
        Site s;
        uint32_t vr = add_router(base_as, true);
        add_duplex(vr, attach_router, 0);
        s.victim_host = add_host(base_as, vr);
        add_duplex(s.victim_host, vr, 0);
        hosts_[node_state_idx_[s.victim_host]].rx = RxKind::victim;
        hosts_[node_state_idx_[s.victim_host]].capability = sc_.victim_capability;
        for (uint32_t i = 0; i < sc_.colluder_as_count; i++) {
            AsId cas = AsId(base_as + 1 + i);
            uint32_t ar = add_router(cas, true);
            add_duplex(ar, attach_router, 0);
            uint32_t c = add_host(cas, ar);
            add_duplex(c, ar, 0);
            hosts_[node_state_idx_[c]].rx = RxKind::colluder;
            s.colluders.push_back(c);
        }
        (void)tag;
        return s;
    }

    void place_group_hosts(const GroupSpec& g, const std::vector<uint32_t>& access_routers,
                           const Site& site, uint32_t group_index) {
        for (uint32_t i = 0; i < g.count; i++) {
            uint32_t ar = access_routers[i % access_routers.size()];
            uint32_t hn = add_host(routers_[node_state_idx_[ar]].as, ar);
            add_duplex(hn, ar, 0);
            HostState& h = hosts_[node_state_idx_[hn]];
            h.role = g.role;
            h.is_sender = true;
            h.legit = role_is_legitimate(g.role);
            h.rate_bps = g.rate_bps;
            h.on_len = g.t_on;
            h.off_len = g.t_off;
            h.req_level = std::min(g.level, sc_.params.max_priority);
            h.gap_s = g.gap_s;
            h.file_bytes = uint64_t(g.file_kb) * 1024;
            if (g.to_colluder && !site.colluders.empty()) {
                uint32_t c = site.colluders[(group_index + i) % site.colluders.size()];
                h.dst = c;
            } else {
                h.dst = site.victim_host;
            }
            if (g.compromised_as)
                routers_[node_state_idx_[ar]].compromised = true;
            senders_.push_back(hn);
        }
    }

    void build() {
        pair_keys_ = std::make_shared<crypto::KeyRegistry::PairTable>();
        // pair keys for every AS pair get derived lazily below once the AS
        // set is known; a key table file overrides them
        if (sc_.kind == TopoKind::dumbbell) {
            uint32_t rbl = add_router(100, false);
            uint32_t rbr = add_router(100, false);
            uint32_t bl = add_link(rbl, rbr, sc_.bottleneck_bps, "bottleneck>");
            add_link(rbr, rbl, sc_.bottleneck_bps, "bottleneck<");
            links_[bl].is_bottleneck = true;
            bottlenecks_.push_back(bl);

            std::vector<uint32_t> ars;
            bool per_group_as = false;
            for (const auto& g : sc_.groups) per_group_as |= g.compromised_as;
            for (uint32_t i = 0; i < sc_.src_as_count; i++) {
                uint32_t ar = add_router(AsId(1 + i), true);
                add_duplex(ar, rbl, 0);
                ars.push_back(ar);
            }
            Site site = build_site(rbr, 200, "dst");
            for (uint32_t gi = 0; gi < sc_.groups.size(); gi++) {
                const auto& g = sc_.groups[gi];
                if (per_group_as) {
                    std::vector<uint32_t> own = {ars[gi % ars.size()]};
                    place_group_hosts(g, own, site, gi);
                } else {
                    place_group_hosts(g, ars, site, gi);
                }
            }
        } else {
            uint32_t r1 = add_router(100, false);
            uint32_t r2 = add_router(101, false);
            uint32_t r3 = add_router(102, false);
            uint32_t l1 = add_link(r1, r2, sc_.l1_bps, "L1>");
            add_link(r2, r1, sc_.l1_bps, "L1<");
            uint32_t l2 = add_link(r2, r3, sc_.l2_bps, "L2>");
            add_link(r3, r2, sc_.l2_bps, "L2<");
            links_[l1].is_bottleneck = true;
            links_[l2].is_bottleneck = true;
            bottlenecks_.push_back(l1);
            bottlenecks_.push_back(l2);

            auto make_ars = [&](uint32_t attach, AsId base) {
                std::vector<uint32_t> v;
                for (uint32_t i = 0; i < sc_.src_as_count; i++) {
                    uint32_t ar = add_router(AsId(base + i), true);
                    add_duplex(ar, attach, 0);
                    v.push_back(ar);
                }
                return v;
            };
            auto ars_a = make_ars(r1, 1);
            auto ars_b = make_ars(r2, 20);
            auto ars_c = make_ars(r1, 40);
            Site site3 = build_site(r3, 200, "r3");  // for groups a and b
            Site site2 = build_site(r2, 230, "r2");  // for group c
            for (uint32_t gi = 0; gi < sc_.groups.size(); gi++) {
                const auto& g = sc_.groups[gi];
                if (g.attach == 'a') place_group_hosts(g, ars_a, site3, gi);
                else if (g.attach == 'b') place_group_hosts(g, ars_b, site3, gi);
                else place_group_hosts(g, ars_c, site2, gi);
            }
        }

        provision_pair_keys();
        build_routes();
        goodput_total_.assign(kinds_.size(), 0);
        goodput_window_.assign(kinds_.size(), 0);
        bucket_class_.assign(2, 0);
    }

    void provision_pair_keys() {
        if (!sc_.key_table_path.empty()) {
            std::ifstream in(sc_.key_table_path);
            if (!in) throw ConfigError(sc_.key_table_path + ": cannot open key table");
            *pair_keys_ = crypto::parse_key_table(in);
            return;
        }
        std::vector<AsId> ases;
        for (const auto& r : routers_) ases.push_back(r.as);
        std::sort(ases.begin(), ases.end());
        ases.erase(std::unique(ases.begin(), ases.end()), ases.end());
        for (size_t i = 0; i < ases.size(); i++)
            for (size_t j = i + 1; j < ases.size(); j++)
                (*pair_keys_)[{ases[i], ases[j]}] =
                    crypto::derive_key(sc_.seed ^ 0x5eedULL, (uint64_t(ases[i]) << 20) | ases[j]);
    }

    void build_routes() {
        uint32_t n = uint32_t(kinds_.size());
        std::vector<std::vector<std::pair<uint32_t, uint32_t>>> in_links(n);  // (from, link)
        for (uint32_t li = 0; li < links_.size(); li++)
            in_links[links_[li].to].push_back({links_[li].from, li});
        next_link_.assign(n, std::vector<int32_t>(n, -1));
        std::vector<int32_t> dist(n);
        for (uint32_t d = 0; d < n; d++) {
            std::fill(dist.begin(), dist.end(), -1);
            std::deque<uint32_t> bfs{d};
            dist[d] = 0;
            while (!bfs.empty()) {
                uint32_t v = bfs.front();
                bfs.pop_front();
                for (auto [u, li] : in_links[v]) {
                    if (dist[u] < 0) {
                        dist[u] = dist[v] + 1;
                        next_link_[u][d] = int32_t(li);
                        bfs.push_back(u);
                    }
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // event plumbing
    // ------------------------------------------------------------------

    void schedule(double t, Ev kind, uint32_t a, uint32_t b, uint64_t c) {
        Event ev;
        ev.t = t;
        ev.seq = ++seq_;
        ev.kind = kind;
        ev.a = a;
        ev.b = b;
        ev.c = c;
        q_.push(std::move(ev));
    }

    void schedule_pkt(double t, Ev kind, uint32_t a, Packet&& p) {
        Event ev;
        ev.t = t;
        ev.seq = ++seq_;
        ev.kind = kind;
        ev.a = a;
        ev.pkt = std::move(p);
        q_.push(std::move(ev));
    }

    uint32_t now_sec() const { return uint32_t(now_); }

    HostState& host_at(uint32_t node) { return hosts_[node_state_idx_[node]]; }
    RouterState& router_at(uint32_t node) { return routers_[node_state_idx_[node]]; }

    void dispatch(const Event& ev) {
        switch (ev.kind) {
            case Ev::arrive: on_arrive(ev.a, const_cast<Packet&>(ev.pkt)); break;
            case Ev::link_ready: on_link_ready(ev.a, const_cast<Packet&>(ev.pkt)); break;
            case Ev::link_wake:
                if (links_[ev.a].wake_gen == uint32_t(ev.c)) kick_link(ev.a);
                break;
            case Ev::unleash: on_unleash(ev.a, ev.b, ev.c); break;
            case Ev::release: on_release(ev.a, const_cast<Packet&>(ev.pkt)); break;
            case Ev::adjust: on_adjust(ev.a, ev.b, uint32_t(ev.c)); break;
            case Ev::mon_tick: on_mon_tick(ev.a); break;
            case Ev::host_timer: on_host_timer(ev.a, ev.b, uint32_t(ev.c)); break;
            case Ev::rotate_keys:
                for (auto& r : routers_) r.reg.rotate();
                schedule(now_ + sc_.params.key_rotation_s, Ev::rotate_keys, 0, 0, 0);
                break;
            case Ev::metrics_tick: on_metrics_tick(); break;
            case Ev::gc_tick: on_gc_tick(ev.a); break;
        }
    }

    // ------------------------------------------------------------------
    // links
    // ------------------------------------------------------------------

    void forward(uint32_t node, Packet&& p) {
        int32_t li = next_link_[node][p.dst];
        if (li < 0) return;
        LinkState& l = links_[li];
        if (l.bps <= 0) {
            schedule_pkt(now_ + l.delay, Ev::arrive, l.to, std::move(p));
            return;
        }
        enqueue_on(l, std::move(p));
        kick_link(uint32_t(li));
    }

    void enqueue_on(LinkState& l, Packet&& p) {
        uint32_t len = p.wire_len();
        bool ok = false;
        if (l.ch) {
            EnqResult r;
            uint32_t prio = p.priority;
            uint32_t as_slot = p.src_as;
            if (p.type == PktType::request)
                r = l.ch->enqueue_request(std::move(p), prio, now_);
            else if (p.type == PktType::regular)
                r = l.ch->enqueue_regular(std::move(p), as_slot, now_, l.rng);
            else
                r = l.ch->enqueue_legacy(std::move(p), now_);
            ok = r == EnqResult::enqueued;
        } else if (l.drr) {
            ok = l.drr->enqueue(std::move(p));
        } else {
            if (l.fifo_bytes + len <= l.fifo_cap) {
                l.fifo_bytes += len;
                l.fifo.push_back(std::move(p));
                ok = true;
            }
        }
        if (ok) l.enq_bytes += len;
        else l.drop_bytes += len;
    }

    void kick_link(uint32_t li) {
        LinkState& l = links_[li];
        if (l.busy) return;
        std::optional<Packet> picked;
        if (l.ch) {
            auto pk = l.ch->pick(now_);
            if (pk) {
                update_feedback_on_dequeue(l, pk->pkt, pk->channel, pk->queue);
                picked = std::move(pk->pkt);
            } else if (l.ch->request_backlog()) {
                double wake = l.ch->next_wake(now_);
                if (!std::isnan(wake)) {
                    l.wake_gen++;
                    schedule(wake, Ev::link_wake, li, 0, l.wake_gen);
                }
            }
        } else if (l.drr) {
            picked = l.drr->dequeue();
        } else if (!l.fifo.empty()) {
            picked = std::move(l.fifo.front());
            l.fifo.pop_front();
            l.fifo_bytes -= picked->wire_len();
        }
        if (!picked) return;
        l.deq_bytes += picked->wire_len();
        l.busy = true;
        double tx = double(picked->wire_len()) * 8.0 / l.bps;
        uint64_t bits = uint64_t(picked->wire_len()) * 8;
        l.tx_bits_total += bits;
        l.tx_bits_interval += bits;
        if (now_ >= sc_.warmup) l.tx_bits_window += bits;
        Event ev;
        ev.t = now_ + tx;
        ev.seq = ++seq_;
        ev.kind = Ev::link_ready;
        ev.a = li;
        ev.pkt = std::move(*picked);
        q_.push(std::move(ev));
    }

    void on_link_ready(uint32_t li, Packet& p) {
        LinkState& l = links_[li];
        l.busy = false;
        schedule_pkt(now_ + l.delay, Ev::arrive, l.to, std::move(p));
        kick_link(li);
    }

    // Feedback update at dequeue time on a monitored link (the owning
    // router's view). Never stamps incr in the single-feedback design.
    void update_feedback_on_dequeue(LinkState& l, Packet& p, Channel channel,
                                    uint32_t queue_idx) {
        if (!l.ch || p.type == PktType::legacy) return;
        if (channel == Channel::legacy) return;
        auto& queues = l.ch->regular_queues();
        uint32_t qi = channel == Channel::regular ? queue_idx
                                                  : l.ch->queue_for_as(p.src_as);
        if (qi >= queues.size()) qi = 0;
        auto& q = queues[qi];
        if (!q.mon_active()) return;
        RouterState& owner = router_at(l.from);
        LinkId link_id = l.id + 1;
        if (sc_.policy == Policy::b1) {
            if (!p.has_mfb) return;
            FbAction action = q.in_decr_window(now_, sc_.params.i_lim) ? FbAction::decr
                                                                       : FbAction::incr;
            multipath::stamp_multi(p.mfb, p.src, p.dst, link_id, action, owner.reg,
                                   p.src_as);
            return;
        }
        if (!p.has_fb) return;
        if (p.fwd.mode == FbMode::nop) {
            // rule 1: nop is always replaced while monitored
            auto d = crypto::stamp_decr(p.fwd, p.src, p.dst, link_id, owner.reg, p.src_as);
            if (d) p.fwd = *d;
        } else if (p.fwd.action == FbAction::decr) {
            // rule 2: an upstream bottleneck already claimed the packet
        } else if (q.in_decr_window(now_, sc_.params.i_lim)) {
            // rule 3: overloaded within the hysteresis window
            auto d = crypto::stamp_decr(p.fwd, p.src, p.dst, link_id, owner.reg, p.src_as);
            if (d) p.fwd = *d;
        }
    }

    void on_mon_tick(uint32_t li) {
        LinkState& l = links_[li];
        const Params& p = sc_.params;
        double util = double(l.tx_bits_interval) / (l.bps * p.detect_interval);
        l.util_ewma = 0.9 * l.util_ewma + 0.1 * util;
        l.tx_bits_interval = 0;
        if (l.ch) {
            for (auto& q : l.ch->regular_queues()) {
                q.detection_tick(now_, p.p_th, p.t_b);
                if (p.util_detection && l.util_ewma > p.util_th) q.refresh_attack(now_);
            }
            bool mon = l.ch->any_mon(now_);
            if (mon && l.mon_started < 0) l.mon_started = now_;
            if (!mon) l.mon_started = -1;
            // per-AS separation once congestion persists past the grace period
            if (sc_.fallback_allowed && !l.ch->fallback_enabled() && mon &&
                l.mon_started >= 0 && now_ - l.mon_started > sc_.fallback_grace) {
                bool still_congested = false;
                for (auto& q : l.ch->regular_queues())
                    if (q.drop_ewma() > p.p_th) still_congested = true;
                if (still_congested) {
                    std::vector<uint32_t> slots;
                    for (const auto& r : routers_)
                        if (r.is_access) slots.push_back(r.as);
                    std::sort(slots.begin(), slots.end());
                    slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
                    l.ch->enable_fallback(slots, now_);
                    ts_row(l.label, "fallback", now_, now_, 1.0);
                }
            }
            if (l.is_bottleneck) {
                double ewma = 0;
                for (auto& q : l.ch->regular_queues()) ewma = std::max(ewma, q.drop_ewma());
                ts_row(l.label, "drop_ewma", now_ - p.detect_interval, now_, ewma);
                ts_row(l.label, "mon", now_ - p.detect_interval, now_, mon ? 1.0 : 0.0);
            }
        }
        if (l.is_bottleneck)
            ts_row(l.label, "util", now_ - p.detect_interval, now_, util);
        schedule(now_ + p.detect_interval, Ev::mon_tick, li, 0, 0);
    }

    // ------------------------------------------------------------------
    // access router
    // ------------------------------------------------------------------

    uint64_t limiter_key(Addr sender, LinkId link) const {
        return (uint64_t(sender) << 32) | link;
    }

    LimiterEntry& get_or_create_limiter(RouterState& r, Addr sender, LinkId link) {
        uint64_t key = limiter_key(sender, link);
        auto it = r.limiters.find(key);
        if (it != r.limiters.end()) return it->second;
        LimiterEntry e;
        e.rl = RateLimiter<Packet>(now_, sc_.params);
        auto [pos, _] = r.limiters.emplace(key, std::move(e));
        schedule(now_ + sc_.params.i_lim, Ev::adjust, r.node, sender, link);
        return pos->second;
    }

    std::optional<AsId> link_as(LinkId id) const {
        if (id == 0 || id > links_.size()) return std::nullopt;
        const LinkState& l = links_[id - 1];
        return node_as_.at(l.from);
    }

    crypto::LinkAsLookup link_as_fn() {
        return [this](LinkId id) { return link_as(id); };
    }

    void access_from_host(RouterState& r, Packet& p) {
        p.policed = true;
        if (sc_.policy == Policy::droptail || sc_.policy == Policy::fq_drr ||
            p.type == PktType::legacy) {
            forward(r.node, std::move(p));
            return;
        }
        if (r.compromised) {
            // a compromised access router stamps whatever lets its hosts
            // flood: fresh nop, no validation, no policing
            if (sc_.policy == Policy::b1) {
                p.mfb = multipath::stamp_nop_multi(p.src, p.dst, now_sec(), r.reg);
                p.has_mfb = true;
                p.has_fb = false;
            } else {
                p.fwd = crypto::stamp_nop(p.src, p.dst, now_sec(), r.reg);
                p.has_fb = true;
            }
            p.type = PktType::regular;
            forward(r.node, std::move(p));
            return;
        }
        if (sc_.policy == Policy::b1) {
            access_from_host_b1(r, p);
            return;
        }

        crypto::ValidationResult v{crypto::Validity::invalid, 0};
        if (p.has_fb)
            v = crypto::validate(p.fwd, p.src, p.dst, now_sec(), r.reg, link_as_fn(),
                                 sc_.params.w);
        if (v.kind == crypto::Validity::valid_nop) {
            p.fwd = crypto::stamp_nop(p.src, p.dst, now_sec(), r.reg);
            p.type = PktType::regular;
            forward(r.node, std::move(p));
            return;
        }
        if (v.kind == crypto::Validity::valid_incr || v.kind == crypto::Validity::valid_decr) {
            police_mon(r, p, v);
            return;
        }
        request_path(r, p);
    }

    void request_path(RouterState& r, Packet& p) {
        auto it = r.req_limiters.find(p.src);
        if (it == r.req_limiters.end()) {
            it = r.req_limiters
                     .emplace(p.src, RequestLimiter(sc_.params.l1_tokens_per_s,
                                                    sc_.params.token_depth, now_))
                     .first;
        }
        if (!it->second.police(p.priority, now_)) {
            request_drops_++;
            return;
        }
        if (sc_.policy == Policy::b1) {
            p.mfb = multipath::stamp_nop_multi(p.src, p.dst, now_sec(), r.reg);
            p.has_mfb = true;
            p.has_fb = false;
        } else {
            p.fwd = crypto::stamp_nop(p.src, p.dst, now_sec(), r.reg);
            p.has_fb = true;
        }
        p.type = PktType::request;
        forward(r.node, std::move(p));
    }

    // single-feedback policing (core rules; extended bookkeeping under b2)
    void police_mon(RouterState& r, Packet& p, const crypto::ValidationResult& v) {
        FbAction action = v.kind == crypto::Validity::valid_incr ? FbAction::incr
                                                                 : FbAction::decr;
        if (sc_.policy == Policy::core) {
            auto& e = get_or_create_limiter(r, p.src, v.link);
            e.rl.update_status(action, true, p.fwd.ts, now_);
            switch (e.rl.police(p, now_)) {
                case PoliceVerdict::pass:
                    restamp_and_forward(r, p, v.link);
                    break;
                case PoliceVerdict::cached:
                    if (e.rl.cache_packets() == 1)
                        schedule(e.rl.next_unleash_time(), Ev::unleash, r.node, p.src,
                                 (uint64_t(v.link) << 32) | e.gen);
                    break;
                case PoliceVerdict::drop:
                    limiter_drops_++;
                    break;
            }
            return;
        }
        // b2: the packet must clear every inferred on-path limiter
        r.infer.update(p.dst, v.link, now_);
        auto set = r.infer.lookup(p.dst, now_);
        if (std::find(set.begin(), set.end(), v.link) == set.end()) set.push_back(v.link);
        std::sort(set.begin(), set.end());
        police_multi(r, p, set, v.link, action, p.fwd.ts);
    }

    void access_from_host_b1(RouterState& r, Packet& p) {
        multipath::MultiValidity mv = multipath::MultiValidity::invalid;
        if (p.has_mfb)
            mv = multipath::validate_multi(p.mfb, p.src, p.dst, now_sec(), r.reg,
                                           link_as_fn(), sc_.params.w);
        if (mv != multipath::MultiValidity::valid) {
            request_path(r, p);
            return;
        }
        if (p.mfb.empty()) {
            p.mfb = multipath::stamp_nop_multi(p.src, p.dst, now_sec(), r.reg);
            p.type = PktType::regular;
            forward(r.node, std::move(p));
            return;
        }
        std::vector<LinkId> set;
        for (uint8_t i = 0; i < p.mfb.count; i++) {
            LinkId L = p.mfb.entries[i].link;
            if (std::find(set.begin(), set.end(), L) == set.end()) set.push_back(L);
        }
        std::sort(set.begin(), set.end());
        // each limiter receives its own entry's feedback
        for (uint8_t i = 0; i < p.mfb.count; i++) {
            auto& e = get_or_create_limiter(r, p.src, p.mfb.entries[i].link);
            e.rl.update_status(p.mfb.entries[i].action, true, p.mfb.ts, now_);
        }
        police_multi(r, p, set, 0, FbAction::incr, p.mfb.ts, /*b1=*/true);
    }

    // Conjunction policing: the packet releases when the slowest on-path
    // limiter permits; it is dropped if any limiter's dwell bound trips.
    void police_multi(RouterState& r, Packet& p, const std::vector<LinkId>& set,
                      LinkId presented, FbAction action, uint32_t pkt_ts, bool b1 = false) {
        if (!b1 && sc_.policy == Policy::b2) {
            for (LinkId L : set) {
                auto& e = get_or_create_limiter(r, p.src, L);
                e.rl.update_status(action, L == presented, pkt_ts, now_);
            }
        }
        uint32_t len = p.wire_len();
        double release = now_;
        for (LinkId L : set) {
            auto& e = get_or_create_limiter(r, p.src, L);
            release = std::max(release, e.rl.release_candidate(len, now_));
        }
        if (release - now_ > sc_.params.max_cache_delay) {
            for (LinkId L : set) {
                auto it = r.limiters.find(limiter_key(p.src, L));
                if (it != r.limiters.end()) it->second.rl.note_drop(now_);
            }
            limiter_drops_++;
            return;
        }
        p.police_n = 0;
        for (LinkId L : set) {
            auto& e = get_or_create_limiter(r, p.src, L);
            e.rl.commit_release(len, now_);
            if (p.police_n < p.police_set.size()) p.police_set[p.police_n++] = L;
        }
        if (release <= now_) {
            finish_release(r, p);
        } else {
            schedule_pkt(release, Ev::release, r.node, std::move(p));
        }
    }

    void on_release(uint32_t node, Packet& p) {
        RouterState& r = router_at(node);
        finish_release(r, p);
    }

    void finish_release(RouterState& r, Packet& p) {
        for (uint8_t i = 0; i < p.police_n; i++) {
            auto it = r.limiters.find(limiter_key(p.src, p.police_set[i]));
            if (it != r.limiters.end()) it->second.rl.on_released(p.wire_len());
        }
        if (sc_.policy == Policy::b1) {
            p.mfb = multipath::stamp_nop_multi(p.src, p.dst, now_sec(), r.reg);
            p.has_mfb = true;
            p.type = PktType::regular;
            forward(r.node, std::move(p));
            return;
        }
        // reset to the incr of the most constrained on-path limiter
        LinkId low = p.police_n ? p.police_set[0] : p.fwd.link;
        double low_rate = 1e30;
        for (uint8_t i = 0; i < p.police_n; i++) {
            auto it = r.limiters.find(limiter_key(p.src, p.police_set[i]));
            if (it != r.limiters.end() && it->second.rl.rate() < low_rate) {
                low_rate = it->second.rl.rate();
                low = p.police_set[i];
            }
        }
        restamp_and_forward(r, p, low);
    }

    void restamp_and_forward(RouterState& r, Packet& p, LinkId link) {
        p.fwd = crypto::stamp_incr(p.src, p.dst, now_sec(), link, r.reg);
        p.has_fb = true;
        p.type = PktType::regular;
        forward(r.node, std::move(p));
    }

    void on_unleash(uint32_t node, Addr sender, uint64_t c) {
        RouterState& r = router_at(node);
        LinkId link = LinkId(c >> 32);
        uint32_t gen = uint32_t(c);
        auto it = r.limiters.find(limiter_key(sender, link));
        if (it == r.limiters.end() || it->second.gen != gen) return;
        auto pkt = it->second.rl.unleash(now_);
        if (!pkt) return;
        if (it->second.rl.cache_packets() > 0)
            schedule(it->second.rl.next_unleash_time(), Ev::unleash, node, sender,
                     (uint64_t(link) << 32) | gen);
        restamp_and_forward(r, *pkt, link);
    }

    void on_adjust(uint32_t node, Addr sender, LinkId link) {
        RouterState& r = router_at(node);
        auto it = r.limiters.find(limiter_key(sender, link));
        if (it == r.limiters.end()) return;
        auto& e = it->second;
        bool extended = sc_.policy == Policy::b2;
        auto out = e.rl.adjust(now_, extended);
        if (sc_.limiter_series) {
            ts_row("limiter:" + std::to_string(sender) + ":" + std::to_string(link),
                   "rate", now_ - sc_.params.i_lim, now_, out.rate);
            ts_row("limiter:" + std::to_string(sender) + ":" + std::to_string(link),
                   "throughput", now_ - sc_.params.i_lim, now_, out.throughput_bps);
        }
        if ((out.increased || out.decreased) && e.rl.cache_packets() > 0) {
            e.gen++;
            schedule(std::max(now_, e.rl.next_unleash_time()), Ev::unleash, node, sender,
                     (uint64_t(link) << 32) | e.gen);
        }
        schedule(now_ + sc_.params.i_lim, Ev::adjust, node, sender, link);
    }

    void on_gc_tick(uint32_t node) {
        RouterState& r = router_at(node);
        std::vector<uint64_t> dead;
        for (auto& [key, e] : r.limiters)
            if (e.rl.expired(now_, sc_.params.t_a)) dead.push_back(key);
        for (uint64_t key : dead) r.limiters.erase(key);
        if (sc_.policy == Policy::b2) {
            // drop links that no longer have any limiter from the cache
            std::map<LinkId, bool> live;
            for (auto& [key, e] : r.limiters) live[LinkId(key)] = true;
            for (uint64_t key : dead) {
                LinkId L = LinkId(key);
                if (!live.count(L)) r.infer.drop_link(L);
            }
        }
        schedule(now_ + 30.0, Ev::gc_tick, node, 0, 0);
    }

    // ------------------------------------------------------------------
    // arrivals
    // ------------------------------------------------------------------

    void on_arrive(uint32_t node, Packet& p) {
        trace_hash_ = splitmix64(trace_hash_ ^ (uint64_t(node) << 40) ^ p.id ^
                                 uint64_t(now_ * 1e6));
        switch (kinds_[node]) {
            case NodeKind::host:
                host_arrive(host_at(node), p);
                break;
            case NodeKind::access: {
                RouterState& r = router_at(node);
                auto hit = host_index_.find(p.src);
                bool from_my_host = !p.policed && hit != host_index_.end() &&
                                    hosts_[hit->second].gw == node;
                if (from_my_host) access_from_host(r, p);
                else forward(node, std::move(p));
                break;
            }
            case NodeKind::core:
                forward(node, std::move(p));
                break;
        }
    }

    // ------------------------------------------------------------------
    // host behavior
    // ------------------------------------------------------------------

    void start_traffic() {
        for (uint32_t hn : senders_) {
            HostState& h = host_at(hn);
            double start = sc_.traffic_start;
            switch (h.role) {
                case Role::tcp:
                case Role::tcp_files:
                    start += h.rng.uniform(0.0, 0.5);
                    break;
                case Role::onoff:
                    h.phase0 = sc_.traffic_start;
                    break;
                case Role::request_flood:
                    start += h.rng.uniform(0.0, 0.25);
                    break;
                default:
                    start += h.rng.uniform(0.0, 0.2);
                    break;
            }
            h.pkt_interval = h.rate_bps > 0 ? double(sc_.params.mtu) * 8.0 / h.rate_bps : 0.1;
            h.next_app = start;
            schedule(start, Ev::host_timer, hn, HT_APP, 0);
        }
        for (auto& h : hosts_)
            if (h.rx != RxKind::none)
                schedule(sc_.traffic_start, Ev::host_timer, h.node, HT_FB, 0);
    }

    void on_host_timer(uint32_t node, uint32_t code, uint32_t gen) {
        HostState& h = host_at(node);
        switch (code) {
            case HT_APP: host_app_tick(h); break;
            case HT_RTO:
                if (gen == h.conn.rto_gen) tcp_rto(h);
                break;
            case HT_FB: host_fb_tick(h); break;
            case HT_NEXT_TRANSFER: tcp_start_transfer(h); break;
        }
    }

    // -------------------- request escalation --------------------

    uint32_t level_for_wait(const HostState& h) const {
        if (h.last_req_sent < 0) return 0;
        double dt = now_ - h.last_req_sent;
        double tokens = dt * sc_.params.l1_tokens_per_s;
        if (tokens < 1.0) return 0;
        uint32_t lvl = 1 + uint32_t(std::floor(std::log2(tokens)));
        return std::min(lvl, sc_.params.max_priority);
    }

    Packet make_packet(HostState& h, Addr dst, uint8_t tf, uint32_t len) {
        Packet p;
        p.id = ++pkt_id_;
        p.src = h.node;
        p.dst = dst;
        p.src_as = h.as;
        p.len = uint16_t(len);
        p.tf = tf;
        fill_return(h, p, dst);
        return p;
    }

    void send_to_gw(HostState& h, Packet&& p) {
        int32_t li = next_link_[h.node][h.gw];
        if (li < 0) return;
        schedule_pkt(now_ + links_[li].delay, Ev::arrive, h.gw, std::move(p));
    }

    void send_request(HostState& h, Addr dst, uint8_t tf, uint32_t level_override,
                      bool use_override) {
        Packet p = make_packet(h, dst, tf, sc_.params.small_pkt);
        p.type = PktType::request;
        p.priority = uint8_t(use_override ? level_override : level_for_wait(h));
        h.last_req_sent = now_;
        send_to_gw(h, std::move(p));
    }

    // Picks the feedback to present toward dst, or nothing if all expired.
    bool choose_present(HostState& h, Addr dst, Packet& p) {
        auto it = h.present.find(dst);
        if (it == h.present.end()) return false;
        PresentStore& ps = it->second;
        // stop presenting one second before expiry so in-flight validation
        // never grazes the window edge
        uint32_t horizon = uint32_t(sc_.params.w) - 1;
        auto fresh = [&](const crypto::Feedback& fb) {
            return now_sec() >= fb.ts && now_sec() - fb.ts <= horizon;
        };
        if (sc_.policy == Policy::b1) {
            auto mfresh = [&](const multipath::MultiFeedback& m) {
                return now_sec() >= m.ts && now_sec() - m.ts <= horizon;
            };
            const MSlot* pick = nullptr;
            if (ps.m_clean.has && mfresh(ps.m_clean.m)) pick = &ps.m_clean;
            else if (ps.m_any.has && mfresh(ps.m_any.m)) pick = &ps.m_any;
            if (!pick) return false;
            p.mfb = pick->m;
            p.has_mfb = true;
            return true;
        }
        const FbSlot* pick = nullptr;
        switch (h.role) {
            case Role::adv_hide:
                if (ps.incr.has && fresh(ps.incr.fb)) pick = &ps.incr;
                break;
            case Role::adv_stale:
                if (ps.prev_incr.has && fresh(ps.prev_incr.fb)) pick = &ps.prev_incr;
                else if (ps.incr.has && fresh(ps.incr.fb)) pick = &ps.incr;
                break;
            default:
                // always present incr while unexpired, even if newer decr exists
                if (ps.incr.has && fresh(ps.incr.fb)) pick = &ps.incr;
                else if (ps.any.has && fresh(ps.any.fb)) pick = &ps.any;
                break;
        }
        if (!pick) return false;
        p.fwd = pick->fb;
        p.has_fb = true;
        return true;
    }

    // Feedback the receiver returns toward `dst`, by its return policy.
    void fill_return(HostState& h, Packet& p, Addr dst) {
        auto it = h.ret.find(dst);
        if (it == h.ret.end()) return;
        if (h.capability && !peer_allowed(h, dst)) return;
        ReturnStore& rs = it->second;
        Role peer_role = peer_role_of(dst);
        if (sc_.policy == Policy::b1) {
            const MSlot* pick = nullptr;
            if (h.rx == RxKind::colluder) {
                if (rs.m_clean.has && now_sec() - rs.m_clean.m.ts <= 3) pick = &rs.m_clean;
                else if (rs.m_latest.has) pick = &rs.m_latest;
            } else if (rs.m_latest.has) {
                pick = &rs.m_latest;
            }
            (void)peer_role;
            if (!pick) return;
            p.ret_mfb = pick->m;
            p.has_ret_mfb = true;
            p.ret_mts2 = uint8_t(pick->m.ts & 3);
            return;
        }
        const FbSlot* pick = nullptr;
        if (h.rx == RxKind::colluder) {
            switch (peer_role) {
                case Role::adv_hide:
                    if (rs.incr.has) pick = &rs.incr;
                    else if (rs.latest.has && rs.latest.fb.action != FbAction::decr)
                        pick = &rs.latest;
                    break;
                case Role::adv_stale:
                    if (rs.stale_incr.has) pick = &rs.stale_incr;
                    else if (rs.incr.has) pick = &rs.incr;
                    else if (rs.latest.has && rs.latest.fb.action != FbAction::decr)
                        pick = &rs.latest;
                    break;
                default:
                    // prefer fresh incr, fall back to the freshest anything
                    if (rs.incr.has && now_sec() - rs.incr.fb.ts <= 3) pick = &rs.incr;
                    else if (rs.latest.has) pick = &rs.latest;
                    break;
            }
        } else if (rs.latest.has) {
            pick = &rs.latest;
        }
        if (!pick) return;
        p.has_ret = true;
        p.ret_mode = pick->fb.mode;
        p.ret_action = pick->fb.action;
        p.ret_link = pick->fb.link;
        p.ret_mac = pick->fb.mac;
        p.ret_ts2 = uint8_t(pick->fb.ts & 3);
    }

    bool peer_allowed(const HostState& victim, Addr peer) const {
        auto it = host_index_.find(peer);
        if (it == host_index_.end()) return true;
        return hosts_[it->second].legit;
    }

    Role peer_role_of(Addr peer) const {
        auto it = host_index_.find(peer);
        return it == host_index_.end() ? Role::tcp : hosts_[it->second].role;
    }

    // -------------------- application models --------------------

    bool onoff_is_on(const HostState& h, double t) const {
        if (h.off_len <= 0) return true;
        double cycle = h.on_len + h.off_len;
        double ph = std::fmod(t - h.phase0, cycle);
        if (ph < 0) ph += cycle;
        return ph < h.on_len;
    }

    void host_app_tick(HostState& h) {
        switch (h.role) {
            case Role::tcp:
            case Role::tcp_files:
                tcp_start_transfer(h);
                return;  // handshake timer takes over
            case Role::request_flood: {
                send_request(h, h.dst, TF_PROBE, h.req_level, true);
                double period =
                    std::ldexp(1.0, int(h.req_level) - 1) / sc_.params.l1_tokens_per_s;
                schedule(now_ + period * 1.02, Ev::host_timer, h.node, HT_APP, 0);
                return;
            }
            case Role::legacy_cbr: {
                if (h.rate_bps <= 0) return;
                Packet p = make_packet(h, h.dst, TF_DATA, sc_.params.mtu);
                p.type = PktType::legacy;
                p.payload = sc_.params.mtu - 40;
                send_to_gw(h, std::move(p));
                schedule(now_ + h.pkt_interval * h.rng.uniform(0.95, 1.05), Ev::host_timer,
                         h.node, HT_APP, 0);
                return;
            }
            default:
                break;
        }
        // constant-rate senders (udp_flood, udp_honest, onoff, adversaries)
        if (h.rate_bps <= 0) return;
        bool on = h.role != Role::onoff || onoff_is_on(h, now_);
        bool silent = h.role == Role::adv_silent &&
                      std::fmod(now_ - sc_.traffic_start, 2.0 * sc_.params.i_lim) >=
                          sc_.params.i_lim;
        if (on && !silent) {
            Packet p = make_packet(h, h.dst, TF_DATA, sc_.params.mtu);
            p.payload = sc_.params.mtu - 40;
            if (choose_present(h, h.dst, p)) {
                p.type = PktType::regular;
                send_to_gw(h, std::move(p));
            } else if (now_ >= h.next_req_ok) {
                // no usable feedback: probe instead of data
                Packet probe = make_packet(h, h.dst, TF_PROBE, sc_.params.small_pkt);
                probe.type = PktType::request;
                probe.priority = uint8_t(level_for_wait(h));
                h.last_req_sent = now_;
                h.next_req_ok = now_ + h.req_backoff;
                h.req_backoff = std::min(h.req_backoff * 2.0, 8.0);
                send_to_gw(h, std::move(probe));
            }
        }
        // small pacing jitter breaks deterministic phase locks between
        // synchronized constant-rate senders
        double next = now_ + h.pkt_interval * h.rng.uniform(0.95, 1.05);
        if (h.role == Role::onoff && h.off_len > 0 && !onoff_is_on(h, next)) {
            double cycle = h.on_len + h.off_len;
            double k = std::ceil((next - h.phase0) / cycle);
            next = h.phase0 + k * cycle;
        }
        schedule(next, Ev::host_timer, h.node, HT_APP, 0);
    }

    void host_fb_tick(HostState& h) {
        for (auto& [peer, rs] : h.ret) {
            if (!rs.wants_fb) continue;
            if (now_ - rs.last_rx > 2.0) continue;
            if (h.capability && !peer_allowed(h, peer)) continue;
            Packet p = make_packet(h, peer, TF_FB, sc_.params.small_pkt);
            if (!p.has_ret && !p.has_ret_mfb) continue;
            if (choose_present(h, peer, p)) {
                p.type = PktType::regular;
            } else {
                p.type = PktType::request;
                p.priority = 0;
            }
            send_to_gw(h, std::move(p));
        }
        schedule(now_ + 0.1, Ev::host_timer, h.node, HT_FB, 0);
    }

    // -------------------- feedback extraction --------------------

    void extract_forward(HostState& h, const Packet& p) {
        ReturnStore& rs = h.ret[p.src];
        rs.last_rx = now_;
        if (p.tf == TF_DATA && p.flow == 0) rs.wants_fb = true;
        if (p.tf == TF_PROBE) rs.wants_fb = true;
        if (p.has_mfb) {
            const auto& m = p.mfb;
            if (!rs.m_latest.has || m.ts >= rs.m_latest.m.ts) {
                rs.m_latest.m = m;
                rs.m_latest.has = true;
            }
            bool clean = true;
            for (uint8_t i = 0; i < m.count; i++)
                if (m.entries[i].action == FbAction::decr) clean = false;
            if (clean && (!rs.m_clean.has || m.ts >= rs.m_clean.m.ts)) {
                rs.m_clean.m = m;
                rs.m_clean.has = true;
            }
            return;
        }
        if (!p.has_fb) return;
        const crypto::Feedback& fb = p.fwd;
        if (!rs.latest.has || fb.ts >= rs.latest.fb.ts) {
            rs.latest.fb = fb;
            rs.latest.has = true;
        }
        if (fb.mode == FbMode::mon && fb.action == FbAction::incr) {
            if (!rs.incr.has || fb.ts >= rs.incr.fb.ts) {
                rs.incr.fb = fb;
                rs.incr.has = true;
            }
            if (!rs.stale_incr.has || now_sec() - rs.stale_incr.fb.ts > 3) {
                rs.stale_incr.fb = fb;
                rs.stale_incr.has = true;
            }
        }
    }

    void extract_returned(HostState& h, const Packet& p) {
        if (sc_.policy == Policy::b1) {
            if (!p.has_ret_mfb) return;
            PresentStore& ps = h.present[p.src];
            multipath::MultiFeedback m = p.ret_mfb;
            m.ts = wire::reconstruct_timestamp(now_sec(), p.ret_mts2);
            if (!ps.m_any.has || m.ts >= ps.m_any.m.ts) {
                ps.m_any.m = m;
                ps.m_any.has = true;
            }
            bool clean = true;
            for (uint8_t i = 0; i < m.count; i++)
                if (m.entries[i].action == FbAction::decr) clean = false;
            if (clean && (!ps.m_clean.has || m.ts >= ps.m_clean.m.ts)) {
                ps.m_clean.m = m;
                ps.m_clean.has = true;
            }
            if (h.conn.st == TcpConn::St::est) tcp_try_send(h);
            if (h.is_sender) h.req_backoff = 1.0;
            return;
        }
        if (!p.has_ret) return;
        crypto::Feedback fb;
        fb.mode = p.ret_mode;
        fb.action = p.ret_action;
        fb.link = p.ret_link;
        fb.ts = wire::reconstruct_timestamp(now_sec(), p.ret_ts2);
        fb.mac = p.ret_mac;
        fb.token_nop = 0;
        PresentStore& ps = h.present[p.src];
        if (!ps.any.has || fb.ts >= ps.any.fb.ts) {
            ps.any.fb = fb;
            ps.any.has = true;
        }
        if (fb.mode == FbMode::mon && fb.action == FbAction::incr) {
            if (!ps.incr.has || fb.ts >= ps.incr.fb.ts) {
                if (ps.incr.has && fb.ts > ps.incr.fb.ts) {
                    ps.prev_incr = ps.incr;
                }
                ps.incr.fb = fb;
                ps.incr.has = true;
            }
        }
        if (h.is_sender) h.req_backoff = 1.0;
        if (h.conn.st == TcpConn::St::est) tcp_try_send(h);
    }

    void host_arrive(HostState& h, Packet& p) {
        extract_forward(h, p);
        extract_returned(h, p);
        switch (p.tf) {
            case TF_SYN: {
                RcvFlow& f = h.flows[p.src];
                f.rcv_nxt = 0;
                f.ooo.clear();
                if (!h.capability || peer_allowed(h, p.src)) {
                    Packet sa = make_packet(h, p.src, TF_SYNACK, sc_.params.small_pkt);
                    finish_host_send(h, sa);
                }
                break;
            }
            case TF_SYNACK: tcp_on_synack(h); break;
            case TF_ACK:
                if (p.flow == tcp_flow_id(h)) tcp_on_ack(h, p.ack);
                break;
            case TF_DATA: {
                if (p.flow != 0) {
                    // tcp data: cumulative ack, count goodput on advance
                    RcvFlow& f = h.flows[p.src];
                    uint64_t before = f.rcv_nxt;
                    if (p.seq == f.rcv_nxt) {
                        f.rcv_nxt += p.payload;
                        auto it = f.ooo.begin();
                        while (it != f.ooo.end() && it->first <= f.rcv_nxt) {
                            f.rcv_nxt = std::max(f.rcv_nxt, it->first + it->second);
                            it = f.ooo.erase(it);
                        }
                    } else if (p.seq > f.rcv_nxt) {
                        auto [it, fresh] = f.ooo.emplace(p.seq, p.payload);
                        if (!fresh) it->second = std::max(it->second, uint64_t(p.payload));
                    }
                    count_goodput(p.src, f.rcv_nxt - before);
                    Packet ack = make_packet(h, p.src, TF_ACK, sc_.params.small_pkt);
                    ack.ack = f.rcv_nxt;
                    ack.flow = p.flow;
                    finish_host_send(h, ack);
                } else {
                    count_goodput(p.src, p.payload);
                }
                break;
            }
            default:
                break;
        }
    }

    // Sends a host packet through its presentation policy: regular when
    // valid feedback is at hand, a request otherwise.
    void finish_host_send(HostState& h, Packet& p) {
        if (sc_.policy == Policy::droptail || sc_.policy == Policy::fq_drr) {
            p.type = PktType::legacy;
            send_to_gw(h, std::move(p));
            return;
        }
        if (choose_present(h, p.dst, p)) {
            p.type = PktType::regular;
        } else {
            p.type = PktType::request;
            p.priority = uint8_t(level_for_wait(h));
            h.last_req_sent = now_;
        }
        send_to_gw(h, std::move(p));
    }

    // -------------------- tcp --------------------

    static constexpr uint32_t kMss = 1460;

    uint32_t tcp_flow_id(const HostState& h) const {
        return (h.conn.serial << 20) | (h.node & 0xfffff);
    }

    void tcp_start_transfer(HostState& h) {
        TcpConn& c = h.conn;
        c.st = TcpConn::St::syn_sent;
        c.serial++;
        c.snd_una = c.snd_nxt = 0;
        c.cwnd = 2.0 * kMss;
        c.ssthresh = 1e18;
        c.dupacks = 0;
        c.in_recovery = false;
        c.srtt = -1;
        c.rttvar = 0;
        c.rto = 3.0;
        c.syn_retx = 0;
        c.file_bytes = h.role == Role::tcp_files ? h.file_bytes : 0;
        c.xfer_start = now_;
        c.sample_t = -1;
        transfers_started_++;
        send_request(h, h.dst, TF_SYN, 0, false);
        c.rto_gen++;
        schedule(now_ + 1.0, Ev::host_timer, h.node, HT_RTO, c.rto_gen);
    }

    void tcp_on_synack(HostState& h) {
        TcpConn& c = h.conn;
        if (c.st != TcpConn::St::syn_sent) return;
        c.st = TcpConn::St::est;
        c.rto_gen++;
        schedule(now_ + c.rto, Ev::host_timer, h.node, HT_RTO, c.rto_gen);
        tcp_try_send(h);
    }

    void tcp_try_send(HostState& h) {
        TcpConn& c = h.conn;
        if (c.st != TcpConn::St::est) return;
        uint64_t limit = c.file_bytes ? c.file_bytes : ~0ULL;
        if (c.pending_rtx) {
            uint32_t payload = uint32_t(std::min<uint64_t>(kMss, limit - c.snd_una));
            if (payload == 0 || tcp_emit(h, c.snd_una, payload, true))
                c.pending_rtx = false;
            else
                return;
        }
        while (c.snd_nxt < limit &&
               double(c.snd_nxt - c.snd_una) + kMss <= c.cwnd + 0.5) {
            uint32_t payload = uint32_t(std::min<uint64_t>(kMss, limit - c.snd_nxt));
            if (!tcp_emit(h, c.snd_nxt, payload, false)) break;
            if (c.sample_t < 0) {
                c.sample_t = now_;
                c.sample_end = c.snd_nxt + payload;
            }
            c.snd_nxt += payload;
        }
    }

    bool tcp_emit(HostState& h, uint64_t seq, uint32_t payload, bool rtx) {
        Packet p = make_packet(h, h.dst, TF_DATA, payload + 40);
        p.flow = tcp_flow_id(h);
        p.seq = seq;
        p.payload = payload;
        if (!choose_present(h, h.dst, p)) {
            // feedback expired mid-flow: probe and wait
            if (now_ >= h.next_req_ok) {
                Packet probe = make_packet(h, h.dst, TF_PROBE, sc_.params.small_pkt);
                probe.type = PktType::request;
                probe.priority = uint8_t(level_for_wait(h));
                h.last_req_sent = now_;
                h.next_req_ok = now_ + h.req_backoff;
                h.req_backoff = std::min(h.req_backoff * 2.0, 8.0);
                send_to_gw(h, std::move(probe));
            }
            return false;
        }
        (void)rtx;
        p.type = PktType::regular;
        send_to_gw(h, std::move(p));
        return true;
    }

    void tcp_arm_rto(HostState& h) {
        TcpConn& c = h.conn;
        c.rto_gen++;
        schedule(now_ + c.rto, Ev::host_timer, h.node, HT_RTO, c.rto_gen);
    }

    void tcp_on_ack(HostState& h, uint64_t ack) {
        TcpConn& c = h.conn;
        if (c.st != TcpConn::St::est) return;
        if (ack > c.snd_una) {
            uint64_t newly = ack - c.snd_una;
            c.snd_una = ack;
            if (c.snd_nxt < c.snd_una) c.snd_nxt = c.snd_una;
            c.dupacks = 0;
            if (c.in_recovery && ack >= c.recover) {
                c.in_recovery = false;
                c.cwnd = c.ssthresh;
            }
            if (!c.in_recovery) {
                if (c.cwnd < c.ssthresh)
                    c.cwnd += std::min<uint64_t>(newly, kMss);
                else
                    c.cwnd += double(kMss) * double(kMss) / c.cwnd;
            }
            if (c.sample_t >= 0 && ack >= c.sample_end) {
                double sample = now_ - c.sample_t;
                c.sample_t = -1;
                if (c.srtt < 0) {
                    c.srtt = sample;
                    c.rttvar = sample / 2.0;
                } else {
                    c.rttvar = 0.75 * c.rttvar + 0.25 * std::abs(c.srtt - sample);
                    c.srtt = 0.875 * c.srtt + 0.125 * sample;
                }
                c.rto = std::clamp(c.srtt + 4.0 * c.rttvar, 1.0, 64.0);
            }
            if (c.file_bytes && c.snd_una >= c.file_bytes) {
                tcp_complete(h);
                return;
            }
            tcp_arm_rto(h);
            tcp_try_send(h);
            return;
        }
        if (c.snd_nxt == c.snd_una) return;
        c.dupacks++;
        if (c.dupacks == 3 && !c.in_recovery) {
            uint64_t flight = c.snd_nxt - c.snd_una;
            c.ssthresh = std::max(double(flight) / 2.0, 2.0 * kMss);
            c.in_recovery = true;
            c.recover = c.snd_nxt;
            c.cwnd = c.ssthresh;
            c.pending_rtx = true;
            tcp_try_send(h);
            tcp_arm_rto(h);
        }
    }

    void tcp_rto(HostState& h) {
        TcpConn& c = h.conn;
        if (c.st == TcpConn::St::syn_sent) {
            c.syn_retx++;
            if (c.syn_retx > 9) {
                tcp_abort(h);
                return;
            }
            send_request(h, h.dst, TF_SYN, 0, false);
            c.rto_gen++;
            schedule(now_ + std::min(64.0, std::ldexp(1.0, c.syn_retx)), Ev::host_timer,
                     h.node, HT_RTO, c.rto_gen);
            return;
        }
        if (c.st != TcpConn::St::est) return;
        if (c.file_bytes && now_ - c.xfer_start > 200.0) {
            tcp_abort(h);
            return;
        }
        uint64_t flight = c.snd_nxt - c.snd_una;
        c.ssthresh = std::max(double(flight) / 2.0, 2.0 * kMss);
        c.cwnd = kMss;
        c.dupacks = 0;
        c.in_recovery = false;
        c.sample_t = -1;
        c.rto = std::min(c.rto * 2.0, 64.0);
        c.snd_nxt = c.snd_una;  // go-back-n: everything in flight is suspect
        c.pending_rtx = false;
        tcp_try_send(h);
        tcp_arm_rto(h);
    }

    void tcp_complete(HostState& h) {
        TcpConn& c = h.conn;
        c.st = TcpConn::St::closed;
        c.rto_gen++;
        transfers_completed_++;
        transfer_times_.push_back(now_ - c.xfer_start);
        if (h.role == Role::tcp_files)
            schedule(now_ + h.gap_s, Ev::host_timer, h.node, HT_NEXT_TRANSFER, 0);
    }

    void tcp_abort(HostState& h) {
        TcpConn& c = h.conn;
        c.st = TcpConn::St::closed;
        c.rto_gen++;
        transfers_aborted_++;
        schedule(now_ + h.gap_s, Ev::host_timer, h.node, HT_NEXT_TRANSFER, 0);
    }

    // ------------------------------------------------------------------
    // metrics
    // ------------------------------------------------------------------

    void count_goodput(Addr sender, uint64_t bytes) {
        if (bytes == 0) return;
        goodput_total_[sender] += bytes;
        if (now_ >= sc_.warmup && now_ <= sc_.duration) goodput_window_[sender] += bytes;
        auto it = host_index_.find(sender);
        if (it != host_index_.end())
            bucket_class_[hosts_[it->second].legit ? 0 : 1] += bytes;
    }

    void ts_row(const std::string& entity, const std::string& metric, double t0, double t1,
                double v) {
        ts_rows_.push_back({entity, metric, t0, t1, v});
    }

    void on_metrics_tick() {
#ifdef NETFENCE_SIM_DEBUG
        for (uint32_t hn : senders_) {
            HostState& h = host_at(hn);
            if (h.role != Role::tcp || hn != NETFENCE_SIM_DEBUG) continue;
            const TcpConn& c = h.conn;
            double incr_age = -1, any_age = -1;
            auto it = h.present.find(h.dst);
            if (it != h.present.end()) {
                if (it->second.incr.has) incr_age = now_ - it->second.incr.fb.ts;
                if (it->second.any.has) any_age = now_ - it->second.any.fb.ts;
            }
            double lrate = -1, lcache = -1;
            RouterState& r = router_at(h.gw);
            for (auto& [k, e] : r.limiters)
                if (Addr(k >> 32) == hn) { lrate = e.rl.rate(); lcache = double(e.rl.cache_packets()); }
            fprintf(stderr,
                    "t=%7.2f host=%u st=%d una=%llu nxt=%llu cwnd=%.0f rto=%.2f prtx=%d "
                    "incr_age=%.1f any_age=%.1f lim_rate=%.0f cache=%.0f\n",
                    now_, hn, int(c.st), (unsigned long long)c.snd_una,
                    (unsigned long long)c.snd_nxt, c.cwnd, c.rto, int(c.pending_rtx),
                    incr_age, any_age, lrate, lcache);
        }
#endif
        double b = sc_.metrics_bucket;
        uint32_t legit_n = 0, atk_n = 0;
        for (uint32_t hn : senders_)
            (host_at(hn).legit ? legit_n : atk_n)++;
        if (now_ > 0) {
            if (legit_n)
                ts_row("class:legit", "goodput_bps", now_ - b, now_,
                       double(bucket_class_[0]) * 8.0 / b / legit_n);
            if (atk_n)
                ts_row("class:attacker", "goodput_bps", now_ - b, now_,
                       double(bucket_class_[1]) * 8.0 / b / atk_n);
        }
        bucket_class_[0] = bucket_class_[1] = 0;
        schedule(now_ + b, Ev::metrics_tick, 0, 0, 0);
    }

    Metrics finish() {
        Metrics m;
        m.duration = sc_.duration;
        m.warmup = sc_.warmup;
        m.good = sc_.legit_senders();
        m.bad = sc_.attacker_senders();
        double win = sc_.duration - sc_.warmup;
        for (uint32_t hn : senders_) {
            HostState& h = host_at(hn);
            SenderStat st;
            st.host = hn;
            st.legitimate = h.legit;
            st.role = role_name(h.role);
            st.throughput_bps = double(goodput_window_[hn]) * 8.0 / win;
            m.senders.push_back(st);
        }
        double legit = m.mean_legit_bps(), atk = m.mean_attacker_bps();
        m.throughput_ratio = atk > 0 ? legit / atk : 0;
        auto lt = m.legit_throughputs();
        bool all_zero = true;
        for (double v : lt) all_zero &= v == 0;
        m.fairness_index = (lt.empty() || all_zero) ? 0 : jain_index(lt);
        if (!bottlenecks_.empty()) {
            const LinkState& bl = links_[bottlenecks_.front()];
            m.bottleneck_bps = bl.bps;
            m.utilization = double(bl.tx_bits_window) / (bl.bps * win);
        }
        m.transfers.started = transfers_started_;
        m.transfers.completed = transfers_completed_;
        m.transfers.aborted = transfers_aborted_;
        if (!transfer_times_.empty()) {
            double s = 0;
            for (double t : transfer_times_) s += t;
            m.transfers.mean_time_s = s / double(transfer_times_.size());
        }
        m.trace_hash = trace_hash_;

        // summary rows
        auto row = [&](const std::string& e, const std::string& k, double v) {
            m.summary_rows.push_back({e, k, sc_.warmup, sc_.duration, v});
        };
        row("run", "throughput_ratio", m.throughput_ratio);
        row("run", "fairness_index", m.fairness_index);
        row("run", "utilization", m.utilization);
        row("run", "mean_legit_bps", legit);
        row("run", "mean_attacker_bps", atk);
        row("run", "min_legit_bps", m.min_legit_bps());
        row("run", "transfers_started", double(transfers_started_));
        row("run", "transfers_completed", double(transfers_completed_));
        row("run", "transfers_aborted", double(transfers_aborted_));
        row("run", "mean_transfer_s", m.transfers.mean_time_s);
        row("run", "request_drops", double(request_drops_));
        row("run", "limiter_drops", double(limiter_drops_));
        for (uint32_t li : bottlenecks_) {
            const LinkState& l = links_[li];
            row(l.label, "utilization", double(l.tx_bits_window) / (l.bps * win));
        }
        for (const auto& st : m.senders)
            m.summary_rows.push_back({"sender:" + std::to_string(st.host),
                                      st.role + "_goodput_bps", sc_.warmup, sc_.duration,
                                      st.throughput_bps});
        m.timeseries_rows = std::move(ts_rows_);

        // conservation audit per finite link: accepted bytes must equal
        // dequeued plus still-resident bytes (admission drops are counted
        // separately and never enter a queue)
        audits_.clear();
        for (const auto& l : links_) {
            if (l.bps <= 0) continue;
            LinkAudit a;
            a.label = l.label;
            a.enqueued = l.enq_bytes;
            a.dequeued = l.deq_bytes;
            a.dropped = l.drop_bytes;
            if (l.ch) a.resident = l.ch->backlog_bytes();
            else if (l.drr) a.resident = l.drr->bytes;
            else a.resident = l.fifo_bytes;
            audits_.push_back(a);
        }
        return m;
    }

    static std::string role_name(Role r) {
        switch (r) {
            case Role::tcp: return "tcp";
            case Role::tcp_files: return "tcp_files";
            case Role::udp_flood: return "udp_flood";
            case Role::udp_honest: return "udp_honest";
            case Role::onoff: return "onoff";
            case Role::request_flood: return "request_flood";
            case Role::adv_hide: return "adv_hide";
            case Role::adv_stale: return "adv_stale";
            case Role::adv_silent: return "adv_silent";
            case Role::legacy_cbr: return "legacy_cbr";
        }
        return "?";
    }

    // ------------------------------------------------------------------

    Scenario sc_;
    double now_ = 0;
    uint64_t seq_ = 0;
    uint64_t pkt_id_ = 0;
    std::priority_queue<Event, std::vector<Event>, EvAfter> q_;

    std::vector<NodeKind> kinds_;
    std::vector<AsId> node_as_;
    std::vector<uint32_t> node_state_idx_;
    std::vector<HostState> hosts_;
    std::vector<RouterState> routers_;
    std::vector<LinkState> links_;
    std::vector<std::vector<int32_t>> next_link_;
    std::map<Addr, uint32_t> host_index_;  // node id -> hosts_ index
    std::vector<uint32_t> senders_;
    std::vector<uint32_t> bottlenecks_;
    std::shared_ptr<crypto::KeyRegistry::PairTable> pair_keys_;

    std::vector<uint64_t> goodput_total_, goodput_window_;
    std::vector<uint64_t> bucket_class_;
    std::vector<MetricRow> ts_rows_;
    std::vector<LinkAudit> audits_;
    std::vector<double> transfer_times_;
    uint64_t transfers_started_ = 0, transfers_completed_ = 0, transfers_aborted_ = 0;
    uint64_t request_drops_ = 0, limiter_drops_ = 0;
    uint64_t trace_hash_ = 0x811c9dc5;
};

inline Metrics run_scenario(const Scenario& sc) {
    Simulator sim(sc);
    return sim.run();
}

} // namespace netfence::sim

#endif
