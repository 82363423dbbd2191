#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "netfence/limiter.hpp"
#include "netfence/rng.hpp"

using namespace netfence;

namespace {

struct Pkt {
    uint32_t len = 1500;
    uint32_t wire_len() const { return len; }
};

Params params_with(double init_rate) {
    Params p;
    p.init_rate_bps = init_rate;
    return p;
}

} // namespace

// ---------------------------------------------------------------------------
// request policing
// ---------------------------------------------------------------------------

TEST_CASE("level-0 requests are never rate limited") {
    RequestLimiter rl(1000.0, 100.0, 0.0);
    rl.set_tokens(0.0, 0.0);
    CHECK(rl.police(0, 0.0));
    CHECK(rl.tokens(0.0) == doctest::Approx(0.0));
}

TEST_CASE("insufficient tokens drop without deduction") {
    RequestLimiter rl(1000.0, 100.0, 0.0);
    rl.set_tokens(3.0, 0.0);
    CHECK(!rl.police(3, 0.0));  // level 3 costs 4
    CHECK(rl.tokens(0.0) == doctest::Approx(3.0));
}

TEST_CASE("admission deducts 2^(k-1) tokens") {
    RequestLimiter rl(1000.0, 10.0, 0.0);
    rl.set_tokens(10.0, 0.0);
    CHECK(rl.police(2, 0.0));  // level 2 costs 2
    CHECK(rl.tokens(0.0) == doctest::Approx(8.0));
}

TEST_CASE("accrual since the last admission is uncapped for the drop check") {
    // depth 100, but one second of waiting affords a level-10 packet (512)
    RequestLimiter rl(1000.0, 100.0, 0.0);
    rl.set_tokens(0.0, 0.0);
    CHECK(!rl.police(10, 0.1));
    CHECK(rl.police(10, 1.0));
    // the carried balance was capped at depth before deduction
    CHECK(rl.tokens(1.0) == doctest::Approx(0.0));
}

TEST_CASE("sustained pass rate of level-k packets is refill/2^(k-1)") {
    Rng rng(17, 1);
    for (uint32_t k = 1; k <= 10; k++) {
        RequestLimiter rl(1000.0, 100.0, 0.0);
        // offered at ~40x the sustainable rate with jitter so the admission
        // boundary is never grazed exactly
        double period = std::ldexp(1.0, int(k) - 1) / 1000.0;
        uint64_t passes = 0;
        double t0 = 50.0, t1 = t0 + 200.0;
        for (double t = 0.0; t < t1;) {
            bool ok = rl.police(k, t);
            if (ok && t >= t0) passes++;
            t += rng.uniform(0.5, 1.5) * period / 40.0;
        }
        double rate = double(passes) / (t1 - t0);
        double expect = 1000.0 / std::ldexp(1.0, int(k) - 1);
        CHECK(rate == doctest::Approx(expect).epsilon(0.05));
    }
}

// ---------------------------------------------------------------------------
// regular-packet leaky bucket
// ---------------------------------------------------------------------------

TEST_CASE("pass when the inter-departure spacing is met") {
    // 80 kbps, 1500 B needs 0.15 s of spacing
    RateLimiter<Pkt> rl(0.0, params_with(80000.0));
    REQUIRE(rl.police(Pkt{1500}, 10.0) == PoliceVerdict::pass);  // first ever departs at once
    CHECK(rl.police(Pkt{1500}, 10.15) == PoliceVerdict::pass);
}

TEST_CASE("insufficient spacing caches and schedules the unleash") {
    RateLimiter<Pkt> rl(0.0, params_with(80000.0));
    REQUIRE(rl.police(Pkt{1500}, 10.0) == PoliceVerdict::pass);
    CHECK(rl.police(Pkt{1500}, 10.10) == PoliceVerdict::cached);
    CHECK(rl.next_unleash_time() == doctest::Approx(10.15));
}

TEST_CASE("cache beyond the delay bound drops") {
    Params p = params_with(80000.0);
    p.max_cache_delay = 1.0;
    RateLimiter<Pkt> rl(0.0, p);
    REQUIRE(rl.police(Pkt{1500}, 0.0) == PoliceVerdict::pass);
    // admission keeps the backlog within 1 s of service; fill close to it,
    // then rate decreases leave the cache holding more service time than
    // the bound, and the next packet is dropped
    while (rl.cache_bytes() + 1500 <= 8000)
        REQUIRE(rl.police(Pkt{1500}, 0.0) == PoliceVerdict::cached);
    while (double(rl.cache_bytes()) * 8.0 / rl.rate() <= 1.2) rl.adjust(2.0);
    CHECK(double(rl.cache_bytes()) * 8.0 / rl.rate() > 1.2);
    CHECK(rl.police(Pkt{1500}, 2.0) == PoliceVerdict::drop);
}

TEST_CASE("unleash is fifo and paces departures at the rate limit") {
    // two 1500 B packets at 120 kbps depart 0.1 s apart
    RateLimiter<Pkt> rl(0.0, params_with(120000.0));
    REQUIRE(rl.police(Pkt{1500}, 5.0) == PoliceVerdict::pass);
    REQUIRE(rl.police(Pkt{100}, 5.0) == PoliceVerdict::cached);
    REQUIRE(rl.police(Pkt{200}, 5.0) == PoliceVerdict::cached);
    double t1 = rl.next_unleash_time();
    CHECK(t1 == doctest::Approx(5.0 + 100.0 * 8.0 / 120000.0));
    auto pkt = rl.unleash(t1);
    REQUIRE(pkt.has_value());
    CHECK(pkt->len == 100);
    double t2 = rl.next_unleash_time();
    CHECK(t2 == doctest::Approx(t1 + 200.0 * 8.0 / 120000.0));
    auto pkt2 = rl.unleash(t2);
    REQUIRE(pkt2.has_value());
    CHECK(pkt2->len == 200);
    CHECK(!rl.unleash(t2 + 1.0).has_value());
}

TEST_CASE("departures of equal packets are spaced len/rate apart") {
    RateLimiter<Pkt> rl(0.0, params_with(120000.0));
    REQUIRE(rl.police(Pkt{1500}, 1.0) == PoliceVerdict::pass);
    REQUIRE(rl.police(Pkt{1500}, 1.0) == PoliceVerdict::cached);
    CHECK(rl.next_unleash_time() == doctest::Approx(1.1));  // 12000 / 120000
}

// ---------------------------------------------------------------------------
// feedback bookkeeping and AIMD
// ---------------------------------------------------------------------------

TEST_CASE("update_status latches only fresh incr for the own link") {
    RateLimiter<Pkt> rl(100.0, params_with(100000.0));
    REQUIRE(rl.interval_start() == doctest::Approx(100.0));

    SUBCASE("incr with ts == t_s sets the flag") {
        rl.update_status(FbAction::incr, true, 100, 100.5);
        CHECK(rl.has_incr());
    }
    SUBCASE("stale incr leaves it clear") {
        rl.update_status(FbAction::incr, true, 99, 100.5);
        CHECK(!rl.has_incr());
    }
    SUBCASE("decr never sets it") {
        rl.update_status(FbAction::decr, true, 101, 101.0);
        CHECK(!rl.has_incr());
    }
}

// Drives `bytes` of egress through the limiter within one interval.
static void drive_egress(RateLimiter<Pkt>& rl, double t0, uint64_t bytes, uint32_t plen) {
    double t = t0;
    for (uint64_t sent = 0; sent < bytes; sent += plen) {
        t += double(plen) * 8.0 / rl.rate() + 1e-6;
        REQUIRE(rl.police(Pkt{plen}, t) == PoliceVerdict::pass);
    }
}

TEST_CASE("adjust: increase only above half the limit") {
    SUBCASE("throughput 60 kbps > 50 kbps: increase by delta") {
        RateLimiter<Pkt> rl(0.0, params_with(100000.0));
        drive_egress(rl, 0.0, 15000, 1500);  // 15 kB over 2 s = 60 kbps
        rl.update_status(FbAction::incr, true, 1, 1.0);
        auto out = rl.adjust(2.0);
        CHECK(out.throughput_bps == doctest::Approx(60000.0));
        CHECK(rl.rate() == doctest::Approx(112000.0));
        CHECK(out.increased);
    }
    SUBCASE("throughput 40 kbps < 50 kbps: unchanged") {
        RateLimiter<Pkt> rl(0.0, params_with(100000.0));
        drive_egress(rl, 0.0, 10000, 1000);  // 40 kbps
        rl.update_status(FbAction::incr, true, 1, 1.0);
        auto out = rl.adjust(2.0);
        CHECK(rl.rate() == doctest::Approx(100000.0));
        CHECK(!out.increased);
        CHECK(!out.decreased);
    }
    SUBCASE("without fresh incr: multiplicative decrease") {
        RateLimiter<Pkt> rl(0.0, params_with(100000.0));
        drive_egress(rl, 0.0, 15000, 1500);
        auto out = rl.adjust(2.0);
        CHECK(rl.rate() == doctest::Approx(90000.0));
        CHECK(out.decreased);
    }
}

TEST_CASE("adjust resets the interval state") {
    RateLimiter<Pkt> rl(0.0, params_with(100000.0));
    drive_egress(rl, 0.0, 15000, 1500);
    rl.update_status(FbAction::incr, true, 1, 1.0);
    rl.adjust(2.0);
    CHECK(!rl.has_incr());
    CHECK(rl.interval_bytes() == 0);
    CHECK(rl.interval_start() == doctest::Approx(2.0));
}

TEST_CASE("the rate never decays below the floor") {
    Params p = params_with(2000.0);
    p.rate_floor_bps = 1000.0;
    RateLimiter<Pkt> rl(0.0, p);
    for (int i = 0; i < 50; i++) rl.adjust(2.0 * (i + 1));
    CHECK(rl.rate() == doctest::Approx(1000.0));
}

TEST_CASE("an adversarial interval always ends in a decrease") {
    // whatever mix of stale incr, decr, or silence is presented, the next
    // adjustment is multiplicative decrease
    RateLimiter<Pkt> rl(100.0, params_with(100000.0));
    Rng rng(3, 9);
    for (int trial = 0; trial < 200; trial++) {
        double t0 = rl.interval_start();
        int moves = int(rng.below(6));
        for (int m = 0; m < moves; m++) {
            switch (rng.below(3)) {
                case 0:  // stale incr replay (older than the interval start)
                    rl.update_status(FbAction::incr, true, uint32_t(t0) - 1 - uint32_t(rng.below(3)),
                                     t0 + 0.5);
                    break;
                case 1:  // fresh decr (hiding it changes nothing either)
                    rl.update_status(FbAction::decr, true, uint32_t(t0) + 1, t0 + 0.5);
                    break;
                default:  // silence
                    break;
            }
        }
        double before = rl.rate();
        auto out = rl.adjust(t0 + 2.0);
        REQUIRE((out.decreased || before == doctest::Approx(1000.0)));
        REQUIRE(rl.rate() == doctest::Approx(std::max(before * 0.9, 1000.0)));
    }
}

TEST_CASE("leaky bucket bound: egress in any interval window stays under r*I + MTU") {
    Params p = params_with(100000.0);
    RateLimiter<Pkt> rl(0.0, p);
    Rng rng(11, 4);
    std::vector<std::pair<double, uint32_t>> departures;
    double now = 0.0;
    double next_unleash = std::numeric_limits<double>::quiet_NaN();
    // offered ~3x the rate limit in bursts; interleave unleashes
    for (int i = 0; i < 4000; i++) {
        now += rng.uniform(0.0, 0.08);
        while (!std::isnan(next_unleash) && next_unleash <= now) {
            auto pkt = rl.unleash(next_unleash);
            if (pkt) departures.push_back({next_unleash, pkt->len});
            next_unleash = rl.next_unleash_time();
        }
        uint32_t len = 200 + uint32_t(rng.below(1300));
        auto v = rl.police(Pkt{len}, now);
        if (v == PoliceVerdict::pass) departures.push_back({now, len});
        if (v == PoliceVerdict::cached) next_unleash = rl.next_unleash_time();
    }
    double I = p.i_lim;
    double bound = rl.rate() * I / 8.0 + p.mtu;
    size_t lo = 0;
    uint64_t win = 0;
    for (size_t hi = 0; hi < departures.size(); hi++) {
        win += departures[hi].second;
        while (departures[lo].first < departures[hi].first - I) win -= departures[lo++].second;
        REQUIRE(double(win) <= bound + 0.5);
    }
}

// ---------------------------------------------------------------------------
// garbage collection rule
// ---------------------------------------------------------------------------

TEST_CASE("limiter expiry follows the idle rule") {
    double t_a = 600.0;
    SUBCASE("idle past t_a with no drops is expired") {
        RateLimiter<Pkt> rl(0.0, params_with(100000.0));
        rl.update_status(FbAction::decr, true, 0, 10.0);
        CHECK(rl.expired(10.0 + t_a + 1.0, t_a));
    }
    SUBCASE("a drop inside the window keeps it alive") {
        RateLimiter<Pkt> rl(0.0, params_with(100000.0));
        rl.update_status(FbAction::decr, true, 0, 10.0);
        rl.note_drop(10.0 + t_a / 2.0);
        CHECK(!rl.expired(10.0 + t_a + 1.0, t_a));
    }
    SUBCASE("fresh decr keeps it alive") {
        RateLimiter<Pkt> rl(0.0, params_with(100000.0));
        rl.update_status(FbAction::decr, true, 0, t_a);
        CHECK(!rl.expired(t_a + 10.0, t_a));
    }
}

// ---------------------------------------------------------------------------
// extended adjustment rules (rate limiter inference)
// ---------------------------------------------------------------------------

TEST_CASE("extended rules: foreign incr counts toward increase") {
    RateLimiter<Pkt> rl(0.0, params_with(100000.0));
    drive_egress(rl, 0.0, 15000, 1500);  // 60 kbps >= half
    rl.update_status(FbAction::incr, false, 1, 1.0);  // hasIncr* only
    rl.adjust(2.0, true);
    CHECK(rl.rate() == doctest::Approx(112000.0));
}

TEST_CASE("extended rules: own-link activity without fresh incr decreases") {
    RateLimiter<Pkt> rl(0.0, params_with(100000.0));
    rl.update_status(FbAction::decr, true, 1, 1.0);  // isActive
    rl.adjust(2.0, true);
    CHECK(rl.rate() == doctest::Approx(90000.0));
}

TEST_CASE("extended rules: only foreign feedback holds the rate") {
    RateLimiter<Pkt> rl(0.0, params_with(100000.0));
    rl.update_status(FbAction::decr, false, 1, 1.0);  // isActive* only
    rl.adjust(2.0, true);
    CHECK(rl.rate() == doctest::Approx(100000.0));
}

TEST_CASE("extended rules: total silence decreases") {
    RateLimiter<Pkt> rl(0.0, params_with(100000.0));
    rl.adjust(2.0, true);
    CHECK(rl.rate() == doctest::Approx(90000.0));
}

TEST_CASE("extended rules: increase requires throughput at least half") {
    RateLimiter<Pkt> rl(0.0, params_with(100000.0));
    drive_egress(rl, 0.0, 12500, 1250);  // exactly 50 kbps
    rl.update_status(FbAction::incr, true, 1, 1.0);
    rl.adjust(2.0, true);  // >= comparison in the extended rules
    CHECK(rl.rate() == doctest::Approx(112000.0));
}

// ---------------------------------------------------------------------------
// virtual-clock admission used by multi-limiter policing
// ---------------------------------------------------------------------------

TEST_CASE("virtual clock reproduces leaky-bucket spacing") {
    RateLimiter<Pkt> rl(0.0, params_with(120000.0));
    double r1 = rl.release_candidate(1500, 10.0);
    CHECK(r1 == doctest::Approx(10.0));
    rl.commit_release(1500, 10.0);
    double r2 = rl.release_candidate(1500, 10.0);
    CHECK(r2 == doctest::Approx(10.1));
    rl.commit_release(1500, 10.0);
    CHECK(rl.release_candidate(1500, 10.0) == doctest::Approx(10.2));
    // a later arrival after the bucket drained departs immediately
    CHECK(rl.release_candidate(1500, 20.0) == doctest::Approx(20.0));
}
