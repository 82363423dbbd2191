#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "netfence/rng.hpp"
#include "netfence/wire.hpp"

using namespace netfence;
using wire::DecodeStatus;
using wire::Header;

// Independent size oracle: sum the field layout by hand.
static size_t size_oracle(const Header& h) {
    size_t n = 1 /*flags*/ + 1 /*proto*/ + 1 /*priority*/ + 4 /*fwd_ts*/ + 8 /*fwd_mac*/;
    if (h.fwd_mode == FbMode::mon) n += 4 /*link*/ + 8 /*token_nop*/;
    if (h.ret_present) n += 8 /*ret_mac*/;
    if (h.ret_present && h.ret_mode == FbMode::mon) n += 4 /*ret_link*/;
    return n;
}

static Header random_header(Rng& rng) {
    Header h;
    h.fwd_mode = rng.bernoulli(0.5) ? FbMode::mon : FbMode::nop;
    h.fwd_action = rng.bernoulli(0.5) ? FbAction::decr : FbAction::incr;
    h.proto = uint8_t(rng.below(256));
    h.priority = uint8_t(rng.below(16));
    h.fwd_ts = uint32_t(rng.next_u64());
    h.fwd_mac = rng.next_u64();
    if (h.fwd_mode == FbMode::mon) {
        h.fwd_link = uint32_t(rng.below(0xfffffffe)) + 1;
        h.token_nop = rng.next_u64();
    }
    h.ret_present = rng.bernoulli(0.7);
    if (h.ret_present) {
        h.ret_mode = rng.bernoulli(0.5) ? FbMode::mon : FbMode::nop;
        h.ret_action = rng.bernoulli(0.5) ? FbAction::decr : FbAction::incr;
        h.ret_ts2 = uint8_t(rng.below(4));
        h.ret_mac = rng.next_u64();
        if (h.ret_mode == FbMode::mon) h.ret_link = uint32_t(rng.below(0xfffffffe)) + 1;
    }
    return h;
}

TEST_CASE("nop/nop header is 23 bytes and round-trips") {
    Header h;
    h.proto = 6;
    h.priority = 0;
    h.fwd_ts = 1234;
    h.fwd_mac = 0x1122334455667788ULL;
    h.ret_present = true;
    h.ret_mac = 0x99aabbccddeeff00ULL;
    h.ret_ts2 = 2;
    auto enc = wire::encode(h);
    REQUIRE(enc.has_value());
    CHECK(enc->size() == 23);
    CHECK(enc->size() == size_oracle(h));
    Header back;
    size_t used = 0;
    CHECK(wire::decode(*enc, back, &used) == DecodeStatus::ok);
    CHECK(used == 23);
    CHECK(back == h);
}

TEST_CASE("mon forward with nop return is 35 bytes") {
    Header h;
    h.fwd_mode = FbMode::mon;
    h.fwd_action = FbAction::incr;
    h.fwd_link = 7;
    h.token_nop = 42;
    h.fwd_mac = 43;
    h.ret_present = true;
    h.ret_mode = FbMode::nop;
    h.ret_mac = 44;
    auto enc = wire::encode(h);
    REQUIRE(enc.has_value());
    CHECK(enc->size() == 35);  // 23 + 4 link + 8 token_nop
    CHECK(enc->size() == size_oracle(h));
}

TEST_CASE("mon/mon header is 39 bytes") {
    Header h;
    h.fwd_mode = FbMode::mon;
    h.fwd_link = 9;
    h.token_nop = 1;
    h.ret_present = true;
    h.ret_mode = FbMode::mon;
    h.ret_action = FbAction::decr;
    h.ret_link = 9;
    h.ret_mac = 5;
    auto enc = wire::encode(h);
    REQUIRE(enc.has_value());
    CHECK(enc->size() == 39);
    CHECK(enc->size() == size_oracle(h));
    Header back;
    CHECK(wire::decode(*enc, back) == DecodeStatus::ok);
    CHECK(back == h);
}

TEST_CASE("round-trip property over random headers") {
    Rng rng(0xc0de, 1);
    for (int i = 0; i < 20000; i++) {
        Header h = random_header(rng);
        auto enc = wire::encode(h);
        REQUIRE(enc.has_value());
        REQUIRE(enc->size() == size_oracle(h));
        Header back;
        size_t used = 0;
        REQUIRE(wire::decode(*enc, back, &used) == DecodeStatus::ok);
        REQUIRE(used == enc->size());
        REQUIRE(back == h);
        // re-encoding the decoded header reproduces the byte string
        auto enc2 = wire::encode(back);
        REQUIRE(enc2.has_value());
        REQUIRE(*enc2 == *enc);
    }
}

TEST_CASE("encoded length is a pure function of the presence flags") {
    Rng rng(0xc0de, 2);
    for (int i = 0; i < 2000; i++) {
        Header a = random_header(rng);
        Header b = random_header(rng);
        // force b's presence flags to a's
        b.fwd_mode = a.fwd_mode;
        b.ret_present = a.ret_present;
        b.ret_mode = a.ret_mode;
        if (b.fwd_mode == FbMode::nop) {
            b.fwd_link = 0;
            b.token_nop = 0;
        } else if (b.fwd_link == 0) {
            b.fwd_link = 1;
        }
        if (!b.ret_present) {
            b.ret_mode = FbMode::nop;
            b.ret_action = FbAction::incr;
            b.ret_ts2 = 0;
            b.ret_mac = 0;
            b.ret_link = 0;
        } else if (b.ret_mode == FbMode::nop) {
            b.ret_link = 0;
        } else if (b.ret_link == 0) {
            b.ret_link = 1;
        }
        auto ea = wire::encode(a);
        auto eb = wire::encode(b);
        REQUIRE(ea.has_value());
        REQUIRE(eb.has_value());
        REQUIRE(ea->size() == eb->size());
    }
}

TEST_CASE("truncated and malformed inputs are rejected") {
    Header h;
    h.ret_present = true;
    auto enc = wire::encode(h);
    REQUIRE(enc->size() == 23);

    Header out;
    SUBCASE("22-byte input is below the nop/nop length") {
        std::vector<uint8_t> b(enc->begin(), enc->begin() + 22);
        CHECK(wire::decode(b, out) == DecodeStatus::truncated);
    }
    SUBCASE("under 15 bytes can never hold a header") {
        std::vector<uint8_t> b(enc->begin(), enc->begin() + 14);
        CHECK(wire::decode(b, out) == DecodeStatus::truncated);
    }
    SUBCASE("flags claim mon but the buffer ends before the link id") {
        Header m;
        m.fwd_mode = FbMode::mon;
        m.fwd_link = 3;
        m.token_nop = 99;
        auto me = wire::encode(m);
        REQUIRE(me->size() == 27);
        std::vector<uint8_t> b(me->begin(), me->begin() + 17);
        CHECK(wire::decode(b, out) == DecodeStatus::truncated);
    }
    SUBCASE("reserved flag bit set") {
        auto b = *enc;
        b[0] |= 0x80;
        CHECK(wire::decode(b, out) == DecodeStatus::malformed);
    }
    SUBCASE("return fields without ret_present") {
        auto b = *wire::encode(Header{});
        REQUIRE(b.size() == 15);
        b[0] |= 0x20;  // ret_ts2 bits with ret_present clear
        CHECK(wire::decode(b, out) == DecodeStatus::malformed);
    }
}

TEST_CASE("encode rejects presence violations") {
    Header h;
    h.fwd_mode = FbMode::nop;
    h.fwd_link = 5;  // link without mon
    CHECK(!wire::encode(h).has_value());

    Header g;
    g.fwd_mode = FbMode::mon;
    g.fwd_link = 0;  // mon without a link id
    CHECK(!wire::encode(g).has_value());

    Header r;
    r.ret_present = false;
    r.ret_mac = 1;
    CHECK(!wire::encode(r).has_value());
}

// Brute-force oracle: the unique t <= now with now - t < 4, t % 4 == ts2.
static uint32_t reconstruct_oracle(uint32_t now, uint8_t ts2) {
    for (uint32_t t = now;; t--)
        if (t % 4 == ts2) return t;
}

TEST_CASE("timestamp reconstruction") {
    CHECK(wire::reconstruct_timestamp(1000, 0) == 1000);
    CHECK(wire::reconstruct_timestamp(1000, 3) == 999);   // candidates {997..1000}
    CHECK(wire::reconstruct_timestamp(1001, 3) == 999);   // candidates {998..1001}
    for (uint32_t now = 3; now < 5000; now++)
        for (uint8_t ts2 = 0; ts2 < 4; ts2++)
            REQUIRE(wire::reconstruct_timestamp(now, ts2) == reconstruct_oracle(now, ts2));
}

TEST_CASE("reconstruction inverts compression for fresh timestamps") {
    for (uint32_t t = 100; t < 2000; t++)
        for (uint32_t age = 0; age < 4; age++)
            REQUIRE(wire::reconstruct_timestamp(t + age, uint8_t(t % 4)) == t);
}

TEST_CASE("hex dump formats bytes") {
    std::vector<uint8_t> b{0xde, 0xad, 0xbe, 0xef};
    CHECK(wire::hex_dump(b) == "de ad be ef");
}
