#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "netfence/crypto.hpp"
#include "netfence/rng.hpp"

using namespace netfence;
using namespace netfence::crypto;

namespace {

constexpr Addr kSrc = 0x0a000001;
constexpr Addr kDst = 0x0a000002;
constexpr AsId kSrcAs = 1;
constexpr AsId kBtlAs = 7;
constexpr LinkId kLink = 55;

struct Fixture {
    std::shared_ptr<KeyRegistry::PairTable> pairs;
    KeyRegistry access;   // the sender's access router
    KeyRegistry bottleneck;
    LinkAsLookup link_as;

    Fixture()
        : pairs(std::make_shared<KeyRegistry::PairTable>()),
          access(kSrcAs, 0xfeedULL, pairs), bottleneck(kBtlAs, 0xbeefULL, pairs) {
        access.set_pair_key(kSrcAs, kBtlAs, derive_key(99, 1));
        link_as = [](LinkId l) -> std::optional<AsId> {
            if (l == kLink) return kBtlAs;
            return std::nullopt;
        };
    }
};

} // namespace

TEST_CASE("nop feedback round-trips and covers the addresses") {
    Fixture f;
    auto fb = stamp_nop(kSrc, kDst, 100, f.access);
    CHECK(fb.mode == FbMode::nop);
    CHECK(fb.link == 0);
    CHECK(validate(fb, kSrc, kDst, 100, f.access, f.link_as).kind == Validity::valid_nop);

    // replayed on a different connection
    CHECK(validate(fb, kSrc, kDst + 1, 100, f.access, f.link_as).kind == Validity::invalid);
    CHECK(validate(fb, kSrc + 1, kDst, 100, f.access, f.link_as).kind == Validity::invalid);
}

TEST_CASE("feedback older than w is expired") {
    Fixture f;
    auto fb = stamp_nop(kSrc, kDst, 100, f.access);
    CHECK(validate(fb, kSrc, kDst, 105, f.access, f.link_as).kind == Validity::expired);
    CHECK(validate(fb, kSrc, kDst, 104, f.access, f.link_as).kind == Validity::valid_nop);
}

TEST_CASE("incr feedback round-trips; the link is covered") {
    Fixture f;
    auto fb = stamp_incr(kSrc, kDst, 200, kLink, f.access);
    auto v = validate(fb, kSrc, kDst, 201, f.access, f.link_as);
    CHECK(v.kind == Validity::valid_incr);
    CHECK(v.link == kLink);

    auto tampered = fb;
    tampered.link ^= 1;
    CHECK(!validate(tampered, kSrc, kDst, 201, f.access, f.link_as).ok());
}

TEST_CASE("token_nop of incr equals the nop mac at identical inputs") {
    Fixture f;
    auto incr = stamp_incr(kSrc, kDst, 300, kLink, f.access);
    auto nop = stamp_nop(kSrc, kDst, 300, f.access);
    CHECK(incr.token_nop == nop.mac);
}

TEST_CASE("decr over nop validates at the access router") {
    Fixture f;
    auto nop = stamp_nop(kSrc, kDst, 400, f.access);
    auto decr = stamp_decr(nop, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
    REQUIRE(decr.has_value());
    CHECK(decr->token_nop == 0);
    CHECK(decr->ts == nop.ts);
    auto v = validate(*decr, kSrc, kDst, 401, f.access, f.link_as);
    CHECK(v.kind == Validity::valid_decr);
    CHECK(v.link == kLink);
}

TEST_CASE("decr over incr validates and erases the token") {
    Fixture f;
    auto incr = stamp_incr(kSrc, kDst, 410, kLink, f.access);
    auto decr = stamp_decr(incr, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
    REQUIRE(decr.has_value());
    CHECK(decr->token_nop == 0);
    CHECK(validate(*decr, kSrc, kDst, 411, f.access, f.link_as).kind == Validity::valid_decr);
}

TEST_CASE("a downstream router cannot overwrite decr without the token") {
    Fixture f;
    auto nop = stamp_nop(kSrc, kDst, 420, f.access);
    auto decr = stamp_decr(nop, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
    REQUIRE(decr.has_value());
    // the downstream router only sees the erased token field
    auto forged = stamp_decr(*decr, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
    REQUIRE(forged.has_value());
    CHECK(!validate(*forged, kSrc, kDst, 421, f.access, f.link_as).ok());
}

TEST_CASE("decr with a tampered timestamp is invalid") {
    Fixture f;
    auto nop = stamp_nop(kSrc, kDst, 430, f.access);
    auto decr = stamp_decr(nop, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
    auto tampered = *decr;
    tampered.ts += 1;
    CHECK(!validate(tampered, kSrc, kDst, 431, f.access, f.link_as).ok());
}

TEST_CASE("missing pair key fails stamping and validation") {
    Fixture f;
    auto nop = stamp_nop(kSrc, kDst, 440, f.access);
    KeyRegistry lonely(kBtlAs + 1, 0x11, nullptr);
    CHECK(!stamp_decr(nop, kSrc, kDst, kLink, lonely, kSrcAs).has_value());

    // validator cannot resolve the link's AS
    auto decr = stamp_decr(nop, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
    auto no_as = [](LinkId) -> std::optional<AsId> { return std::nullopt; };
    CHECK(validate(*decr, kSrc, kDst, 441, f.access, no_as).kind == Validity::invalid);
}

TEST_CASE("the decr chain binds the original token") {
    Fixture f;
    auto nop = stamp_nop(kSrc, kDst, 450, f.access);
    auto corrupted = nop;
    corrupted.mac ^= 0x4;  // the folded token no longer matches Eq-chain recomputation
    auto decr = stamp_decr(corrupted, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
    REQUIRE(decr.has_value());
    CHECK(!validate(*decr, kSrc, kDst, 451, f.access, f.link_as).ok());
}

TEST_CASE("single-bit flips over every field are rejected") {
    Fixture f;
    auto nop = stamp_nop(kSrc, kDst, 500, f.access);
    auto incr = stamp_incr(kSrc, kDst, 500, kLink, f.access);
    auto decr = *stamp_decr(incr, kSrc, kDst, kLink, f.bottleneck, kSrcAs);

    auto check_all_flips = [&](const Feedback& fb) {
        // src and dst flips
        for (int b = 0; b < 32; b++) {
            REQUIRE(!validate(fb, kSrc ^ (1u << b), kDst, 500, f.access, f.link_as).ok());
            REQUIRE(!validate(fb, kSrc, kDst ^ (1u << b), 500, f.access, f.link_as).ok());
        }
        // field flips; large ts flips land in the expired class, which is
        // still a rejection
        for (int b = 0; b < 32; b++) {
            Feedback t = fb;
            t.ts ^= (1u << b);
            REQUIRE(!validate(t, kSrc, kDst, 500, f.access, f.link_as).ok());
            t = fb;
            t.link ^= (1u << b);
            REQUIRE(!validate(t, kSrc, kDst, 500, f.access, f.link_as).ok());
        }
        {
            Feedback t = fb;
            t.action = t.action == FbAction::incr ? FbAction::decr : FbAction::incr;
            REQUIRE(!validate(t, kSrc, kDst, 500, f.access, f.link_as).ok());
            t = fb;
            t.mode = t.mode == FbMode::nop ? FbMode::mon : FbMode::nop;
            REQUIRE(!validate(t, kSrc, kDst, 500, f.access, f.link_as).ok());
        }
        for (int b = 0; b < 64; b++) {
            Feedback t = fb;
            t.mac ^= (1ull << b);
            REQUIRE(!validate(t, kSrc, kDst, 500, f.access, f.link_as).ok());
        }
    };
    check_all_flips(nop);
    check_all_flips(incr);
    check_all_flips(decr);
}

TEST_CASE("random macs are rejected (forgery only by collision)") {
    Fixture f;
    Rng rng(7, 7);
    for (int i = 0; i < 20000; i++) {
        Feedback fb;
        fb.mode = FbMode::mon;
        fb.action = FbAction::incr;
        fb.link = kLink;
        fb.ts = 600;
        fb.mac = rng.next_u64();
        REQUIRE(!validate(fb, kSrc, kDst, 600, f.access, f.link_as).ok());
    }
}

TEST_CASE("stamping is deterministic within an epoch") {
    Fixture f;
    auto a = stamp_incr(kSrc, kDst, 700, kLink, f.access);
    auto b = stamp_incr(kSrc, kDst, 700, kLink, f.access);
    CHECK(a == b);
}

TEST_CASE("key rotation keeps a one-epoch grace window") {
    Fixture f;
    auto fb = stamp_nop(kSrc, kDst, 800, f.access);

    SUBCASE("valid across one rotation") {
        f.access.rotate();
        CHECK(validate(fb, kSrc, kDst, 803, f.access, f.link_as).kind == Validity::valid_nop);
    }
    SUBCASE("invalid across two rotations") {
        f.access.rotate();
        f.access.rotate();
        CHECK(validate(fb, kSrc, kDst, 803, f.access, f.link_as).kind == Validity::invalid);
    }
    SUBCASE("two rotations advance the epoch by exactly two") {
        auto e = f.access.epoch();
        f.access.rotate();
        f.access.rotate();
        CHECK(f.access.epoch() == e + 2);
    }
    SUBCASE("decr grace: token recomputed under the stamping epoch") {
        auto decr = stamp_decr(fb, kSrc, kDst, kLink, f.bottleneck, kSrcAs);
        f.access.rotate();
        CHECK(validate(*decr, kSrc, kDst, 803, f.access, f.link_as).kind ==
              Validity::valid_decr);
    }
}

TEST_CASE("key table parsing") {
    SUBCASE("well-formed table with comments") {
        std::istringstream in(
            "# pair keys\n"
            "1 7 000102030405060708090a0b0c0d0e0f\n"
            "\n"
            "7 2 ffeeddccbbaa99887766554433221100  # reordered pair\n");
        auto table = parse_key_table(in);
        REQUIRE(table.size() == 2);
        CHECK(table.count({1, 7}) == 1);
        CHECK(table.count({2, 7}) == 1);
        CHECK(table[{1, 7}].b[0] == 0x00);
        CHECK(table[{1, 7}].b[15] == 0x0f);
        CHECK(table[{2, 7}].b[0] == 0xff);
    }
    SUBCASE("short key is rejected with the line number") {
        std::istringstream in("1 2 00112233\n");
        CHECK_THROWS_WITH_AS(parse_key_table(in),
                             doctest::Contains("line 1"), std::runtime_error);
    }
    SUBCASE("bad hex digit is rejected") {
        std::istringstream in("\n1 2 zz102030405060708090a0b0c0d0e0f0\n");
        CHECK_THROWS_WITH_AS(parse_key_table(in),
                             doctest::Contains("line 2"), std::runtime_error);
    }
}
