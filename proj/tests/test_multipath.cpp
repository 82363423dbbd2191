#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "netfence/multipath.hpp"
#include "netfence/rng.hpp"

using namespace netfence;
using namespace netfence::multipath;

namespace {

constexpr Addr kSrc = 0x0a010101;
constexpr Addr kDst = 0x0a020202;
constexpr AsId kSrcAs = 1;
constexpr AsId kAs1 = 5, kAs2 = 6;
constexpr LinkId kL1 = 101, kL2 = 202;

struct Fixture {
    std::shared_ptr<crypto::KeyRegistry::PairTable> pairs;
    crypto::KeyRegistry access, btl1, btl2;
    crypto::LinkAsLookup link_as;

    Fixture()
        : pairs(std::make_shared<crypto::KeyRegistry::PairTable>()),
          access(kSrcAs, 0x1234, pairs), btl1(kAs1, 0x777, pairs),
          btl2(kAs2, 0x888, pairs) {
        access.set_pair_key(kSrcAs, kAs1, crypto::derive_key(5, 5));
        access.set_pair_key(kSrcAs, kAs2, crypto::derive_key(6, 6));
        link_as = [](LinkId l) -> std::optional<AsId> {
            if (l == kL1) return kAs1;
            if (l == kL2) return kAs2;
            return std::nullopt;
        };
    }
};

} // namespace

TEST_CASE("empty multi-feedback validates as a plain nop chain") {
    Fixture f;
    auto fb = stamp_nop_multi(kSrc, kDst, 100, f.access);
    CHECK(fb.empty());
    CHECK(validate_multi(fb, kSrc, kDst, 101, f.access, f.link_as) == MultiValidity::valid);
    CHECK(validate_multi(fb, kSrc, kDst, 105, f.access, f.link_as) == MultiValidity::expired);
}

TEST_CASE("a single stamped entry folds over the base token") {
    Fixture f;
    auto fb = stamp_nop_multi(kSrc, kDst, 100, f.access);
    uint64_t base = fb.token;
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL1, FbAction::incr, f.btl1, kSrcAs));
    REQUIRE(fb.count == 1);
    CHECK(fb.entries[0].link == kL1);
    CHECK(fb.token != base);
    CHECK(validate_multi(fb, kSrc, kDst, 101, f.access, f.link_as) == MultiValidity::valid);
}

TEST_CASE("two stamps replay in order; swapping entries breaks the fold") {
    Fixture f;
    auto fb = stamp_nop_multi(kSrc, kDst, 100, f.access);
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL1, FbAction::incr, f.btl1, kSrcAs));
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL2, FbAction::decr, f.btl2, kSrcAs));
    CHECK(validate_multi(fb, kSrc, kDst, 101, f.access, f.link_as) == MultiValidity::valid);

    auto swapped = fb;
    std::swap(swapped.entries[0], swapped.entries[1]);
    CHECK(validate_multi(swapped, kSrc, kDst, 101, f.access, f.link_as) ==
          MultiValidity::invalid);
}

TEST_CASE("any single mutation of a 3-entry chain invalidates it") {
    Fixture f;
    f.access.set_pair_key(kSrcAs, kAs1, crypto::derive_key(5, 5));
    auto fb = stamp_nop_multi(kSrc, kDst, 100, f.access);
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL1, FbAction::incr, f.btl1, kSrcAs));
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL2, FbAction::decr, f.btl2, kSrcAs));
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL1, FbAction::decr, f.btl1, kSrcAs));
    REQUIRE(validate_multi(fb, kSrc, kDst, 101, f.access, f.link_as) == MultiValidity::valid);

    // flip every bit of every entry
    for (uint8_t i = 0; i < fb.count; i++) {
        for (int b = 0; b < 32; b++) {
            auto m = fb;
            m.entries[i].link ^= (1u << b);
            REQUIRE(validate_multi(m, kSrc, kDst, 101, f.access, f.link_as) !=
                    MultiValidity::valid);
        }
        auto m = fb;
        m.entries[i].action =
            m.entries[i].action == FbAction::incr ? FbAction::decr : FbAction::incr;
        REQUIRE(validate_multi(m, kSrc, kDst, 101, f.access, f.link_as) !=
                MultiValidity::valid);
    }
    // drop each entry
    for (uint8_t i = 0; i < fb.count; i++) {
        MultiFeedback m = fb;
        m.count = 0;
        for (uint8_t j = 0; j < fb.count; j++)
            if (j != i) m.entries[m.count++] = fb.entries[j];
        for (uint8_t j = m.count; j < MultiFeedback::kMaxEntries; j++) m.entries[j] = {};
        REQUIRE(validate_multi(m, kSrc, kDst, 101, f.access, f.link_as) !=
                MultiValidity::valid);
    }
    // flip every token bit
    for (int b = 0; b < 64; b++) {
        auto m = fb;
        m.token ^= (1ull << b);
        REQUIRE(validate_multi(m, kSrc, kDst, 101, f.access, f.link_as) !=
                MultiValidity::valid);
    }
    // flip timestamp bits (large flips fall into the expired class)
    for (int b = 0; b < 32; b++) {
        auto m = fb;
        m.ts ^= (1u << b);
        REQUIRE(validate_multi(m, kSrc, kDst, 101, f.access, f.link_as) !=
                MultiValidity::valid);
    }
}

TEST_CASE("the entry list caps at eight bottlenecks") {
    Fixture f;
    auto fb = stamp_nop_multi(kSrc, kDst, 100, f.access);
    for (int i = 0; i < 8; i++)
        REQUIRE(stamp_multi(fb, kSrc, kDst, kL1, FbAction::incr, f.btl1, kSrcAs));
    CHECK(!stamp_multi(fb, kSrc, kDst, kL1, FbAction::incr, f.btl1, kSrcAs));
    CHECK(fb.count == 8);
}

TEST_CASE("entry section encodes and decodes") {
    Fixture f;
    auto fb = stamp_nop_multi(kSrc, kDst, 100, f.access);
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL1, FbAction::incr, f.btl1, kSrcAs));
    REQUIRE(stamp_multi(fb, kSrc, kDst, kL2, FbAction::decr, f.btl2, kSrcAs));
    std::vector<uint8_t> buf;
    encode_entries(fb, buf);
    CHECK(buf.size() == 1 + 2 * 5 + 8);
    MultiFeedback back;
    back.ts = fb.ts;
    size_t used = 0;
    REQUIRE(decode_entries(buf, back, &used));
    CHECK(used == buf.size());
    CHECK(back == fb);

    SUBCASE("truncated entry section") {
        buf.resize(buf.size() - 1);
        MultiFeedback t;
        CHECK(!decode_entries(buf, t));
    }
    SUBCASE("entry count beyond the cap") {
        buf[0] = 9;
        MultiFeedback t;
        CHECK(!decode_entries(buf, t));
    }
}

TEST_CASE("inference cache records and serves on-path links") {
    InferenceCache cache(20.0);
    cache.update(kDst, kL1, 100.0);
    auto links = cache.lookup(kDst, 101.0);
    REQUIRE(links.size() == 1);
    CHECK(links[0] == kL1);

    cache.update(kDst, kL2, 110.0);
    CHECK(cache.lookup(kDst, 111.0).size() == 2);
}

TEST_CASE("inference cache evicts links unseen for the staleness window") {
    InferenceCache cache(20.0);
    cache.update(kDst, kL1, 100.0);
    cache.update(kDst, kL2, 115.0);
    auto links = cache.lookup(kDst, 121.0);  // L1 last seen 21 s ago
    REQUIRE(links.size() == 1);
    CHECK(links[0] == kL2);
    CHECK(cache.lookup(kDst, 140.0).empty());
    CHECK(cache.size() == 0);
}

TEST_CASE("inference cache drops a link when its limiters are gone") {
    InferenceCache cache(20.0);
    cache.update(kDst, kL1, 100.0);
    cache.update(kDst + 1, kL1, 100.0);
    cache.update(kDst, kL2, 100.0);
    cache.drop_link(kL1);
    auto links = cache.lookup(kDst, 101.0);
    REQUIRE(links.size() == 1);
    CHECK(links[0] == kL2);
    CHECK(cache.lookup(kDst + 1, 101.0).empty());
}
