#ifndef NETFENCE_MULTIPATH_HPP
#define NETFENCE_MULTIPATH_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "netfence/crypto.hpp"
#include "netfence/types.hpp"
#include "netfence/wire.hpp"

// Multi-bottleneck remedies. Variant one puts the feedback of every
// on-path bottleneck in the packet: each mon link appends a (link, action)
// entry and refolds a single chained token, so removing or reordering any
// entry invalidates the chain. Variant two keeps the single-feedback
// header and instead infers the on-path bottlenecks per destination
// prefix at the access router.

namespace netfence::multipath {

struct MultiEntry {
    LinkId link = 0;
    FbAction action = FbAction::incr;
    bool operator==(const MultiEntry&) const = default;
};

struct MultiFeedback {
    static constexpr uint32_t kMaxEntries = 8;
    uint32_t ts = 0;
    uint8_t count = 0;
    std::array<MultiEntry, kMaxEntries> entries{};
    uint64_t token = 0;

    bool operator==(const MultiFeedback&) const = default;
    bool empty() const { return count == 0; }
    std::vector<LinkId> links() const {
        std::vector<LinkId> v;
        for (uint8_t i = 0; i < count; i++) v.push_back(entries[i].link);
        return v;
    }
};

namespace detail {

inline uint64_t base_token(const crypto::Key128& ka, Addr src, Addr dst, uint32_t ts) {
    uint8_t buf[12];
    auto put32 = [&](size_t o, uint32_t v) {
        buf[o] = uint8_t(v >> 24);
        buf[o + 1] = uint8_t(v >> 16);
        buf[o + 2] = uint8_t(v >> 8);
        buf[o + 3] = uint8_t(v);
    };
    put32(0, src);
    put32(4, dst);
    put32(8, ts);
    return crypto::cmac().tag64(ka, {buf, sizeof buf});
}

inline uint64_t fold(const crypto::Key128& kai, Addr src, Addr dst, uint32_t ts,
                     LinkId link, FbAction action, uint64_t token) {
    auto m = crypto::detail::mac_msg(src, dst, ts, link, FbMode::mon, action, &token);
    return crypto::cmac().tag64(kai, {m.buf, m.len});
}

} // namespace detail

// Fresh empty feedback stamped by the access router on every forwarded
// packet; bottlenecks append to it.
inline MultiFeedback stamp_nop_multi(Addr src, Addr dst, uint32_t now,
                                     const crypto::KeyRegistry& reg) {
    MultiFeedback fb;
    fb.ts = now;
    fb.token = detail::base_token(reg.current_access_key(), src, dst, now);
    return fb;
}

// Appends (link, action) and refolds the token over the previous value.
// Fails when the AS pair key is missing or the entry list is full.
inline bool stamp_multi(MultiFeedback& fb, Addr src, Addr dst, LinkId link,
                        FbAction action, const crypto::KeyRegistry& reg,
                        AsId sender_as) {
    if (fb.count >= MultiFeedback::kMaxEntries) return false;
    const crypto::Key128* kai = reg.pair_key(sender_as, reg.local_as());
    if (!kai) return false;
    fb.token = detail::fold(*kai, src, dst, fb.ts, link, action, fb.token);
    fb.entries[fb.count++] = {link, action};
    return true;
}

enum class MultiValidity : uint8_t { valid, invalid, expired };

// Replays the fold in entry order from the reconstructed base token.
inline MultiValidity validate_multi(const MultiFeedback& fb, Addr src, Addr dst,
                                    uint32_t now, const crypto::KeyRegistry& reg,
                                    const crypto::LinkAsLookup& link_to_as,
                                    double w = 4.0) {
    double age = now >= fb.ts ? double(now - fb.ts) : double(fb.ts - now);
    if (age > w) return MultiValidity::expired;
    uint64_t e = reg.epoch();
    uint64_t epochs[2] = {e, e > 0 ? e - 1 : e};
    int n_epochs = e > 0 ? 2 : 1;
    for (int ei = 0; ei < n_epochs; ei++) {
        uint64_t tok = detail::base_token(reg.access_key(epochs[ei]), src, dst, fb.ts);
        bool ok = true;
        for (uint8_t i = 0; i < fb.count && ok; i++) {
            auto as = link_to_as(fb.entries[i].link);
            const crypto::Key128* kai = as ? reg.pair_key(reg.local_as(), *as) : nullptr;
            if (!kai) {
                ok = false;
                break;
            }
            tok = detail::fold(*kai, src, dst, fb.ts, fb.entries[i].link,
                               fb.entries[i].action, tok);
        }
        if (ok && tok == fb.token) return MultiValidity::valid;
    }
    return MultiValidity::invalid;
}

// Wire form of the variable-length feedback: count byte, five bytes per
// entry (link id + action), one 64-bit token. The fixed header's ts field
// is reused, so only the entry section is encoded here.
inline void encode_entries(const MultiFeedback& fb, std::vector<uint8_t>& out) {
    out.push_back(fb.count);
    for (uint8_t i = 0; i < fb.count; i++) {
        wire::detail::put32(out, fb.entries[i].link);
        out.push_back(uint8_t(fb.entries[i].action));
    }
    wire::detail::put64(out, fb.token);
}

inline bool decode_entries(std::span<const uint8_t> b, MultiFeedback& fb,
                           size_t* consumed = nullptr) {
    if (b.empty()) return false;
    uint8_t n = b[0];
    if (n > MultiFeedback::kMaxEntries) return false;
    size_t need = 1 + size_t(n) * 5 + 8;
    if (b.size() < need) return false;
    fb.count = n;
    size_t off = 1;
    for (uint8_t i = 0; i < n; i++) {
        fb.entries[i].link = wire::detail::get32(&b[off]);
        uint8_t a = b[off + 4];
        if (a > 1) return false;
        fb.entries[i].action = FbAction(a);
        off += 5;
    }
    fb.token = wire::detail::get64(&b[off]);
    if (consumed) *consumed = need;
    return true;
}

// Per-destination-prefix record of the bottleneck links seen on the path.
// Prefixes are destination addresses here; the deployment's prefix table
// is out of scope.
class InferenceCache {
public:
    explicit InferenceCache(double staleness = 20.0) : stale_(staleness) {}

    void update(Addr dst, LinkId link, double now) { cache_[dst][link] = now; }

    // Links still fresh for this destination; stale entries are evicted on
    // the way.
    std::vector<LinkId> lookup(Addr dst, double now) {
        std::vector<LinkId> out;
        auto it = cache_.find(dst);
        if (it == cache_.end()) return out;
        auto& links = it->second;
        for (auto li = links.begin(); li != links.end();) {
            if (now - li->second > stale_) {
                li = links.erase(li);
            } else {
                out.push_back(li->first);
                ++li;
            }
        }
        if (links.empty()) cache_.erase(it);
        return out;
    }

    // Removes a link everywhere (all of its rate limiters went away).
    void drop_link(LinkId link) {
        for (auto it = cache_.begin(); it != cache_.end();) {
            it->second.erase(link);
            if (it->second.empty())
                it = cache_.erase(it);
            else
                ++it;
        }
    }

    size_t size() const { return cache_.size(); }
    double staleness() const { return stale_; }

private:
    double stale_;
    std::map<Addr, std::map<LinkId, double>> cache_;
};

} // namespace netfence::multipath

#endif
