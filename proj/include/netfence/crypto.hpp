#ifndef NETFENCE_CRYPTO_HPP
#define NETFENCE_CRYPTO_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/params.h>

#include "netfence/rng.hpp"
#include "netfence/types.hpp"

// Congestion policing feedback stamping and validation. Tags are
// AES-128-CMAC truncated to 64 bits. nop and incr feedback are keyed by
// the access router's time-varying secret K_a; decr feedback is keyed by
// the secret an AS pair shares, folding in the access router's token_nop
// so no downstream router can rewrite a bottleneck's stamp.

namespace netfence::crypto {

struct Key128 {
    std::array<uint8_t, 16> b{};
    bool operator==(const Key128&) const = default;
    auto operator<=>(const Key128&) const = default;
};

inline Key128 derive_key(uint64_t seed, uint64_t salt) {
    Key128 k;
    uint64_t a = splitmix64(seed ^ splitmix64(salt));
    uint64_t b = splitmix64(a ^ 0x6c62272e07bb0142ULL);
    std::memcpy(k.b.data(), &a, 8);
    std::memcpy(k.b.data() + 8, &b, 8);
    return k;
}

// AES-128-CMAC truncated to the first 8 tag bytes (big-endian value).
// Keyed contexts are cached; computing a tag duplicates a template
// context, which keeps the per-call cost low enough for per-packet use.
class Cmac {
public:
    Cmac() {
        mac_ = EVP_MAC_fetch(nullptr, "CMAC", nullptr);
        if (!mac_) throw std::runtime_error("CMAC unavailable in libcrypto");
    }
    ~Cmac() {
        cache_.clear();
        if (mac_) EVP_MAC_free(mac_);
    }
    Cmac(const Cmac&) = delete;
    Cmac& operator=(const Cmac&) = delete;

    uint64_t tag64(const Key128& key, std::span<const uint8_t> msg) const {
        EVP_MAC_CTX* c = EVP_MAC_CTX_dup(keyed(key));
        if (!c) throw std::runtime_error("EVP_MAC_CTX_dup failed");
        uint8_t out[16];
        size_t outl = 0;
        if (EVP_MAC_update(c, msg.data(), msg.size()) != 1 ||
            EVP_MAC_final(c, out, &outl, sizeof out) != 1 || outl < 8) {
            EVP_MAC_CTX_free(c);
            throw std::runtime_error("CMAC computation failed");
        }
        EVP_MAC_CTX_free(c);
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v = (v << 8) | out[i];
        return v;
    }

private:
    struct CtxDel {
        void operator()(EVP_MAC_CTX* c) const { EVP_MAC_CTX_free(c); }
    };

    EVP_MAC_CTX* keyed(const Key128& key) const {
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second.get();
        EVP_MAC_CTX* c = EVP_MAC_CTX_new(mac_);
        if (!c) throw std::runtime_error("EVP_MAC_CTX_new failed");
        char cipher[] = "AES-128-CBC";
        OSSL_PARAM params[] = {
            OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_CIPHER, cipher, 0),
            OSSL_PARAM_construct_end()};
        if (EVP_MAC_init(c, key.b.data(), key.b.size(), params) != 1) {
            EVP_MAC_CTX_free(c);
            throw std::runtime_error("EVP_MAC_init failed");
        }
        auto [pos, _] = cache_.emplace(key, std::unique_ptr<EVP_MAC_CTX, CtxDel>(c));
        return pos->second.get();
    }

    EVP_MAC* mac_ = nullptr;
    mutable std::map<Key128, std::unique_ptr<EVP_MAC_CTX, CtxDel>> cache_;
};

inline const Cmac& cmac() {
    static Cmac instance;
    return instance;
}

struct Feedback {
    FbMode mode = FbMode::nop;
    FbAction action = FbAction::incr;
    LinkId link = 0;
    uint32_t ts = 0;
    uint64_t mac = 0;
    uint64_t token_nop = 0;  // meaningful only for mon/incr

    bool operator==(const Feedback&) const = default;
};

enum class Validity : uint8_t { valid_nop, valid_incr, valid_decr, invalid, expired };

struct ValidationResult {
    Validity kind = Validity::invalid;
    LinkId link = 0;
    bool ok() const { return kind != Validity::invalid && kind != Validity::expired; }
};

using LinkAsLookup = std::function<std::optional<AsId>(LinkId)>;

// Keys held by one router. Access routers derive a fresh K_a per epoch
// from a private master secret; the AS pair table is shared by every
// router of the deployment (source authentication is assumed, the table
// stands in for the routing-system key exchange).
class KeyRegistry {
public:
    using PairTable = std::map<std::pair<AsId, AsId>, Key128>;

    KeyRegistry() : pair_keys_(std::make_shared<PairTable>()) {}
    KeyRegistry(AsId local_as, uint64_t master_secret,
                std::shared_ptr<PairTable> pairs)
        : local_as_(local_as), master_(master_secret),
          pair_keys_(pairs ? std::move(pairs) : std::make_shared<PairTable>()) {}

    AsId local_as() const { return local_as_; }
    uint64_t epoch() const { return epoch_; }

    // Advances the access-key epoch. Validation accepts the current and
    // the immediately previous epoch so feedback up to w seconds old
    // never fails solely because of a rotation.
    void rotate() { epoch_++; }

    Key128 access_key(uint64_t epoch) const {
        return derive_key(master_, 0xacce55ULL * 0x10001ULL + epoch);
    }
    Key128 current_access_key() const { return access_key(epoch_); }

    const Key128* pair_key(AsId a, AsId b) const {
        if (a > b) std::swap(a, b);
        auto it = pair_keys_->find({a, b});
        return it == pair_keys_->end() ? nullptr : &it->second;
    }
    void set_pair_key(AsId a, AsId b, const Key128& k) {
        if (a > b) std::swap(a, b);
        (*pair_keys_)[{a, b}] = k;
    }
    std::shared_ptr<PairTable> pair_table() const { return pair_keys_; }

private:
    AsId local_as_ = 0;
    uint64_t master_ = 0;
    uint64_t epoch_ = 0;
    std::shared_ptr<PairTable> pair_keys_;
};

namespace detail {

// Canonical MAC input: src | dst | ts | link | mode | action [| token].
struct MacMsg {
    uint8_t buf[26];
    size_t len;
};

inline MacMsg mac_msg(Addr src, Addr dst, uint32_t ts, LinkId link, FbMode mode,
                      FbAction action, const uint64_t* token = nullptr) {
    MacMsg m;
    auto put32 = [&](size_t o, uint32_t v) {
        m.buf[o] = uint8_t(v >> 24);
        m.buf[o + 1] = uint8_t(v >> 16);
        m.buf[o + 2] = uint8_t(v >> 8);
        m.buf[o + 3] = uint8_t(v);
    };
    put32(0, src);
    put32(4, dst);
    put32(8, ts);
    put32(12, link);
    m.buf[16] = uint8_t(mode);
    m.buf[17] = uint8_t(action);
    m.len = 18;
    if (token) {
        put32(18, uint32_t(*token >> 32));
        put32(22, uint32_t(*token));
        m.len = 26;
    }
    return m;
}

inline uint64_t nop_token(const Key128& ka, Addr src, Addr dst, uint32_t ts) {
    auto m = mac_msg(src, dst, ts, 0, FbMode::nop, FbAction::incr);
    return cmac().tag64(ka, {m.buf, m.len});
}

inline uint64_t incr_mac(const Key128& ka, Addr src, Addr dst, uint32_t ts, LinkId link) {
    auto m = mac_msg(src, dst, ts, link, FbMode::mon, FbAction::incr);
    return cmac().tag64(ka, {m.buf, m.len});
}

inline uint64_t decr_mac(const Key128& kai, Addr src, Addr dst, uint32_t ts,
                         LinkId link, uint64_t token) {
    auto m = mac_msg(src, dst, ts, link, FbMode::mon, FbAction::decr, &token);
    return cmac().tag64(kai, {m.buf, m.len});
}

} // namespace detail

inline Feedback stamp_nop(Addr src, Addr dst, uint32_t now, const KeyRegistry& reg) {
    Feedback fb;
    fb.mode = FbMode::nop;
    fb.action = FbAction::incr;
    fb.link = 0;
    fb.ts = now;
    fb.mac = detail::nop_token(reg.current_access_key(), src, dst, now);
    fb.token_nop = 0;
    return fb;
}

inline Feedback stamp_incr(Addr src, Addr dst, uint32_t now, LinkId link,
                           const KeyRegistry& reg) {
    Feedback fb;
    fb.mode = FbMode::mon;
    fb.action = FbAction::incr;
    fb.link = link;
    fb.ts = now;
    Key128 ka = reg.current_access_key();
    fb.mac = detail::incr_mac(ka, src, dst, now, link);
    fb.token_nop = detail::nop_token(ka, src, dst, now);
    return fb;
}

// Overwrites `fb` with decr feedback for `link`, keyed by the secret the
// stamping router's AS shares with the sender's AS. For a nop input the
// folded token is the nop mac itself (which is token_nop by construction);
// the timestamp is preserved from the overwritten feedback. token_nop is
// erased in the output.
inline std::optional<Feedback> stamp_decr(const Feedback& fb, Addr src, Addr dst,
                                          LinkId link, const KeyRegistry& reg,
                                          AsId sender_as) {
    const Key128* kai = reg.pair_key(sender_as, reg.local_as());
    if (!kai) return std::nullopt;
    uint64_t token = fb.mode == FbMode::nop ? fb.mac : fb.token_nop;
    Feedback out;
    out.mode = FbMode::mon;
    out.action = FbAction::decr;
    out.link = link;
    out.ts = fb.ts;
    out.mac = detail::decr_mac(*kai, src, dst, fb.ts, link, token);
    out.token_nop = 0;
    return out;
}

// Parses an AS pair key table: one `as_a as_b hex128key` entry per line,
// '#' comments allowed. Throws std::runtime_error with the line number on
// malformed input.
inline KeyRegistry::PairTable parse_key_table(std::istream& in) {
    KeyRegistry::PairTable table;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        unsigned long a = 0, b = 0;
        std::string hex;
        if (!(ls >> a)) continue;  // blank line
        if (!(ls >> b >> hex) || hex.size() != 32)
            throw std::runtime_error("key table line " + std::to_string(lineno) +
                                     ": expected `as_a as_b hex128key`");
        Key128 k;
        for (int i = 0; i < 16; i++) {
            auto nib = [&](char c) -> int {
                if (c >= '0' && c <= '9') return c - '0';
                if (c >= 'a' && c <= 'f') return c - 'a' + 10;
                if (c >= 'A' && c <= 'F') return c - 'A' + 10;
                throw std::runtime_error("key table line " + std::to_string(lineno) +
                                         ": bad hex digit");
            };
            k.b[i] = uint8_t(nib(hex[2 * i]) << 4 | nib(hex[2 * i + 1]));
        }
        AsId x = AsId(a), y = AsId(b);
        if (x > y) std::swap(x, y);
        table[{x, y}] = k;
    }
    return table;
}

inline ValidationResult validate(const Feedback& fb, Addr src, Addr dst,
                                 uint32_t now, const KeyRegistry& reg,
                                 const LinkAsLookup& link_to_as, double w = 4.0) {
    double age = now >= fb.ts ? double(now - fb.ts) : double(fb.ts - now);
    if (age > w) return {Validity::expired, 0};

    uint64_t e = reg.epoch();
    auto each_epoch = [&](auto&& f) {
        if (f(reg.access_key(e))) return true;
        return e > 0 && f(reg.access_key(e - 1));
    };

    if (fb.mode == FbMode::nop) {
        if (fb.link != 0 || fb.action != FbAction::incr) return {Validity::invalid, 0};
        bool ok = each_epoch([&](const Key128& ka) {
            return detail::nop_token(ka, src, dst, fb.ts) == fb.mac;
        });
        return ok ? ValidationResult{Validity::valid_nop, 0}
                  : ValidationResult{Validity::invalid, 0};
    }
    if (fb.link == 0) return {Validity::invalid, 0};
    if (fb.action == FbAction::incr) {
        bool ok = each_epoch([&](const Key128& ka) {
            return detail::incr_mac(ka, src, dst, fb.ts, fb.link) == fb.mac;
        });
        return ok ? ValidationResult{Validity::valid_incr, fb.link}
                  : ValidationResult{Validity::invalid, 0};
    }
    // decr: re-derive token_nop, resolve the bottleneck AS, check the pair mac
    auto as = link_to_as(fb.link);
    if (!as) return {Validity::invalid, 0};
    const Key128* kai = reg.pair_key(reg.local_as(), *as);
    if (!kai) return {Validity::invalid, 0};
    bool ok = each_epoch([&](const Key128& ka) {
        uint64_t token = detail::nop_token(ka, src, dst, fb.ts);
        return detail::decr_mac(*kai, src, dst, fb.ts, fb.link, token) == fb.mac;
    });
    return ok ? ValidationResult{Validity::valid_decr, fb.link}
              : ValidationResult{Validity::invalid, 0};
}

} // namespace netfence::crypto

#endif
