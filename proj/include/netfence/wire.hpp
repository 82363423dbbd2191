#ifndef NETFENCE_WIRE_HPP
#define NETFENCE_WIRE_HPP

#include <cstdint>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netfence/types.hpp"

// Shim header codec. Layout (big-endian throughout):
//
//   flags      1   bit0 fwd_mode, bit1 fwd_action, bit2 ret_present,
//                  bit3 ret_mode, bit4 ret_action, bits5-6 ret_ts2,
//                  bit7 reserved (must be zero)
//   proto      1
//   priority   1
//   fwd_ts     4
//   fwd_mac    8
//   fwd_link   4   iff fwd_mode == mon
//   token_nop  8   iff fwd_mode == mon (zeroed after a decr stamp, kept
//                  in place so packet length is stable across a bottleneck)
//   ret_mac    8   iff ret_present
//   ret_link   4   iff ret_present and ret_mode == mon
//
// Sizes: 15 (nop fwd, return omitted), 23 (nop/nop), 27 (mon fwd, return
// omitted), 35 (mon/nop), 39 (mon/mon). Length depends on the presence
// flags only. The returned timestamp is compressed to its last two bits;
// reconstruct_timestamp() recovers it at the sender-side edge.

namespace netfence::wire {

struct Header {
    FbMode fwd_mode = FbMode::nop;
    FbAction fwd_action = FbAction::incr;
    uint8_t proto = 0;
    uint8_t priority = 0;
    uint32_t fwd_ts = 0;
    uint64_t fwd_mac = 0;
    uint32_t fwd_link = 0;
    uint64_t token_nop = 0;
    bool ret_present = false;
    FbMode ret_mode = FbMode::nop;
    FbAction ret_action = FbAction::incr;
    uint8_t ret_ts2 = 0;
    uint64_t ret_mac = 0;
    uint32_t ret_link = 0;

    bool operator==(const Header&) const = default;
};

enum class DecodeStatus { ok, truncated, malformed };

inline size_t encoded_size(bool fwd_mon, bool ret_present, bool ret_mon) {
    size_t n = 15;
    if (fwd_mon) n += 12;
    if (ret_present) n += 8;
    if (ret_present && ret_mon) n += 4;
    return n;
}

inline size_t encoded_size(const Header& h) {
    return encoded_size(h.fwd_mode == FbMode::mon, h.ret_present,
                        h.ret_mode == FbMode::mon);
}

// Presence invariants of a well-formed header.
inline bool well_formed(const Header& h) {
    if (h.fwd_mode == FbMode::nop && (h.fwd_link != 0 || h.token_nop != 0))
        return false;
    if (h.fwd_mode == FbMode::mon && h.fwd_link == 0)
        return false;
    if (!h.ret_present) {
        if (h.ret_mode != FbMode::nop || h.ret_action != FbAction::incr ||
            h.ret_ts2 != 0 || h.ret_mac != 0 || h.ret_link != 0)
            return false;
    } else {
        if (h.ret_ts2 > 3) return false;
        if (h.ret_mode == FbMode::nop && h.ret_link != 0) return false;
        if (h.ret_mode == FbMode::mon && h.ret_link == 0) return false;
    }
    return true;
}

namespace detail {

inline void put32(std::vector<uint8_t>& b, uint32_t v) {
    b.push_back(uint8_t(v >> 24));
    b.push_back(uint8_t(v >> 16));
    b.push_back(uint8_t(v >> 8));
    b.push_back(uint8_t(v));
}

inline void put64(std::vector<uint8_t>& b, uint64_t v) {
    put32(b, uint32_t(v >> 32));
    put32(b, uint32_t(v));
}

inline uint32_t get32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
           (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline uint64_t get64(const uint8_t* p) {
    return (uint64_t(get32(p)) << 32) | get32(p + 4);
}

} // namespace detail

inline std::optional<std::vector<uint8_t>> encode(const Header& h) {
    if (!well_formed(h)) return std::nullopt;
    std::vector<uint8_t> b;
    b.reserve(encoded_size(h));
    uint8_t flags = 0;
    if (h.fwd_mode == FbMode::mon) flags |= 0x01;
    if (h.fwd_action == FbAction::decr) flags |= 0x02;
    if (h.ret_present) flags |= 0x04;
    if (h.ret_mode == FbMode::mon) flags |= 0x08;
    if (h.ret_action == FbAction::decr) flags |= 0x10;
    flags |= uint8_t((h.ret_ts2 & 3) << 5);
    b.push_back(flags);
    b.push_back(h.proto);
    b.push_back(h.priority);
    detail::put32(b, h.fwd_ts);
    detail::put64(b, h.fwd_mac);
    if (h.fwd_mode == FbMode::mon) {
        detail::put32(b, h.fwd_link);
        detail::put64(b, h.token_nop);
    }
    if (h.ret_present) {
        detail::put64(b, h.ret_mac);
        if (h.ret_mode == FbMode::mon) detail::put32(b, h.ret_link);
    }
    return b;
}

// Decodes the header at the front of `b`; `consumed` receives the header
// length so a caller can locate the payload behind the shim.
inline DecodeStatus decode(std::span<const uint8_t> b, Header& out,
                           size_t* consumed = nullptr) {
    if (b.size() < 15) return DecodeStatus::truncated;
    uint8_t flags = b[0];
    if (flags & 0x80) return DecodeStatus::malformed;
    Header h;
    h.fwd_mode = (flags & 0x01) ? FbMode::mon : FbMode::nop;
    h.fwd_action = (flags & 0x02) ? FbAction::decr : FbAction::incr;
    h.ret_present = (flags & 0x04) != 0;
    h.ret_mode = (flags & 0x08) ? FbMode::mon : FbMode::nop;
    h.ret_action = (flags & 0x10) ? FbAction::decr : FbAction::incr;
    h.ret_ts2 = uint8_t((flags >> 5) & 3);
    if (!h.ret_present &&
        (h.ret_mode != FbMode::nop || h.ret_action != FbAction::incr || h.ret_ts2 != 0))
        return DecodeStatus::malformed;

    size_t need = encoded_size(h.fwd_mode == FbMode::mon, h.ret_present,
                               h.ret_mode == FbMode::mon);
    if (b.size() < need) return DecodeStatus::truncated;

    h.proto = b[1];
    h.priority = b[2];
    h.fwd_ts = detail::get32(&b[3]);
    h.fwd_mac = detail::get64(&b[7]);
    size_t off = 15;
    if (h.fwd_mode == FbMode::mon) {
        h.fwd_link = detail::get32(&b[off]);
        h.token_nop = detail::get64(&b[off + 4]);
        off += 12;
        if (h.fwd_link == 0) return DecodeStatus::malformed;
    }
    if (h.ret_present) {
        h.ret_mac = detail::get64(&b[off]);
        off += 8;
        if (h.ret_mode == FbMode::mon) {
            h.ret_link = detail::get32(&b[off]);
            off += 4;
            if (h.ret_link == 0) return DecodeStatus::malformed;
        }
    }
    if (consumed) *consumed = off;
    out = h;
    return DecodeStatus::ok;
}

// Recovers the unique t <= now with now - t < 4 and t % 4 == ts2.
inline uint32_t reconstruct_timestamp(uint32_t now, uint8_t ts2) {
    return now - ((now - uint32_t(ts2 & 3)) & 3);
}

inline std::string hex_dump(std::span<const uint8_t> b) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 3);
    for (size_t i = 0; i < b.size(); i++) {
        if (i) s.push_back(i % 16 == 0 ? '\n' : ' ');
        s.push_back(digits[b[i] >> 4]);
        s.push_back(digits[b[i] & 0xf]);
    }
    return s;
}

// One-line field summary used by the CLI header decoder.
inline std::string describe(const Header& h) {
    auto fb = [](FbMode m, FbAction a, uint32_t link) {
        if (m == FbMode::nop) return std::string("nop");
        std::string s = "L";
        s += std::to_string(link);
        s += a == FbAction::incr ? "^up" : "^down";
        return s;
    };
    std::string s = "fwd=" + fb(h.fwd_mode, h.fwd_action, h.fwd_link);
    s += " ts=" + std::to_string(h.fwd_ts);
    s += " prio=" + std::to_string(h.priority);
    s += " proto=" + std::to_string(h.proto);
    char mac[32];
    snprintf(mac, sizeof mac, " mac=%016llx", (unsigned long long)h.fwd_mac);
    s += mac;
    if (h.fwd_mode == FbMode::mon) {
        snprintf(mac, sizeof mac, " token=%016llx", (unsigned long long)h.token_nop);
        s += mac;
    }
    if (!h.ret_present) {
        s += " ret=absent";
    } else {
        s += " ret=" + fb(h.ret_mode, h.ret_action, h.ret_link);
        s += " ret_ts2=" + std::to_string(h.ret_ts2);
        snprintf(mac, sizeof mac, " ret_mac=%016llx", (unsigned long long)h.ret_mac);
        s += mac;
    }
    return s;
}

} // namespace netfence::wire

#endif
