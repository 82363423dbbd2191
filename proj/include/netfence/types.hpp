#ifndef NETFENCE_TYPES_HPP
#define NETFENCE_TYPES_HPP

#include <cstdint>

namespace netfence {

// Node addresses double as host identifiers; 0 is never assigned.
using Addr = uint32_t;
// Link identifiers name router output links; 0 is the null link of nop feedback.
using LinkId = uint32_t;
using AsId = uint16_t;

enum class FbMode : uint8_t { nop = 0, mon = 1 };
enum class FbAction : uint8_t { incr = 0, decr = 1 };

} // namespace netfence

#endif
