#ifndef NETFENCE_SCENARIO_HPP
#define NETFENCE_SCENARIO_HPP

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "netfence/params.hpp"

namespace netfence {

enum class Policy : uint8_t { core, b1, b2, fq_drr, droptail };

inline const char* policy_name(Policy p) {
    switch (p) {
        case Policy::core: return "core";
        case Policy::b1: return "b1";
        case Policy::b2: return "b2";
        case Policy::fq_drr: return "fq-drr";
        case Policy::droptail: return "droptail";
    }
    return "?";
}

enum class TopoKind : uint8_t { dumbbell, parking_lot };

enum class Role : uint8_t {
    tcp,            // long-running TCP to the victim
    tcp_files,      // repeated fixed-size transfers to the victim
    udp_flood,      // constant-rate UDP
    udp_honest,     // constant-rate UDP with an honest receiver
    onoff,          // synchronized on-off UDP
    request_flood,  // request packets at a fixed priority level
    adv_hide,       // flood whose pair hides decr feedback
    adv_stale,      // flood whose pair replays the stalest valid incr
    adv_silent,     // flood that goes silent for whole control intervals
    legacy_cbr      // constant-rate traffic without the shim header
};

inline bool role_is_legitimate(Role r) {
    return r == Role::tcp || r == Role::tcp_files || r == Role::udp_honest;
}
inline bool role_is_tcp(Role r) { return r == Role::tcp || r == Role::tcp_files; }

struct GroupSpec {
    Role role = Role::tcp;
    uint32_t count = 0;
    double rate_bps = 1e6;    // udp/onoff/legacy demand
    double t_on = 0.5;        // onoff
    double t_off = 1.5;       // onoff; 0 degenerates to a constant flooder
    uint32_t file_kb = 20;    // tcp_files
    double gap_s = 0.5;       // idle time between transfers
    uint32_t level = 9;       // request_flood priority
    char attach = 'a';        // parking_lot segment: a, b, or c
    bool to_colluder = false; // destination: colluder pool instead of victim
    bool compromised_as = false;
};

struct Scenario {
    std::string name = "unnamed";
    Policy policy = Policy::core;
    uint64_t seed = 1;
    double duration = 600;
    double warmup = 200;
    double traffic_start = 5.0;

    TopoKind kind = TopoKind::dumbbell;
    double bottleneck_bps = 20e6;  // dumbbell
    double l1_bps = 16e6, l2_bps = 24e6;  // parking_lot
    double link_delay = 0.010;
    uint32_t src_as_count = 10;
    uint32_t colluder_as_count = 9;

    Params params;
    bool victim_capability = false;
    bool fallback_allowed = false;
    double fallback_grace = 20.0;

    double metrics_bucket = 1.0;
    bool limiter_series = false;

    std::string key_table_path;

    std::vector<GroupSpec> groups;

    uint32_t total_senders() const {
        uint32_t n = 0;
        for (const auto& g : groups) n += g.count;
        return n;
    }
    uint32_t legit_senders() const {
        uint32_t n = 0;
        for (const auto& g : groups)
            if (role_is_legitimate(g.role)) n += g.count;
        return n;
    }
    uint32_t attacker_senders() const { return total_senders() - legit_senders(); }
};

// Configuration errors carry the offending location.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

namespace scenario_detail {

inline ConfigError err(const std::string& where, int line, const std::string& msg) {
    std::string s = where;
    if (line > 0) s += ":" + std::to_string(line);
    return ConfigError(s + ": " + msg);
}

inline bool parse_bool(const std::string& v, const std::string& where, int line) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw err(where, line, "expected a boolean, got `" + v + "`");
}

inline double parse_num(const std::string& v, const std::string& where, int line) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw err(where, line, "expected a number, got `" + v + "`");
    }
}

inline Role parse_role(const std::string& v, const std::string& where, int line) {
    if (v == "tcp") return Role::tcp;
    if (v == "tcp_files") return Role::tcp_files;
    if (v == "udp_flood") return Role::udp_flood;
    if (v == "udp_honest") return Role::udp_honest;
    if (v == "onoff") return Role::onoff;
    if (v == "request_flood") return Role::request_flood;
    if (v == "adv_hide") return Role::adv_hide;
    if (v == "adv_stale") return Role::adv_stale;
    if (v == "adv_silent") return Role::adv_silent;
    if (v == "legacy_cbr") return Role::legacy_cbr;
    throw err(where, line, "unknown role `" + v + "`");
}

// Applies one key of the [params] section; returns false on unknown keys.
inline bool set_param(Params& p, const std::string& k, double v) {
    if (k == "l1_tokens_per_s") p.l1_tokens_per_s = v;
    else if (k == "token_depth") p.token_depth = v;
    else if (k == "i_lim") p.i_lim = v;
    else if (k == "w") p.w = v;
    else if (k == "delta_ai_bps") p.delta_ai_bps = v;
    else if (k == "delta_md") p.delta_md = v;
    else if (k == "p_th") p.p_th = v;
    else if (k == "qlim_s") p.qlim_s = v;
    else if (k == "red_min_frac") p.red_min_frac = v;
    else if (k == "red_max_frac") p.red_max_frac = v;
    else if (k == "red_wq") p.red_wq = v;
    else if (k == "red_max_p") p.red_max_p = v;
    else if (k == "t_a") p.t_a = v;
    else if (k == "t_b") p.t_b = v;
    else if (k == "request_frac") p.request_frac = v;
    else if (k == "request_window") p.request_window = v;
    else if (k == "detect_interval") p.detect_interval = v;
    else if (k == "max_cache_delay") p.max_cache_delay = v;
    else if (k == "init_rate_bps") p.init_rate_bps = v;
    else if (k == "rate_floor_bps") p.rate_floor_bps = v;
    else if (k == "key_rotation_s") p.key_rotation_s = v;
    else if (k == "infer_stale_s") p.infer_stale_s = v;
    else if (k == "max_priority") p.max_priority = uint32_t(v);
    else if (k == "mtu") p.mtu = uint32_t(v);
    else if (k == "small_pkt") p.small_pkt = uint32_t(v);
    else if (k == "util_detection") p.util_detection = v != 0;
    else if (k == "util_th") p.util_th = v;
    else return false;
    return true;
}

} // namespace scenario_detail

// Parses the structured-text scenario format: `[section]` headers and
// `key = value` lines, `#` comments. `where` names the stream in errors.
inline Scenario parse_scenario(std::istream& in, const std::string& where = "<scenario>") {
    using namespace scenario_detail;
    Scenario sc;
    bool have_topology = false;
    std::string section;
    GroupSpec* group = nullptr;
    std::string line;
    int lineno = 0;

    while (std::getline(in, line)) {
        lineno++;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw err(where, lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section == "group") {
                sc.groups.emplace_back();
                group = &sc.groups.back();
            } else if (section == "topology") {
                have_topology = true;
            } else if (section != "scenario" && section != "params" &&
                       section != "victim" && section != "fallback" &&
                       section != "metrics" && section != "keys") {
                throw err(where, lineno, "unknown section [" + section + "]");
            }
            continue;
        }

        auto eq = line.find('=');
        if (eq == std::string::npos) throw err(where, lineno, "expected `key = value`");
        std::string k = trim(line.substr(0, eq));
        std::string v = trim(line.substr(eq + 1));
        if (section.empty()) throw err(where, lineno, "`" + k + "` outside any section");

        if (section == "scenario") {
            if (k == "name") sc.name = v;
            else if (k == "policy") {
                if (v == "core" || v == "netfence-core") sc.policy = Policy::core;
                else if (v == "b1" || v == "netfence-b1") sc.policy = Policy::b1;
                else if (v == "b2" || v == "netfence-b2") sc.policy = Policy::b2;
                else if (v == "fq-drr") sc.policy = Policy::fq_drr;
                else if (v == "droptail") sc.policy = Policy::droptail;
                else throw err(where, lineno, "unknown policy `" + v + "`");
            }
            else if (k == "seed") sc.seed = uint64_t(parse_num(v, where, lineno));
            else if (k == "duration") sc.duration = parse_num(v, where, lineno);
            else if (k == "warmup") sc.warmup = parse_num(v, where, lineno);
            else if (k == "traffic_start") sc.traffic_start = parse_num(v, where, lineno);
            else throw err(where, lineno, "unknown key `" + k + "` in [scenario]");
        } else if (section == "topology") {
            if (k == "kind") {
                if (v == "dumbbell") sc.kind = TopoKind::dumbbell;
                else if (v == "parking_lot") sc.kind = TopoKind::parking_lot;
                else throw err(where, lineno, "unknown topology kind `" + v + "`");
            }
            else if (k == "bottleneck_bps") sc.bottleneck_bps = parse_num(v, where, lineno);
            else if (k == "l1_bps") sc.l1_bps = parse_num(v, where, lineno);
            else if (k == "l2_bps") sc.l2_bps = parse_num(v, where, lineno);
            else if (k == "link_delay") sc.link_delay = parse_num(v, where, lineno);
            else if (k == "src_as_count") sc.src_as_count = uint32_t(parse_num(v, where, lineno));
            else if (k == "colluder_as_count")
                sc.colluder_as_count = uint32_t(parse_num(v, where, lineno));
            else throw err(where, lineno, "unknown key `" + k + "` in [topology]");
        } else if (section == "params") {
            if (!set_param(sc.params, k, parse_num(v, where, lineno)))
                throw err(where, lineno, "unknown parameter `" + k + "`");
        } else if (section == "victim") {
            if (k == "capability_mode") sc.victim_capability = parse_bool(v, where, lineno);
            else throw err(where, lineno, "unknown key `" + k + "` in [victim]");
        } else if (section == "fallback") {
            if (k == "allowed") sc.fallback_allowed = parse_bool(v, where, lineno);
            else if (k == "grace") sc.fallback_grace = parse_num(v, where, lineno);
            else throw err(where, lineno, "unknown key `" + k + "` in [fallback]");
        } else if (section == "metrics") {
            if (k == "bucket") sc.metrics_bucket = parse_num(v, where, lineno);
            else if (k == "limiter_series") sc.limiter_series = parse_bool(v, where, lineno);
            else throw err(where, lineno, "unknown key `" + k + "` in [metrics]");
        } else if (section == "keys") {
            if (k == "table") sc.key_table_path = v;
            else throw err(where, lineno, "unknown key `" + k + "` in [keys]");
        } else if (section == "group") {
            if (k == "role") group->role = parse_role(v, where, lineno);
            else if (k == "count") group->count = uint32_t(parse_num(v, where, lineno));
            else if (k == "rate_bps") group->rate_bps = parse_num(v, where, lineno);
            else if (k == "t_on") group->t_on = parse_num(v, where, lineno);
            else if (k == "t_off") group->t_off = parse_num(v, where, lineno);
            else if (k == "file_kb") group->file_kb = uint32_t(parse_num(v, where, lineno));
            else if (k == "gap") group->gap_s = parse_num(v, where, lineno);
            else if (k == "level") group->level = uint32_t(parse_num(v, where, lineno));
            else if (k == "attach") {
                if (v != "a" && v != "b" && v != "c")
                    throw err(where, lineno, "attach must be a, b, or c");
                group->attach = v[0];
            }
            else if (k == "dst") {
                if (v == "victim") group->to_colluder = false;
                else if (v == "colluder") group->to_colluder = true;
                else throw err(where, lineno, "dst must be victim or colluder");
            }
            else if (k == "compromised_as") group->compromised_as = parse_bool(v, where, lineno);
            else throw err(where, lineno, "unknown key `" + k + "` in [group]");
        }
    }

    if (!have_topology) throw ConfigError(where + ": missing [topology] section");
    if (sc.groups.empty()) throw ConfigError(where + ": no [group] sections");
    if (sc.total_senders() == 0) throw ConfigError(where + ": zero senders configured");
    if (sc.duration <= 0) throw ConfigError(where + ": duration must be positive");
    if (sc.warmup >= sc.duration)
        throw ConfigError(where + ": warmup must be below duration");
    if (sc.kind == TopoKind::dumbbell && sc.bottleneck_bps <= 0)
        throw ConfigError(where + ": bottleneck_bps must be positive");
    if (sc.kind == TopoKind::parking_lot && (sc.l1_bps <= 0 || sc.l2_bps <= 0))
        throw ConfigError(where + ": parking_lot needs positive l1_bps and l2_bps");
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open scenario file");
    return parse_scenario(in, path);
}

// ---------------------------------------------------------------------------
// Shipped presets
// ---------------------------------------------------------------------------

inline const std::map<std::string, std::string>& preset_texts() {
    static const std::map<std::string, std::string> presets = {
        {"colluding_single", R"(# Colluding pairs flood a single bottleneck; long-running TCP users.
[scenario]
name = colluding_single
policy = core
seed = 1
duration = 2000
warmup = 600

[topology]
kind = dumbbell
bottleneck_bps = 20e6
src_as_count = 10
colluder_as_count = 9

[group]
role = tcp
count = 50

[group]
role = udp_flood
count = 150
rate_bps = 1e6
dst = colluder
)"},
        {"colluding_single.toy", R"(# Demo-scale colluding attack: 1000 senders, 75% attackers, 100 Mbps.
[scenario]
name = colluding_single.toy
policy = core
seed = 1
duration = 600
warmup = 300

[topology]
kind = dumbbell
bottleneck_bps = 100e6
src_as_count = 10
colluder_as_count = 9

[group]
role = tcp
count = 250

[group]
role = udp_flood
count = 750
rate_bps = 1e6
dst = colluder
)"},
        {"colluding_single.fqdrr", R"(# Per-sender DRR baseline under the colluding attack.
[scenario]
name = colluding_single.fqdrr
policy = fq-drr
seed = 1
duration = 600
warmup = 200

[topology]
kind = dumbbell
bottleneck_bps = 20e6
src_as_count = 10
colluder_as_count = 9

[group]
role = tcp
count = 50

[group]
role = udp_flood
count = 150
rate_bps = 1e6
dst = colluder
)"},
        {"colluding_single.droptail", R"(# Undefended droptail baseline under the colluding attack.
[scenario]
name = colluding_single.droptail
policy = droptail
seed = 1
duration = 600
warmup = 200

[topology]
kind = dumbbell
bottleneck_bps = 20e6
src_as_count = 10
colluder_as_count = 9

[group]
role = tcp
count = 50

[group]
role = udp_flood
count = 150
rate_bps = 1e6
dst = colluder
)"},
        {"convergence", R"(# Fair-share convergence validation with per-limiter series enabled.
[scenario]
name = convergence
policy = core
seed = 1
duration = 2000
warmup = 600

[topology]
kind = dumbbell
bottleneck_bps = 20e6
src_as_count = 10
colluder_as_count = 9

[metrics]
limiter_series = true

[group]
role = tcp
count = 50

[group]
role = udp_flood
count = 150
rate_bps = 1e6
dst = colluder
)"},
        {"request_flood", R"(# Request flooding against a victim that suppresses attacker feedback.
[scenario]
name = request_flood
policy = core
seed = 1
duration = 300
warmup = 50

[topology]
kind = dumbbell
bottleneck_bps = 8e6
src_as_count = 10
colluder_as_count = 1

[victim]
capability_mode = true

[group]
role = tcp_files
count = 25
file_kb = 20
gap = 0.5

[group]
role = request_flood
count = 150
level = 9
)"},
        {"request_flood.baseline", R"(# The request_flood workload with the attackers removed.
[scenario]
name = request_flood.baseline
policy = core
seed = 1
duration = 300
warmup = 50

[topology]
kind = dumbbell
bottleneck_bps = 8e6
src_as_count = 10
colluder_as_count = 1

[victim]
capability_mode = true

[group]
role = tcp_files
count = 25
file_kb = 20
gap = 0.5
)"},
        {"onoff", R"(# Synchronized on-off flooding against long-running TCP users.
[scenario]
name = onoff
policy = core
seed = 1
duration = 800
warmup = 300

[topology]
kind = dumbbell
bottleneck_bps = 10e6
src_as_count = 10
colluder_as_count = 9

[group]
role = tcp
count = 25

[group]
role = onoff
count = 75
rate_bps = 1e6
t_on = 0.5
t_off = 1.5
dst = colluder
)"},
        {"onoff.baseline", R"(# The onoff workload with always-active attackers (t_off = 0).
[scenario]
name = onoff.baseline
policy = core
seed = 1
duration = 800
warmup = 300

[topology]
kind = dumbbell
bottleneck_bps = 10e6
src_as_count = 10
colluder_as_count = 9

[group]
role = tcp
count = 25

[group]
role = onoff
count = 75
rate_bps = 1e6
t_on = 0.5
t_off = 0
dst = colluder
)"},
        {"parking_lot", R"(# Two monitored bottlenecks in a chain; group A crosses both.
[scenario]
name = parking_lot
policy = core
seed = 1
duration = 1600
warmup = 600

[topology]
kind = parking_lot
l1_bps = 16e6
l2_bps = 24e6
colluder_as_count = 3

[group]
role = tcp
count = 25
attach = a

[group]
role = udp_flood
count = 75
attach = a
dst = colluder

[group]
role = tcp
count = 25
attach = b

[group]
role = udp_flood
count = 75
attach = b
dst = colluder

[group]
role = tcp
count = 25
attach = c

[group]
role = udp_flood
count = 75
attach = c
dst = colluder
)"},
        {"parking_lot.b1", R"(# Parking lot with multi-bottleneck feedback in one packet.
[scenario]
name = parking_lot.b1
policy = b1
seed = 1
duration = 1600
warmup = 600

[topology]
kind = parking_lot
l1_bps = 16e6
l2_bps = 24e6
colluder_as_count = 3

[group]
role = tcp
count = 25
attach = a

[group]
role = udp_flood
count = 75
attach = a
dst = colluder

[group]
role = tcp
count = 25
attach = b

[group]
role = udp_flood
count = 75
attach = b
dst = colluder

[group]
role = tcp
count = 25
attach = c

[group]
role = udp_flood
count = 75
attach = c
dst = colluder
)"},
        {"parking_lot.b2", R"(# Parking lot with per-destination rate limiter inference.
[scenario]
name = parking_lot.b2
policy = b2
seed = 1
duration = 1600
warmup = 600

[topology]
kind = parking_lot
l1_bps = 16e6
l2_bps = 24e6
colluder_as_count = 3

[group]
role = tcp
count = 25
attach = a

[group]
role = udp_flood
count = 75
attach = a
dst = colluder

[group]
role = tcp
count = 25
attach = b

[group]
role = udp_flood
count = 75
attach = b
dst = colluder

[group]
role = tcp
count = 25
attach = c

[group]
role = udp_flood
count = 75
attach = c
dst = colluder
)"},
        {"parking_lot.eq", R"(# Parking lot with equal bottleneck capacities.
[scenario]
name = parking_lot.eq
policy = core
seed = 1
duration = 1600
warmup = 600

[topology]
kind = parking_lot
l1_bps = 16e6
l2_bps = 16e6
colluder_as_count = 3

[group]
role = tcp
count = 25
attach = a

[group]
role = udp_flood
count = 75
attach = a
dst = colluder

[group]
role = tcp
count = 25
attach = b

[group]
role = udp_flood
count = 75
attach = b
dst = colluder

[group]
role = tcp
count = 25
attach = c

[group]
role = udp_flood
count = 75
attach = c
dst = colluder
)"},
        {"parking_lot.rev", R"(# Parking lot with the first bottleneck wider than the second.
[scenario]
name = parking_lot.rev
policy = core
seed = 1
duration = 1600
warmup = 600

[topology]
kind = parking_lot
l1_bps = 24e6
l2_bps = 16e6
colluder_as_count = 3

[group]
role = tcp
count = 25
attach = a

[group]
role = udp_flood
count = 75
attach = a
dst = colluder

[group]
role = tcp
count = 25
attach = b

[group]
role = udp_flood
count = 75
attach = b
dst = colluder

[group]
role = tcp
count = 25
attach = c

[group]
role = udp_flood
count = 75
attach = c
dst = colluder
)"},
        {"compromised_as", R"(# One AS floods through a compromised access router; per-AS fallback on.
[scenario]
name = compromised_as
policy = core
seed = 1
duration = 400
warmup = 150

[topology]
kind = dumbbell
bottleneck_bps = 10e6
src_as_count = 2
colluder_as_count = 1

[fallback]
allowed = true
grace = 20

[group]
role = tcp
count = 10

[group]
role = udp_flood
count = 10
rate_bps = 2e6
dst = colluder
compromised_as = true
)"},
    };
    return presets;
}

inline std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [k, _] : preset_texts()) names.push_back(k);
    return names;
}

inline Scenario load_preset(const std::string& name) {
    auto& t = preset_texts();
    auto it = t.find(name);
    if (it == t.end()) throw ConfigError("unknown preset `" + name + "`");
    std::istringstream in(it->second);
    return parse_scenario(in, "preset:" + name);
}

// Resolves a preset name or a scenario file path.
inline Scenario resolve_scenario(const std::string& arg) {
    if (preset_texts().count(arg)) return load_preset(arg);
    return load_scenario(arg);
}

} // namespace netfence

#endif
