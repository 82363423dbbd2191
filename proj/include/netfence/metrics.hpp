#ifndef NETFENCE_METRICS_HPP
#define NETFENCE_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace netfence {

// Jain fairness index (sum x)^2 / (n sum x^2); 1 under perfect equality.
inline double jain_index(const std::vector<double>& x) {
    if (x.empty()) throw std::invalid_argument("jain_index: empty input");
    double s = 0, s2 = 0;
    for (double v : x) {
        if (v < 0) throw std::invalid_argument("jain_index: negative throughput");
        s += v;
        s2 += v * v;
    }
    if (s2 == 0) throw std::invalid_argument("jain_index: all-zero input");
    return s * s / (double(x.size()) * s2);
}

// Guaranteed steady-state share of a sender with sufficient demand:
// nu * (1-delta)^3 * C / (G + B).
inline double theorem_bound(double good, double bad, double capacity_bps, double nu,
                            double delta_md) {
    double rho = (1.0 - delta_md) * (1.0 - delta_md) * (1.0 - delta_md);
    return nu * rho * capacity_bps / (good + bad);
}

// Analytic attacker/legitimate share ratio of per-destination fair queuing
// with N_C colluding destinations: (N_C/(B(1+N_C))) / (1/(G(1+N_C))).
inline double tva_share_ratio(double good, double bad, double colluders) {
    if (bad <= 0) throw std::invalid_argument("tva_share_ratio: no attackers");
    return colluders * good / bad;
}

// One emitted measurement row: entity_id, metric, t_start, t_end, value.
struct MetricRow {
    std::string entity;
    std::string metric;
    double t0 = 0, t1 = 0;
    double value = 0;
};

inline void write_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
    os << "entity_id,metric,t_start,t_end,value\n";
    char buf[160];
    for (const auto& r : rows) {
        snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.9g\n", r.entity.c_str(),
                 r.metric.c_str(), r.t0, r.t1, r.value);
        os << buf;
    }
}

struct SenderStat {
    uint32_t host = 0;
    std::string role;
    bool legitimate = false;
    double throughput_bps = 0;  // goodput over the measurement window
    double offered_note = 0;
};

struct TransferStats {
    uint64_t started = 0;
    uint64_t completed = 0;
    uint64_t aborted = 0;
    double mean_time_s = 0;
    double completion_ratio() const {
        uint64_t finished = completed + aborted;
        return finished == 0 ? 1.0 : double(completed) / double(finished);
    }
};

// Results of one simulation run.
struct Metrics {
    double duration = 0;
    double warmup = 0;
    std::vector<SenderStat> senders;
    double throughput_ratio = 0;  // mean legitimate / mean attacker
    double fairness_index = 0;    // among legitimate senders
    double utilization = 0;       // of the named bottleneck over the window
    double bottleneck_bps = 0;
    TransferStats transfers;
    // theorem inputs for the run
    double good = 0, bad = 0;
    uint64_t trace_hash = 0;  // order-sensitive digest of the packet trace
    std::vector<MetricRow> summary_rows;     // metrics.csv
    std::vector<MetricRow> timeseries_rows;  // timeseries.csv

    double mean_legit_bps() const {
        double s = 0;
        uint64_t n = 0;
        for (const auto& st : senders)
            if (st.legitimate) {
                s += st.throughput_bps;
                n++;
            }
        return n ? s / double(n) : 0;
    }
    double mean_attacker_bps() const {
        double s = 0;
        uint64_t n = 0;
        for (const auto& st : senders)
            if (!st.legitimate) {
                s += st.throughput_bps;
                n++;
            }
        return n ? s / double(n) : 0;
    }
    double min_legit_bps() const {
        double m = -1;
        for (const auto& st : senders)
            if (st.legitimate && (m < 0 || st.throughput_bps < m)) m = st.throughput_bps;
        return m < 0 ? 0 : m;
    }
    std::vector<double> legit_throughputs() const {
        std::vector<double> v;
        for (const auto& st : senders)
            if (st.legitimate) v.push_back(st.throughput_bps);
        return v;
    }
};

} // namespace netfence

#endif
