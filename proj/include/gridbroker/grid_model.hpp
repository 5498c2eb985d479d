#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridbroker/catalog.hpp"
#include "gridbroker/util.hpp"

// Testbed model: compute servers, data hosts, data files, the time-varying
// bandwidth/latency matrix between members, and per-server job-rate
// estimation. Bandwidth is in MB/s with MB = 1e6 bytes.

namespace gridbroker {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kInfiniteBandwidth = std::numeric_limits<double>::infinity();
inline constexpr double kBytesPerMb = 1e6;

enum class ServerStatus { available, compute_failed };
enum class DataServiceStatus { available, failed };

struct ComputeServer {
    std::string id;
    int cpu_count = 1;
    double speed_factor = 1.0;  // service-time divisor
    int max_job_limit = 1;
    std::string middleware;                // informational
    std::string co_located_host;           // empty if this server has no local data host
    ServerStatus status = ServerStatus::available;

    // Runtime state, owned by the simulation loop.
    std::deque<std::string> waiting;              // assigned, not yet on a cpu slot
    std::set<std::string> running;                // occupying cpu slots
    std::vector<std::pair<std::string, double>> history;  // (job, completion duration)

    int committed() const { return static_cast<int>(waiting.size() + running.size()); }
    int free_slots() const { return max_job_limit - committed(); }
    bool accepts_jobs() const {
        return status == ServerStatus::available && free_slots() > 0;
    }

    // Network identity: the co-located data host's site, or the server's own id.
    const std::string& site() const { return co_located_host.empty() ? id : co_located_host; }
};

struct DataHost {
    std::string id;
    std::string co_located_compute;  // empty if pure data host
    DataServiceStatus service = DataServiceStatus::available;
    std::vector<std::string> sorted_compute_cache;  // descending bandwidth, ties by id
};

struct DataFile {
    LogicalFileName lfn;
    std::uint64_t size_bytes = 0;
    std::vector<std::string> hosts;  // non-empty, mirrors the catalog entry
};

struct NetworkSnapshot {
    double time = 0;
    std::vector<std::string> members;  // sorted site ids
    std::map<std::string, int> index;
    std::vector<double> bandwidth_mbps;  // row-major, diagonal = +inf
    std::vector<double> latency_ms;

    double bandwidth(const std::string& from, const std::string& to) const {
        return bandwidth_mbps[offset(from, to)];
    }
    double latency(const std::string& from, const std::string& to) const {
        return latency_ms[offset(from, to)];
    }

    std::size_t offset(const std::string& from, const std::string& to) const {
        auto f = index.find(from), t = index.find(to);
        if (f == index.end()) throw ModelError("unknown network member '" + from + "'");
        if (t == index.end()) throw ModelError("unknown network member '" + to + "'");
        return static_cast<std::size_t>(f->second) * members.size() +
               static_cast<std::size_t>(t->second);
    }
};

// One piecewise-constant segment of the measured link matrix.
struct TraceStep {
    double from_time = 0;
    std::map<std::string, std::map<std::string, double>> mbps;
    std::map<std::string, std::map<std::string, double>> latency;
};

// Stand-in for a live network monitor: piecewise-constant declared links,
// optionally perturbed by seeded multiplicative noise. Noise is a pure
// function of (seed, segment, link), so snapshots are reproducible no matter
// when or how often they are taken.
struct BandwidthTrace {
    std::vector<TraceStep> steps;  // sorted by from_time, first at 0
    bool symmetric = false;
    double noise_amplitude = 0;  // relative, in [0,1)

    std::size_t segment_at(double time) const {
        std::size_t seg = 0;
        for (std::size_t i = 0; i < steps.size(); ++i)
            if (steps[i].from_time <= time) seg = i;
        return seg;
    }

    static double lookup(const std::map<std::string, std::map<std::string, double>>& matrix,
                         const std::string& from, const std::string& to, bool symmetric,
                         double fallback) {
        if (auto f = matrix.find(from); f != matrix.end())
            if (auto t = f->second.find(to); t != f->second.end()) return t->second;
        if (symmetric)
            if (auto f = matrix.find(to); f != matrix.end())
                if (auto t = f->second.find(from); t != f->second.end()) return t->second;
        return fallback;
    }

    double noise_factor(std::uint64_t seed, std::size_t segment, const std::string& from,
                        const std::string& to) const {
        if (noise_amplitude == 0) return 1.0;
        std::uint64_t h = detail::fnv1a(from);
        h = detail::fnv1a("->", h);
        h = detail::fnv1a(to, h);
        h ^= detail::splitmix64(seed + 0x9e37 * (segment + 1));
        double unit = detail::hash_unit(h);
        return std::max(0.0, 1.0 + noise_amplitude * (2.0 * unit - 1.0));
    }

    NetworkSnapshot at(double time, const std::vector<std::string>& members,
                       std::uint64_t seed) const {
        NetworkSnapshot snap;
        snap.time = time;
        snap.members = members;
        for (std::size_t i = 0; i < members.size(); ++i)
            snap.index[members[i]] = static_cast<int>(i);
        std::size_t n = members.size();
        snap.bandwidth_mbps.assign(n * n, 0.0);
        snap.latency_ms.assign(n * n, 0.0);
        std::size_t seg = steps.empty() ? 0 : segment_at(time);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) {
                    snap.bandwidth_mbps[i * n + j] = kInfiniteBandwidth;
                    continue;
                }
                if (steps.empty()) continue;
                const auto& step = steps[seg];
                double bw = lookup(step.mbps, members[i], members[j], symmetric, 0.0);
                bw *= noise_factor(seed, seg, members[i], members[j]);
                snap.bandwidth_mbps[i * n + j] = bw;
                snap.latency_ms[i * n + j] =
                    lookup(step.latency, members[i], members[j], symmetric, 0.0);
            }
        }
        return snap;
    }
};

// Exponentially weighted moving average of observed seconds-per-job.
// The estimate equals the prior until the first observation.
struct RateEstimator {
    std::string server_id;
    double alpha = 0.3;  // smoothing weight in (0,1]
    double prior_s = 100;
    double estimate_s = 100;
    int observations = 0;

    static RateEstimator with_prior(std::string server, double alpha, double prior) {
        return {std::move(server), alpha, prior, prior, 0};
    }

    void observe_completion(double duration_s) {
        if (duration_s <= 0)
            throw ModelError("completion duration must be > 0, got " +
                             std::to_string(duration_s));
        estimate_s = alpha * duration_s + (1.0 - alpha) * estimate_s;
        ++observations;
    }
};

class GridModel {
public:
    std::map<std::string, ComputeServer> servers;
    std::map<std::string, DataHost> hosts;
    std::map<std::string, DataFile> files;  // keyed by LFN string
    BandwidthTrace trace;
    std::string broker_host;  // site receiving result files; empty disables the term
    std::uint64_t noise_seed = 0;

    // All network member sites: data hosts plus sites of stand-alone servers.
    std::vector<std::string> members() const {
        std::set<std::string> ids;
        for (const auto& [id, host] : hosts) ids.insert(id);
        for (const auto& [id, server] : servers) ids.insert(server.site());
        if (!broker_host.empty()) ids.insert(broker_host);
        return {ids.begin(), ids.end()};
    }

    ComputeServer& server(const std::string& id) {
        auto it = servers.find(id);
        if (it == servers.end()) throw ModelError("unknown compute server '" + id + "'");
        return it->second;
    }
    const ComputeServer& server(const std::string& id) const {
        return const_cast<GridModel*>(this)->server(id);
    }
    DataHost& host(const std::string& id) {
        auto it = hosts.find(id);
        if (it == hosts.end()) throw ModelError("unknown data host '" + id + "'");
        return it->second;
    }
    const DataHost& host(const std::string& id) const {
        return const_cast<GridModel*>(this)->host(id);
    }
    const DataFile& file(const LogicalFileName& lfn) const {
        auto it = files.find(lfn.str());
        if (it == files.end()) throw ModelError("unknown data file '" + lfn.str() + "'");
        return it->second;
    }

    // Takes a fresh measurement snapshot and rebuilds every data host's
    // compute cache in descending available-bandwidth order.
    NetworkSnapshot refresh(double time) {
        NetworkSnapshot snap = trace.at(time, members(), noise_seed);
        for (auto& [host_id, host] : hosts) {
            std::vector<std::string> order;
            for (const auto& [server_id, server] : servers) order.push_back(server_id);
            std::stable_sort(order.begin(), order.end(),
                             [&](const std::string& a, const std::string& b) {
                                 double ba = available_bandwidth(snap, host_id, a);
                                 double bb = available_bandwidth(snap, host_id, b);
                                 if (ba != bb) return ba > bb;
                                 return a < b;
                             });
            host.sorted_compute_cache = std::move(order);
        }
        return snap;
    }

    // Measured bandwidth from a data host to a compute server, infinite when
    // they share a site.
    double available_bandwidth(const NetworkSnapshot& snap, const std::string& data_host,
                               const std::string& compute_server) const {
        const DataHost& h = host(data_host);
        const ComputeServer& s = server(compute_server);
        if (h.co_located_compute == s.id || s.site() == h.id) return kInfiniteBandwidth;
        return snap.bandwidth(h.id, s.site());
    }

private:
};

// Cost model used by the scheduler: FIFO wait in rounds of the current
// service estimate across cpu slots, plus transfer at the sampled bandwidth,
// plus one service term. Returns +inf when the transfer is impossible.
inline double completion_time_estimate(int committed_jobs, int cpu_count, double speed_factor,
                                       double estimate_s, double file_bytes,
                                       double bandwidth_mbps) {
    double service = estimate_s / speed_factor;
    double transfer = 0;
    if (file_bytes > 0 && !std::isinf(bandwidth_mbps)) {
        if (bandwidth_mbps <= 0) return std::numeric_limits<double>::infinity();
        transfer = file_bytes / (bandwidth_mbps * kBytesPerMb);
    }
    double rounds = std::ceil(static_cast<double>(committed_jobs) / cpu_count);
    return rounds * service + transfer + service;
}

inline double estimated_completion_time(const GridModel& model, const NetworkSnapshot& snap,
                                        const RateEstimator& estimator,
                                        const std::string& compute_server,
                                        const std::string& data_host, double file_bytes) {
    const ComputeServer& s = model.server(compute_server);
    double bw = data_host.empty() ? kInfiniteBandwidth
                                  : model.available_bandwidth(snap, data_host, compute_server);
    return completion_time_estimate(s.committed(), s.cpu_count, s.speed_factor,
                                    estimator.estimate_s, file_bytes, bw);
}

}  // namespace gridbroker
