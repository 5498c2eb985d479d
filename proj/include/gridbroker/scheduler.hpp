#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "gridbroker/decomposer.hpp"
#include "gridbroker/grid_model.hpp"

// Scheduling-event loop with three pluggable placement policies:
//   data-local   — run only where the data already is, no transfers ever
//   compute-only — pick the least-loaded server, ignore data location
//   adaptive     — minimize wait + transfer + service over (host, server) pairs

namespace gridbroker {

enum class Policy { data_local, compute_only, adaptive };

inline const char* to_string(Policy p) {
    switch (p) {
        case Policy::data_local: return "data-local";
        case Policy::compute_only: return "compute-only";
        case Policy::adaptive: return "adaptive";
    }
    return "?";
}

inline std::optional<Policy> policy_from_string(std::string_view s) {
    if (s == "data-local") return Policy::data_local;
    if (s == "compute-only") return Policy::compute_only;
    if (s == "adaptive") return Policy::adaptive;
    return std::nullopt;
}

struct CandidatePair {
    std::string data_host;  // empty for jobs without input data
    std::string compute_server;
    double estimated_completion = 0;
};

struct SelectedPair {
    std::string data_host;
    std::string compute_server;
    double estimated_completion = 0;
};

struct Assignment {
    std::string job_id;
    std::string compute_server;
    std::string data_host;
    double decision_time = 0;
    double predicted_completion = 0;
};

// Servers whose recovery is still scripted; used to tell a transient outage
// from a permanently lost placement.
struct FailureOutlook {
    std::set<std::string> compute_recovery_pending;
    std::set<std::string> data_recovery_pending;
};

struct SchedulerConfig {
    std::optional<int> retry_limit;  // attempts before a job is declared failed
};

using Estimators = std::map<std::string, RateEstimator>;

// Replica hosts whose data service is currently usable for this job.
inline std::vector<std::string> usable_data_hosts(const Job& job, const GridModel& model) {
    std::vector<std::string> out;
    if (!job.required_lfn) return out;
    const DataFile& file = model.file(*job.required_lfn);
    for (const auto& host_id : file.hosts)
        if (model.host(host_id).service == DataServiceStatus::available)
            out.push_back(host_id);
    return out;
}

// Data-ComputeResource-List: every feasible (host, server) pair with its
// estimated completion time. Jobs without input data pair with every free
// server at zero transfer cost.
inline std::vector<CandidatePair> candidate_pairs(const Job& job, const GridModel& model,
                                                  const Estimators& estimators,
                                                  const NetworkSnapshot& snap) {
    std::vector<CandidatePair> pairs;
    double bytes = job.required_lfn
                       ? static_cast<double>(model.file(*job.required_lfn).size_bytes)
                       : 0.0;
    std::vector<std::string> data_hosts = usable_data_hosts(job, model);
    if (!job.required_lfn) data_hosts = {""};
    for (const auto& host_id : data_hosts) {
        for (const auto& [server_id, server] : model.servers) {
            if (!server.accepts_jobs()) continue;
            double ect = estimated_completion_time(model, snap, estimators.at(server_id),
                                                   server_id, host_id, bytes);
            if (std::isinf(ect)) continue;  // zero-bandwidth link
            pairs.push_back({host_id, server_id, ect});
        }
    }
    return pairs;
}

// Earliest completion over the full pair list, ties by (server id, host id).
inline std::optional<SelectedPair> select_pair_adaptive(const Job& job, const GridModel& model,
                                                        const Estimators& estimators,
                                                        const NetworkSnapshot& snap) {
    std::optional<SelectedPair> best;
    for (const auto& c : candidate_pairs(job, model, estimators, snap)) {
        if (!best || c.estimated_completion < best->estimated_completion ||
            (c.estimated_completion == best->estimated_completion &&
             std::tie(c.compute_server, c.data_host) <
                 std::tie(best->compute_server, best->data_host)))
            best = SelectedPair{c.data_host, c.compute_server, c.estimated_completion};
    }
    return best;
}

// Least (wait + service) server regardless of data location; the transfer
// is still paid at execution from the highest-bandwidth replica host. A
// server from which no replica is reachable is skipped.
inline std::optional<SelectedPair> select_server_compute_only(const Job& job,
                                                              const GridModel& model,
                                                              const Estimators& estimators,
                                                              const NetworkSnapshot& snap) {
    std::vector<std::pair<double, std::string>> order;  // (cost, server)
    for (const auto& [server_id, server] : model.servers) {
        if (!server.accepts_jobs()) continue;
        double cost = completion_time_estimate(server.committed(), server.cpu_count,
                                               server.speed_factor,
                                               estimators.at(server_id).estimate_s,
                                               /*file_bytes=*/0, kInfiniteBandwidth);
        order.emplace_back(cost, server_id);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::string> data_hosts = usable_data_hosts(job, model);
    for (const auto& [cost, server_id] : order) {
        if (!job.required_lfn) return SelectedPair{"", server_id, cost};
        std::string best_host;
        double best_bw = 0;
        for (const auto& host_id : data_hosts) {
            double bw = model.available_bandwidth(snap, host_id, server_id);
            if (bw > best_bw || (bw == best_bw && bw > 0 &&
                                 (best_host.empty() || host_id < best_host))) {
                best_bw = bw;
                best_host = host_id;
            }
        }
        if (best_host.empty()) continue;  // no reachable replica from here
        return SelectedPair{best_host, server_id, cost};
    }
    return std::nullopt;
}

// Only servers co-located with a replica qualify; earliest wait + service
// wins, ties by (server id, host id). No transfer term ever applies.
inline std::optional<SelectedPair> select_pair_data_local(const Job& job, const GridModel& model,
                                                          const Estimators& estimators) {
    std::optional<SelectedPair> best;
    auto consider = [&](const std::string& host_id, const std::string& server_id) {
        const ComputeServer& server = model.server(server_id);
        if (!server.accepts_jobs()) return;
        double ect = completion_time_estimate(server.committed(), server.cpu_count,
                                              server.speed_factor,
                                              estimators.at(server_id).estimate_s,
                                              /*file_bytes=*/0, kInfiniteBandwidth);
        if (!best || ect < best->estimated_completion ||
            (ect == best->estimated_completion &&
             std::tie(server_id, host_id) < std::tie(best->compute_server, best->data_host)))
            best = SelectedPair{host_id, server_id, ect};
    };
    if (!job.required_lfn) {
        for (const auto& [server_id, server] : model.servers) consider("", server_id);
        return best;
    }
    for (const auto& host_id : usable_data_hosts(job, model)) {
        const DataHost& host = model.host(host_id);
        if (!host.co_located_compute.empty() && model.servers.count(host.co_located_compute))
            consider(host_id, host.co_located_compute);
    }
    return best;
}

inline std::optional<SelectedPair> select_pair(Policy policy, const Job& job,
                                               const GridModel& model,
                                               const Estimators& estimators,
                                               const NetworkSnapshot& snap) {
    switch (policy) {
        case Policy::adaptive: return select_pair_adaptive(job, model, estimators, snap);
        case Policy::compute_only:
            return select_server_compute_only(job, model, estimators, snap);
        case Policy::data_local: return select_pair_data_local(job, model, estimators);
    }
    return std::nullopt;
}

// True when no replica host can ever serve this job on a co-located server:
// every option is failed with no scripted recovery, or simply absent.
inline bool data_local_permanently_infeasible(const Job& job, const GridModel& model,
                                              const FailureOutlook& outlook) {
    if (!job.required_lfn) return false;
    const DataFile& file = model.file(*job.required_lfn);
    for (const auto& host_id : file.hosts) {
        const DataHost& host = model.host(host_id);
        bool data_ok = host.service == DataServiceStatus::available ||
                       outlook.data_recovery_pending.count(host_id);
        if (!data_ok) continue;
        if (host.co_located_compute.empty() || !model.servers.count(host.co_located_compute))
            continue;
        const ComputeServer& server = model.server(host.co_located_compute);
        if (server.status == ServerStatus::available ||
            outlook.compute_recovery_pending.count(server.id))
            return false;
    }
    return true;
}

// A job declared failed without ever being placed is attributed to the site
// where it would have run: the first replica host and its co-located server.
inline void attribute_failure_site(Job& job, const GridModel& model) {
    if (!job.assigned_server.empty() || !job.required_lfn) return;
    std::vector<std::string> hosts = model.file(*job.required_lfn).hosts;
    std::sort(hosts.begin(), hosts.end());
    if (hosts.empty()) return;
    job.chosen_data_host = hosts.front();
    job.assigned_server = model.host(hosts.front()).co_located_compute;
}

// Broker-side state shared between the scheduler and the simulation engine.
struct BrokerState {
    JobSet jobs;
    std::unordered_map<std::string, std::size_t> job_index;
    std::deque<std::string> unassigned;  // decomposition order, reclaimed jobs at the front
    GridModel model;
    Estimators estimators;
    SchedulerConfig config;

    // Last availability view the scheduler acted on: (status, free slots).
    std::map<std::string, std::pair<ServerStatus, int>> last_view;

    // Invoked on every job status change so the engine can bookkeep.
    std::function<void(double, const Job&)> on_transition;

    Job& job(const std::string& id) { return jobs.jobs.at(job_index.at(id)); }
    const Job& job(const std::string& id) const { return jobs.jobs.at(job_index.at(id)); }

    void index_jobs() {
        job_index.clear();
        for (std::size_t i = 0; i < jobs.jobs.size(); ++i) job_index[jobs.jobs[i].id] = i;
    }

    void set_status(Job& j, JobStatus status, double time) {
        j.status = status;
        if (on_transition) on_transition(time, j);
    }
};

struct EventOutcome {
    std::vector<Assignment> assignments;
    std::vector<std::string> failed_jobs;
    std::vector<std::string> reclaimed_jobs;
};

// Pulls queued-not-yet-started jobs off the given servers and returns them to
// the front of the unassigned list in decomposition order.
inline std::vector<std::string> reclaim_undispatched(BrokerState& state,
                                                     const std::vector<std::string>& servers,
                                                     double time) {
    std::vector<std::string> reclaimed;
    for (const auto& server_id : servers) {
        ComputeServer& server = state.model.server(server_id);
        for (const auto& job_id : server.waiting) reclaimed.push_back(job_id);
        server.waiting.clear();
    }
    std::sort(reclaimed.begin(), reclaimed.end(), [&](const auto& a, const auto& b) {
        return state.job_index.at(a) < state.job_index.at(b);
    });
    for (auto it = reclaimed.rbegin(); it != reclaimed.rend(); ++it) {
        Job& j = state.job(*it);
        j.assigned_server.clear();
        j.chosen_data_host.clear();
        state.set_status(j, JobStatus::unassigned, time);
        state.unassigned.push_front(*it);
    }
    return reclaimed;
}

// One scheduling event: detect availability variation and reclaim affected
// queued jobs, then walk the unassigned list head-first assigning jobs until
// the list is exhausted or every server is at its job limit. Assignments made
// within the event are visible to later selections.
inline EventOutcome run_scheduling_event(BrokerState& state, Policy policy,
                                         const NetworkSnapshot& snap, double time,
                                         const FailureOutlook& outlook = {}) {
    EventOutcome outcome;

    std::vector<std::string> varied;
    for (const auto& [id, server] : state.model.servers) {
        auto now = std::make_pair(server.status, server.free_slots());
        auto it = state.last_view.find(id);
        if (it == state.last_view.end() || it->second != now) varied.push_back(id);
    }
    if (!varied.empty()) outcome.reclaimed_jobs = reclaim_undispatched(state, varied, time);

    auto all_full = [&] {
        for (const auto& [id, server] : state.model.servers)
            if (server.accepts_jobs()) return false;
        return true;
    };

    std::deque<std::string> pending = std::move(state.unassigned);
    state.unassigned.clear();
    bool saturated = false;
    while (!pending.empty()) {
        std::string job_id = pending.front();
        pending.pop_front();
        Job& job = state.job(job_id);
        if (saturated || all_full()) {
            saturated = true;
            state.unassigned.push_back(job_id);
            continue;
        }
        if (state.config.retry_limit && job.attempt_count > *state.config.retry_limit) {
            attribute_failure_site(job, state.model);
            state.set_status(job, JobStatus::failed, time);
            outcome.failed_jobs.push_back(job_id);
            continue;
        }
        auto sel = select_pair(policy, job, state.model, state.estimators, snap);
        if (!sel) {
            if (policy == Policy::data_local &&
                data_local_permanently_infeasible(job, state.model, outlook)) {
                attribute_failure_site(job, state.model);
                state.set_status(job, JobStatus::failed, time);
                outcome.failed_jobs.push_back(job_id);
            } else {
                state.unassigned.push_back(job_id);
            }
            continue;
        }
        ComputeServer& server = state.model.server(sel->compute_server);
        job.assigned_server = sel->compute_server;
        job.chosen_data_host = sel->data_host;
        state.set_status(job, JobStatus::queued, time);
        server.waiting.push_back(job_id);
        outcome.assignments.push_back(
            {job_id, sel->compute_server, sel->data_host, time, sel->estimated_completion});
    }

    state.last_view.clear();
    for (const auto& [id, server] : state.model.servers)
        state.last_view[id] = {server.status, server.free_slots()};
    return outcome;
}

}  // namespace gridbroker
