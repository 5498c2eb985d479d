#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridbroker/scenario.hpp"
#include "gridbroker/scheduler.hpp"

// Deterministic discrete-event simulator standing in for the live testbed:
// dispatch, data transfer, execution, failure injection and the persistent
// bookkeeper log. Identical inputs produce byte-identical reports.

namespace gridbroker {

struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SimEventKind {
    resource_failure,
    resource_recovery,
    measurement_round,
    dispatch_complete,
    transfer_complete,
    execution_complete,
    scheduling_tick,
};

inline const char* to_string(SimEventKind k) {
    switch (k) {
        case SimEventKind::resource_failure: return "resource_failure";
        case SimEventKind::resource_recovery: return "resource_recovery";
        case SimEventKind::measurement_round: return "measurement_round";
        case SimEventKind::dispatch_complete: return "dispatch_complete";
        case SimEventKind::transfer_complete: return "transfer_complete";
        case SimEventKind::execution_complete: return "execution_complete";
        case SimEventKind::scheduling_tick: return "scheduling_tick";
    }
    return "?";
}

// Processed in non-decreasing time; ties broken by (kind, subject, seq).
struct SimEvent {
    double time = 0;
    SimEventKind kind = SimEventKind::scheduling_tick;
    std::string subject;  // job or resource id
    int payload = -1;     // attempt token or script index
    std::uint64_t seq = 0;

    friend bool operator>(const SimEvent& a, const SimEvent& b) {
        return std::tie(a.time, a.kind, a.subject, a.seq) >
               std::tie(b.time, b.kind, b.subject, b.seq);
    }
};

struct StatusChange {
    double time = 0;
    JobStatus status = JobStatus::unassigned;
};

struct JobRecord {
    std::string id;
    std::string server;     // final attribution
    std::string data_host;
    std::uint64_t transfer_bytes = 0;
    double transfer_seconds = 0;
    double execution_seconds = 0;
    double total_seconds = 0;  // slot occupancy of the final attempt
    std::vector<StatusChange> history;
};

struct ServerCount {
    std::string id;
    int done = 0;
    int failed = 0;
};

struct BandwidthSample {
    double time = 0;
    std::string from, to;
    double mbps = 0;
};

struct ExperimentReport {
    std::string policy;
    std::string scenario;
    std::uint64_t seed = 0;
    double total_time_s = 0;
    int jobs_done = 0;
    int jobs_failed = 0;
    std::uint64_t bytes_transferred = 0;
    std::vector<ServerCount> per_server;
    std::vector<JobRecord> jobs;
    std::vector<BandwidthSample> bandwidth_samples;

    json to_json() const {
        json j;
        j["policy"] = policy;
        j["scenario"] = scenario;
        j["seed"] = seed;
        j["total_time_s"] = total_time_s;
        j["jobs_done"] = jobs_done;
        j["jobs_failed"] = jobs_failed;
        j["bytes_transferred"] = bytes_transferred;
        j["per_server"] = json::array();
        for (const auto& s : per_server)
            j["per_server"].push_back({{"id", s.id}, {"done", s.done}, {"failed", s.failed}});
        j["jobs"] = json::array();
        for (const auto& r : jobs) {
            json h = json::array();
            for (const auto& c : r.history)
                h.push_back({{"t", c.time}, {"status", to_string(c.status)}});
            j["jobs"].push_back({{"id", r.id},
                                 {"server", r.server},
                                 {"data_host", r.data_host},
                                 {"transfer_bytes", r.transfer_bytes},
                                 {"transfer_s", r.transfer_seconds},
                                 {"execution_s", r.execution_seconds},
                                 {"total_s", r.total_seconds},
                                 {"history", h}});
        }
        j["bandwidth_samples"] = json::array();
        for (const auto& s : bandwidth_samples)
            j["bandwidth_samples"].push_back(
                {{"t", s.time}, {"from", s.from}, {"to", s.to}, {"mbps", s.mbps}});
        return j;
    }

    friend bool operator==(const ExperimentReport& a, const ExperimentReport& b) {
        return a.to_json() == b.to_json();
    }
};

// Append-only, line-delimited record stream. Every record also stays in
// memory so the live report is folded from exactly what was persisted.
class Bookkeeper {
public:
    explicit Bookkeeper(const std::string& path = "") {
        if (!path.empty()) {
            path_ = path;
            out_.open(path, std::ios::trunc);
            if (!out_) throw SimError("bookkeeper: cannot open log file '" + path + "'");
        }
    }

    void append(json record) {
        if (out_.is_open()) {
            out_ << record.dump() << '\n';
            if (!out_) throw SimError("bookkeeper: write failed on '" + path_ + "'");
        }
        records_.push_back(std::move(record));
    }

    void flush() {
        if (out_.is_open()) out_.flush();
    }

    const std::vector<json>& records() const { return records_; }

private:
    std::string path_;
    std::ofstream out_;
    std::vector<json> records_;
};

// Rebuilds the experiment report from a record stream. The live report and
// any later replay of the log go through this same fold.
inline ExperimentReport fold_records(const std::vector<json>& records) {
    ExperimentReport report;
    std::map<std::string, std::size_t> job_index;
    std::map<std::string, double> exec_start;

    for (const auto& rec : records) {
        const std::string ev = rec.at("ev").get<std::string>();
        if (ev == "run_start") {
            report.policy = rec.at("policy").get<std::string>();
            report.scenario = rec.at("scenario").get<std::string>();
            report.seed = rec.at("seed").get<std::uint64_t>();
            for (const auto& s : rec.at("servers"))
                report.per_server.push_back({s.get<std::string>(), 0, 0});
        } else if (ev == "status") {
            const std::string id = rec.at("job").get<std::string>();
            auto [it, fresh] = job_index.try_emplace(id, report.jobs.size());
            if (fresh) report.jobs.push_back(JobRecord{id});
            JobRecord& r = report.jobs[it->second];
            double t = rec.at("t").get<double>();
            auto status = job_status_from_string(rec.at("status").get<std::string>());
            if (!status) throw SimError("bad status record for job '" + id + "'");
            r.server = rec.at("server").get<std::string>();
            r.data_host = rec.at("data_host").get<std::string>();
            if (*status == JobStatus::executing) exec_start[id] = t;
            if (*status == JobStatus::done || *status == JobStatus::failed) {
                bool was_executing =
                    !r.history.empty() && r.history.back().status == JobStatus::executing;
                r.total_seconds = was_executing ? t - exec_start[id] : 0;
            }
            r.history.push_back({t, *status});
        } else if (ev == "transfer") {
            JobRecord& r = report.jobs[job_index.at(rec.at("job").get<std::string>())];
            r.transfer_bytes += rec.at("bytes").get<std::uint64_t>();
            r.transfer_seconds += rec.at("seconds").get<double>();
        } else if (ev == "execution") {
            JobRecord& r = report.jobs[job_index.at(rec.at("job").get<std::string>())];
            r.execution_seconds = rec.at("seconds").get<double>();
        } else if (ev == "bw") {
            report.bandwidth_samples.push_back({rec.at("t").get<double>(),
                                                rec.at("from").get<std::string>(),
                                                rec.at("to").get<std::string>(),
                                                rec.at("mbps").get<double>()});
        } else if (ev == "run_end") {
            report.total_time_s = rec.at("makespan").get<double>();
        }
        // "resource" records inform replay consumers only
    }

    std::map<std::string, std::size_t> server_index;
    for (std::size_t i = 0; i < report.per_server.size(); ++i)
        server_index[report.per_server[i].id] = i;
    for (const auto& r : report.jobs) {
        if (r.history.empty()) continue;
        JobStatus final = r.history.back().status;
        if (final == JobStatus::done) {
            ++report.jobs_done;
            if (auto it = server_index.find(r.server); it != server_index.end())
                ++report.per_server[it->second].done;
        } else if (final == JobStatus::failed) {
            ++report.jobs_failed;
            if (auto it = server_index.find(r.server); it != server_index.end())
                ++report.per_server[it->second].failed;
        }
        report.bytes_transferred += r.transfer_bytes;
    }
    return report;
}

inline ExperimentReport replay_log(std::istream& in) {
    std::vector<json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        records.push_back(json::parse(line));
    }
    return fold_records(records);
}

inline ExperimentReport replay_log_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SimError("cannot open bookkeeper log '" + path + "'");
    return replay_log(in);
}

// Ground-truth phase durations for one dispatch: transfer at the bandwidth
// sampled at transfer start, execution scaled by the server's speed factor.
inline std::pair<double, double> compute_job_timeline(double file_bytes, double bandwidth_mbps,
                                                      double true_work_s, double speed_factor) {
    double transfer = 0;
    if (file_bytes > 0 && !std::isinf(bandwidth_mbps)) {
        if (bandwidth_mbps <= 0)
            return {std::numeric_limits<double>::infinity(), 0};  // transfer failure
        transfer = file_bytes / (bandwidth_mbps * kBytesPerMb);
    }
    return {transfer, true_work_s / speed_factor};
}

struct RunOptions {
    Policy policy = Policy::adaptive;
    std::uint64_t seed = 1;
    std::optional<double> event_interval_s;  // overrides the scenario value
    std::string log_path;                    // empty: keep records in memory only
    std::function<void(const BrokerState&, const SimEvent&)> observer;
};

class SimEngine {
public:
    SimEngine(const Scenario& scenario, JobSet jobs, RunOptions options)
        : scenario_(scenario), options_(std::move(options)), log_(options_.log_path) {
        interval_ = options_.event_interval_s.value_or(scenario.event_interval_s);
        if (interval_ <= 0) throw SimError("event interval must be > 0");

        state_.jobs = std::move(jobs);
        state_.index_jobs();
        state_.model = scenario.model;
        state_.model.noise_seed = options_.seed;
        state_.config.retry_limit = scenario.retry_limit;
        for (const auto& [id, server] : state_.model.servers) {
            double prior = scenario.estimator.prior_s;
            if (auto it = scenario.estimator.prior_overrides.find(id);
                it != scenario.estimator.prior_overrides.end())
                prior = it->second;
            state_.estimators.emplace(id,
                                      RateEstimator::with_prior(id, scenario.estimator.alpha, prior));
        }
        state_.on_transition = [this](double t, const Job& j) {
            record_status(t, j);
        };
        script_done_.assign(scenario.failures.size(), false);
    }

    ExperimentReport run() {
        json start = {{"ev", "run_start"},
                      {"t", 0.0},
                      {"policy", to_string(options_.policy)},
                      {"scenario", scenario_.name},
                      {"seed", options_.seed},
                      {"event_interval_s", interval_},
                      {"jobs", state_.jobs.jobs.size()}};
        start["servers"] = json::array();
        for (const auto& [id, server] : state_.model.servers) start["servers"].push_back(id);
        log_.append(start);

        for (Job& job : state_.jobs.jobs) {
            state_.unassigned.push_back(job.id);
            record_status(0.0, job);
        }
        for (std::size_t i = 0; i < scenario_.failures.size(); ++i) {
            const auto& f = scenario_.failures[i];
            push({f.time,
                  f.action == FailureAction::Action::fail ? SimEventKind::resource_failure
                                                          : SimEventKind::resource_recovery,
                  f.resource, static_cast<int>(i)});
        }
        for (const auto& step : state_.model.trace.steps)
            if (step.from_time > 0)
                push({step.from_time, SimEventKind::measurement_round, ""});
        push({0.0, SimEventKind::scheduling_tick, "periodic"});
        snapshot_ = state_.model.refresh(0.0);

        while (!queue_.empty()) {
            if (all_terminal()) break;
            SimEvent ev = queue_.top();
            queue_.pop();
            now_ = ev.time;
            dispatch(ev);
            if (options_.observer) options_.observer(state_, ev);
        }

        log_.append({{"ev", "run_end"}, {"t", now_}, {"makespan", makespan_}});
        log_.flush();
        return fold_records(log_.records());
    }

    // Applies one failure-script action: compute failures kill executing jobs
    // and reclaim waiting ones, data failures only disqualify future
    // candidates (transfers already in flight keep going).
    void inject_failure(const FailureAction& action, double time) {
        if (action.component == FailureAction::Component::compute) {
            ComputeServer& server = state_.model.server(action.resource);
            if (action.action == FailureAction::Action::recover) {
                server.status = ServerStatus::available;
                return;
            }
            server.status = ServerStatus::compute_failed;
            reclaim_undispatched(state_, {server.id}, time);
            std::vector<std::string> running(server.running.begin(), server.running.end());
            server.running.clear();
            FailureOutlook outlook = pending_recoveries();
            for (const auto& job_id : running) {
                Job& job = state_.job(job_id);
                ++job.attempt_count;
                state_.set_status(job, JobStatus::failed, time);
                bool terminal =
                    (options_.policy == Policy::data_local &&
                     data_local_permanently_infeasible(job, state_.model, outlook)) ||
                    (state_.config.retry_limit &&
                     job.attempt_count > *state_.config.retry_limit);
                if (terminal) {
                    note_terminal(time);
                    continue;
                }
                job.assigned_server.clear();
                job.chosen_data_host.clear();
                state_.set_status(job, JobStatus::unassigned, time);
                state_.unassigned.push_front(job_id);
            }
        } else {
            DataHost& host = state_.model.host(action.resource);
            host.service = action.action == FailureAction::Action::fail
                               ? DataServiceStatus::failed
                               : DataServiceStatus::available;
        }
    }

    const BrokerState& broker() const { return state_; }
    const Bookkeeper& bookkeeper() const { return log_; }

private:
    using Queue = std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<>>;

    void push(SimEvent ev) {
        ev.seq = seq_++;
        queue_.push(std::move(ev));
    }

    bool all_terminal() const {
        for (const auto& j : state_.jobs.jobs)
            if (j.status != JobStatus::done && j.status != JobStatus::failed) return false;
        return true;
    }

    void note_terminal(double time) { makespan_ = std::max(makespan_, time); }

    FailureOutlook pending_recoveries() const {
        FailureOutlook outlook;
        for (std::size_t i = 0; i < scenario_.failures.size(); ++i) {
            if (script_done_[i]) continue;
            const auto& f = scenario_.failures[i];
            if (f.action != FailureAction::Action::recover) continue;
            if (f.component == FailureAction::Component::compute)
                outlook.compute_recovery_pending.insert(f.resource);
            else
                outlook.data_recovery_pending.insert(f.resource);
        }
        return outlook;
    }

    bool quiescent_events_pending() const {
        // Anything other than scheduling ticks can still change feasibility.
        Queue copy = queue_;
        while (!copy.empty()) {
            if (copy.top().kind != SimEventKind::scheduling_tick) return true;
            copy.pop();
        }
        return false;
    }

    void record_status(double t, const Job& job) {
        log_.append({{"ev", "status"},
                     {"t", t},
                     {"job", job.id},
                     {"status", to_string(job.status)},
                     {"server", job.assigned_server},
                     {"data_host", job.chosen_data_host}});
        if (job.status == JobStatus::done || job.status == JobStatus::failed) note_terminal(t);
    }

    void sample_bandwidth(double t) {
        if (sampled_at_ && *sampled_at_ == t) return;
        sampled_at_ = t;
        std::set<std::string> sites;
        for (const auto& [id, server] : state_.model.servers) sites.insert(server.site());
        for (const auto& [host_id, host] : state_.model.hosts) {
            for (const auto& site : sites) {
                if (site == host_id) continue;
                log_.append({{"ev", "bw"},
                             {"t", t},
                             {"from", host_id},
                             {"to", site},
                             {"mbps", snapshot_.bandwidth(host_id, site)}});
            }
        }
    }

    void start_waiting_jobs(ComputeServer& server, double t) {
        while (static_cast<int>(server.running.size()) < server.cpu_count &&
               !server.waiting.empty()) {
            std::string job_id = server.waiting.front();
            server.waiting.pop_front();
            Job& job = state_.job(job_id);
            server.running.insert(job_id);
            state_.set_status(job, JobStatus::executing, t);
            push({t + scenario_.dispatch_overhead_s, SimEventKind::dispatch_complete, job_id,
                  job.attempt_count});
        }
    }

    void schedule_immediate_tick(double t) {
        if (immediate_ticks_.insert(t).second)
            push({t, SimEventKind::scheduling_tick, "immediate"});
    }

    // Retry path: the attempt failed before completion, the job goes back to
    // the head of the unassigned list.
    void bounce_job(Job& job, ComputeServer& server, double t) {
        server.running.erase(job.id);
        ++job.attempt_count;
        state_.set_status(job, JobStatus::failed, t);
        job.assigned_server.clear();
        job.chosen_data_host.clear();
        state_.set_status(job, JobStatus::unassigned, t);
        state_.unassigned.push_front(job.id);
        start_waiting_jobs(server, t);
        schedule_immediate_tick(t);
    }

    // Stale events (from a superseded attempt or a job no longer executing)
    // are dropped.
    Job* live_job(const SimEvent& ev) {
        Job& job = state_.job(ev.subject);
        if (job.status != JobStatus::executing || job.attempt_count != ev.payload) return nullptr;
        return &job;
    }

    void dispatch(const SimEvent& ev) {
        switch (ev.kind) {
            case SimEventKind::resource_failure:
            case SimEventKind::resource_recovery: {
                const auto& action = scenario_.failures[static_cast<std::size_t>(ev.payload)];
                script_done_[static_cast<std::size_t>(ev.payload)] = true;
                inject_failure(action, ev.time);
                schedule_immediate_tick(ev.time);
                break;
            }
            case SimEventKind::measurement_round:
                snapshot_ = state_.model.refresh(ev.time);
                break;
            case SimEventKind::scheduling_tick: handle_tick(ev); break;
            case SimEventKind::dispatch_complete: handle_dispatch_complete(ev); break;
            case SimEventKind::transfer_complete: handle_transfer_complete(ev); break;
            case SimEventKind::execution_complete: handle_execution_complete(ev); break;
        }
    }

    void handle_tick(const SimEvent& ev) {
        double t = ev.time;
        if (ev.subject == "immediate") immediate_ticks_.erase(t);
        snapshot_ = state_.model.refresh(t);
        sample_bandwidth(t);

        auto outcome =
            run_scheduling_event(state_, options_.policy, snapshot_, t, pending_recoveries());
        for (auto& [id, server] : state_.model.servers) start_waiting_jobs(server, t);

        // Nothing running, nothing placed, nothing scripted to change:
        // the remaining unassigned jobs can never run.
        if (outcome.assignments.empty() && !all_terminal()) {
            bool anything_active = false;
            for (const auto& [id, server] : state_.model.servers)
                if (server.committed() > 0) anything_active = true;
            if (!anything_active && !quiescent_events_pending()) {
                auto stuck = state_.unassigned;
                state_.unassigned.clear();
                for (const auto& job_id : stuck) {
                    Job& job = state_.job(job_id);
                    attribute_failure_site(job, state_.model);
                    state_.set_status(job, JobStatus::failed, t);
                }
            }
        }

        if (ev.subject == "periodic" && !all_terminal())
            push({t + interval_, SimEventKind::scheduling_tick, "periodic"});
    }

    void handle_dispatch_complete(const SimEvent& ev) {
        Job* job = live_job(ev);
        if (!job) return;
        double t = ev.time;
        ComputeServer& server = state_.model.server(job->assigned_server);
        pending_transfer_.erase(job->id);  // drop leftovers from a killed attempt
        if (!job->required_lfn) {
            push({t, SimEventKind::transfer_complete, job->id, job->attempt_count});
            return;
        }
        const DataHost& host = state_.model.host(job->chosen_data_host);
        snapshot_ = state_.model.refresh(t);  // bandwidth sampled once, at transfer start
        double bw = state_.model.available_bandwidth(snapshot_, host.id, server.id);
        auto [transfer_s, exec_s] = compute_job_timeline(
            static_cast<double>(state_.model.file(*job->required_lfn).size_bytes), bw,
            scenario_.work_for(job->id), server.speed_factor);
        if (host.service != DataServiceStatus::available || std::isinf(transfer_s)) {
            bounce_job(*job, server, t);
            return;
        }
        if (transfer_s > 0) {
            pending_transfer_[job->id] = {state_.model.file(*job->required_lfn).size_bytes,
                                          transfer_s};
        }
        push({t + transfer_s, SimEventKind::transfer_complete, job->id, job->attempt_count});
    }

    void handle_transfer_complete(const SimEvent& ev) {
        Job* job = live_job(ev);
        if (!job) return;
        double t = ev.time;
        const ComputeServer& server = state_.model.server(job->assigned_server);

        double transfer_s = 0;
        if (auto it = pending_transfer_.find(job->id); it != pending_transfer_.end()) {
            log_.append({{"ev", "transfer"},
                         {"t", t},
                         {"job", job->id},
                         {"bytes", it->second.first},
                         {"seconds", it->second.second}});
            transfer_s = it->second.second;
            pending_transfer_.erase(it);
        }

        double exec_s = scenario_.work_for(job->id) / server.speed_factor;
        double overlap_credit = scenario_.overlap_factor * std::min(transfer_s, exec_s);
        double output_s = output_copy_seconds(*job, server, t);
        pending_exec_[job->id] = exec_s;
        push({t + exec_s - overlap_credit + output_s, SimEventKind::execution_complete, job->id,
              job->attempt_count});
    }

    // Result files flow back to the broker host at the bandwidth current when
    // execution starts; a dead link silently skips the copy.
    double output_copy_seconds(const Job& job, const ComputeServer& server, double t) {
        if (scenario_.output_bytes == 0 || state_.model.broker_host.empty()) return 0;
        if (!has_output_copy(job)) return 0;
        if (server.site() == state_.model.broker_host) return 0;
        double bw = snapshot_.bandwidth(server.site(), state_.model.broker_host);
        if (bw <= 0 || std::isinf(bw)) return 0;
        return static_cast<double>(scenario_.output_bytes) / (bw * kBytesPerMb);
    }

    void handle_execution_complete(const SimEvent& ev) {
        Job* job = live_job(ev);
        if (!job) return;
        double t = ev.time;
        ComputeServer& server = state_.model.server(job->assigned_server);
        double exec_s = pending_exec_.at(job->id);
        pending_exec_.erase(job->id);
        log_.append({{"ev", "execution"}, {"t", t}, {"job", job->id}, {"seconds", exec_s}});
        state_.estimators.at(server.id).observe_completion(exec_s * server.speed_factor);
        server.history.emplace_back(job->id, exec_s);
        server.running.erase(job->id);
        state_.set_status(*job, JobStatus::done, t);
        start_waiting_jobs(server, t);
        schedule_immediate_tick(t);
    }

    const Scenario& scenario_;
    RunOptions options_;
    Bookkeeper log_;
    BrokerState state_;
    NetworkSnapshot snapshot_;
    Queue queue_;
    std::uint64_t seq_ = 0;
    double now_ = 0;
    double interval_ = 30;
    double makespan_ = 0;
    std::optional<double> sampled_at_;
    std::set<double> immediate_ticks_;
    std::vector<bool> script_done_;
    std::map<std::string, std::pair<std::uint64_t, double>> pending_transfer_;
    std::map<std::string, double> pending_exec_;
};

// Full pipeline: resolve the plan against the scenario catalog, decompose,
// then simulate under the given policy.
inline ExperimentReport run_simulation(const Scenario& scenario, const PlanFile& plan,
                                       const RunOptions& options) {
    ResolvedPlan resolved = resolve_dynamic_parameters(plan, scenario.catalog);
    JobSet jobs = decompose(resolved);
    SimEngine engine(scenario, std::move(jobs), options);
    return engine.run();
}

}  // namespace gridbroker
