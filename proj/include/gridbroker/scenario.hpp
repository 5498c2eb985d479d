#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridbroker/catalog.hpp"
#include "gridbroker/grid_model.hpp"

// Scenario config: the complete description of one testbed experiment —
// servers, data hosts, catalog entries, the bandwidth trace, the failure
// script and all model knobs. See docs/scenario_format.md.

namespace gridbroker {

using nlohmann::json;

struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FailureAction {
    double time = 0;
    std::string resource;
    enum class Component { compute, data } component = Component::compute;
    enum class Action { fail, recover } action = Action::fail;
};

using FailureScript = std::vector<FailureAction>;

struct EstimatorConfig {
    double alpha = 0.3;
    double prior_s = 100;
    std::map<std::string, double> prior_overrides;  // per-server
};

struct Scenario {
    std::string name;
    GridModel model;  // servers, hosts, files, trace, broker host
    Catalog catalog;
    FailureScript failures;
    EstimatorConfig estimator;

    double event_interval_s = 30;
    double dispatch_overhead_s = 0;  // constant stage-in cost per dispatch
    double overlap_factor = 0;       // transfer/execution streaming overlap in [0,1]
    std::uint64_t output_bytes = 0;  // result files returned to the broker host
    double job_work_s = 100;         // true per-job work at speed factor 1
    std::map<std::string, double> job_work_overrides;  // per job id
    std::optional<int> retry_limit;

    double work_for(const std::string& job_id) const {
        auto it = job_work_overrides.find(job_id);
        return it == job_work_overrides.end() ? job_work_s : it->second;
    }
};

namespace detail {

struct JsonCursor {
    const json& value;
    std::string path;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ScenarioError(path + ": " + msg);
    }

    JsonCursor at(const std::string& key) const {
        if (!value.is_object()) fail("expected an object");
        auto it = value.find(key);
        if (it == value.end()) fail("missing required field '" + key + "'");
        return {*it, path + "." + key};
    }

    std::optional<JsonCursor> maybe(const std::string& key) const {
        if (!value.is_object()) fail("expected an object");
        auto it = value.find(key);
        if (it == value.end()) return std::nullopt;
        return JsonCursor{*it, path + "." + key};
    }

    JsonCursor item(std::size_t i) const {
        return {value.at(i), path + "[" + std::to_string(i) + "]"};
    }

    std::string str() const {
        if (!value.is_string()) fail("expected a string");
        return value.get<std::string>();
    }

    double num() const {
        if (!value.is_number()) fail("expected a number");
        return value.get<double>();
    }

    std::uint64_t uint() const {
        if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<long long>() >= 0))
            fail("expected a non-negative integer");
        return value.get<std::uint64_t>();
    }

    int positive_int(const char* what) const {
        if (!value.is_number_integer()) fail(std::string("expected an integer ") + what);
        auto v = value.get<long long>();
        if (v < 1) fail(std::string(what) + " must be >= 1");
        return static_cast<int>(v);
    }

    const json& array() const {
        if (!value.is_array()) fail("expected an array");
        return value;
    }
};

inline std::map<std::string, std::map<std::string, double>> parse_link_matrix(
    const JsonCursor& cur) {
    std::map<std::string, std::map<std::string, double>> matrix;
    if (!cur.value.is_object()) cur.fail("expected an object of {from: {to: value}}");
    for (const auto& [from, row] : cur.value.items()) {
        JsonCursor row_cur{row, cur.path + "." + from};
        if (!row.is_object()) row_cur.fail("expected an object of {to: value}");
        for (const auto& [to, v] : row.items()) {
            JsonCursor v_cur{v, row_cur.path + "." + to};
            double mbps = v_cur.num();
            if (mbps < 0) v_cur.fail("link value must be >= 0");
            matrix[from][to] = mbps;
        }
    }
    return matrix;
}

}  // namespace detail

inline Scenario parse_scenario(const json& root, const std::string& default_name = "scenario") {
    detail::JsonCursor top{root, "scenario"};
    Scenario sc;
    sc.name = top.maybe("name") ? top.at("name").str() : default_name;

    if (auto hosts = top.maybe("data_hosts")) {
        std::size_t i = 0;
        for ([[maybe_unused]] const auto& _ : hosts->array()) {
            auto h = hosts->item(i++);
            DataHost host;
            host.id = h.at("id").str();
            if (sc.model.hosts.count(host.id)) h.fail("duplicate data host id '" + host.id + "'");
            sc.model.hosts.emplace(host.id, std::move(host));
        }
    }

    {
        auto servers = top.at("servers");
        std::size_t i = 0;
        for ([[maybe_unused]] const auto& _ : servers.array()) {
            auto s = servers.item(i++);
            ComputeServer server;
            server.id = s.at("id").str();
            if (sc.model.servers.count(server.id)) s.fail("duplicate server id '" + server.id + "'");
            server.cpu_count = s.at("cpus").positive_int("cpu count");
            server.max_job_limit = s.at("max_jobs").positive_int("max job limit");
            if (auto speed = s.maybe("speed_factor")) {
                server.speed_factor = speed->num();
                if (server.speed_factor <= 0) speed->fail("speed factor must be > 0");
            }
            if (auto mw = s.maybe("middleware")) server.middleware = mw->str();
            if (auto dh = s.maybe("data_host")) {
                server.co_located_host = dh->str();
                if (!sc.model.hosts.count(server.co_located_host))
                    dh->fail("server references undeclared data host '" +
                             server.co_located_host + "'");
            }
            if (server.max_job_limit < server.cpu_count)
                s.fail("max_jobs must be >= cpus on server '" + server.id + "'");
            sc.model.servers.emplace(server.id, std::move(server));
        }
    }
    for (auto& [id, server] : sc.model.servers)
        if (!server.co_located_host.empty())
            sc.model.hosts.at(server.co_located_host).co_located_compute = id;

    if (auto broker = top.maybe("broker_host")) {
        sc.model.broker_host = broker->str();
        if (!sc.model.hosts.count(sc.model.broker_host) &&
            !sc.model.servers.count(sc.model.broker_host))
            broker->fail("broker host '" + sc.model.broker_host + "' is not a declared member");
    }

    if (auto catalog = top.maybe("catalog")) {
        std::size_t i = 0;
        for ([[maybe_unused]] const auto& _ : catalog->array()) {
            auto entry = catalog->item(i++);
            LogicalFileName lfn;
            try {
                lfn = LogicalFileName::parse(entry.at("lfn").str());
            } catch (const CatalogError& e) {
                entry.at("lfn").fail(e.what());
            }
            std::uint64_t size = entry.at("size_bytes").uint();
            if (size == 0) entry.at("size_bytes").fail("file size must be > 0");
            std::vector<ReplicaLocation> replicas;
            auto reps = entry.at("replicas");
            std::size_t j = 0;
            for ([[maybe_unused]] const auto& __ : reps.array()) {
                auto r = reps.item(j++);
                ReplicaLocation loc;
                loc.host = r.at("host").str();
                if (!sc.model.hosts.count(loc.host))
                    r.at("host").fail("replica on undeclared data host '" + loc.host + "'");
                if (auto p = r.maybe("path")) loc.physical_path = p->str();
                replicas.push_back(std::move(loc));
            }
            if (replicas.empty()) entry.at("replicas").fail("at least one replica required");
            try {
                sc.catalog.register_file(lfn, size, std::move(replicas));
            } catch (const CatalogError& e) {
                entry.fail(e.what());
            }
        }
    }

    if (auto trace = top.maybe("bandwidth_trace")) {
        if (auto sym = trace->maybe("symmetric")) {
            if (!sym->value.is_boolean()) sym->fail("expected a boolean");
            sc.model.trace.symmetric = sym->value.get<bool>();
        }
        if (auto noise = trace->maybe("noise_amplitude")) {
            sc.model.trace.noise_amplitude = noise->num();
            if (sc.model.trace.noise_amplitude < 0 || sc.model.trace.noise_amplitude >= 1)
                noise->fail("noise amplitude must be in [0,1)");
        }
        auto steps = trace->at("steps");
        std::size_t i = 0;
        for ([[maybe_unused]] const auto& _ : steps.array()) {
            auto step_cur = steps.item(i++);
            TraceStep step;
            step.from_time = step_cur.at("from_time").num();
            step.mbps = detail::parse_link_matrix(step_cur.at("mbps"));
            if (auto lat = step_cur.maybe("latency_ms"))
                step.latency = detail::parse_link_matrix(*lat);
            if (!sc.model.trace.steps.empty() &&
                step.from_time <= sc.model.trace.steps.back().from_time)
                step_cur.at("from_time").fail("trace steps must be in increasing time order");
            sc.model.trace.steps.push_back(std::move(step));
        }
        if (!sc.model.trace.steps.empty() && sc.model.trace.steps.front().from_time != 0)
            trace->at("steps").item(0).fail("first trace step must start at time 0");
    }

    if (auto failures = top.maybe("failures")) {
        std::size_t i = 0;
        for ([[maybe_unused]] const auto& _ : failures->array()) {
            auto f = failures->item(i++);
            FailureAction action;
            action.time = f.at("time").num();
            if (action.time < 0) f.at("time").fail("failure time must be >= 0");
            action.resource = f.at("resource").str();
            std::string component = f.at("component").str();
            if (component == "compute") {
                action.component = FailureAction::Component::compute;
                if (!sc.model.servers.count(action.resource))
                    f.at("resource").fail("unknown compute server '" + action.resource + "'");
            } else if (component == "data") {
                action.component = FailureAction::Component::data;
                if (!sc.model.hosts.count(action.resource))
                    f.at("resource").fail("unknown data host '" + action.resource + "'");
            } else {
                f.at("component").fail("component must be 'compute' or 'data'");
            }
            std::string act = f.at("action").str();
            if (act == "fail")
                action.action = FailureAction::Action::fail;
            else if (act == "recover")
                action.action = FailureAction::Action::recover;
            else
                f.at("action").fail("action must be 'fail' or 'recover'");
            sc.failures.push_back(action);
        }
    }

    if (auto est = top.maybe("estimator")) {
        if (auto alpha = est->maybe("alpha")) {
            sc.estimator.alpha = alpha->num();
            if (sc.estimator.alpha <= 0 || sc.estimator.alpha > 1)
                alpha->fail("alpha must be in (0,1]");
        }
        if (auto prior = est->maybe("prior_s")) {
            sc.estimator.prior_s = prior->num();
            if (sc.estimator.prior_s <= 0) prior->fail("prior must be > 0");
        }
        if (auto overrides = est->maybe("priors")) {
            if (!overrides->value.is_object()) overrides->fail("expected an object");
            for (const auto& [server, v] : overrides->value.items()) {
                detail::JsonCursor cur{v, overrides->path + "." + server};
                if (!sc.model.servers.count(server))
                    cur.fail("prior for unknown server '" + server + "'");
                double p = cur.num();
                if (p <= 0) cur.fail("prior must be > 0");
                sc.estimator.prior_overrides[server] = p;
            }
        }
    }

    if (auto v = top.maybe("event_interval_s")) {
        sc.event_interval_s = v->num();
        if (sc.event_interval_s <= 0) v->fail("event interval must be > 0");
    }
    if (auto v = top.maybe("dispatch_overhead_s")) {
        sc.dispatch_overhead_s = v->num();
        if (sc.dispatch_overhead_s < 0) v->fail("dispatch overhead must be >= 0");
    }
    if (auto v = top.maybe("overlap_factor")) {
        sc.overlap_factor = v->num();
        if (sc.overlap_factor < 0 || sc.overlap_factor > 1)
            v->fail("overlap factor must be in [0,1]");
    }
    if (auto v = top.maybe("output_bytes")) sc.output_bytes = v->uint();
    if (auto v = top.maybe("job_work_s")) {
        sc.job_work_s = v->num();
        if (sc.job_work_s <= 0) v->fail("job work must be > 0");
    }
    if (auto v = top.maybe("job_work_overrides")) {
        if (!v->value.is_object()) v->fail("expected an object");
        for (const auto& [job, w] : v->value.items()) {
            detail::JsonCursor cur{w, v->path + "." + job};
            double work = cur.num();
            if (work <= 0) cur.fail("job work must be > 0");
            sc.job_work_overrides[job] = work;
        }
    }
    if (auto v = top.maybe("retry_limit")) {
        if (!v->value.is_null()) sc.retry_limit = v->positive_int("retry limit");
    }

    // Mirror catalog entries into the model's data-file table.
    for (const auto& [path, entry] : sc.catalog) {
        DataFile file{entry.lfn, entry.size_bytes, {}};
        for (const auto& r : entry.replicas) file.hosts.push_back(r.host);
        std::sort(file.hosts.begin(), file.hosts.end());
        file.hosts.erase(std::unique(file.hosts.begin(), file.hosts.end()), file.hosts.end());
        sc.model.files.emplace(path, std::move(file));
    }

    // The trace must cover every link a transfer could use.
    if (!sc.model.hosts.empty() || !sc.model.broker_host.empty()) {
        std::vector<std::pair<std::string, std::string>> required;
        for (const auto& [host_id, host] : sc.model.hosts)
            for (const auto& [server_id, server] : sc.model.servers)
                if (host.co_located_compute != server_id && server.site() != host_id)
                    required.emplace_back(host_id, server.site());
        if (!sc.model.broker_host.empty())
            for (const auto& [server_id, server] : sc.model.servers)
                if (server.site() != sc.model.broker_host)
                    required.emplace_back(server.site(), sc.model.broker_host);
        for (std::size_t i = 0; i < sc.model.trace.steps.size(); ++i) {
            const auto& step = sc.model.trace.steps[i];
            for (const auto& [from, to] : required) {
                double bw = BandwidthTrace::lookup(step.mbps, from, to, sc.model.trace.symmetric,
                                                   -1.0);
                if (bw < 0)
                    throw ScenarioError("scenario.bandwidth_trace.steps[" + std::to_string(i) +
                                        "].mbps: missing link " + from + " -> " + to);
            }
        }
        if (sc.model.trace.steps.empty() && !required.empty())
            throw ScenarioError("scenario.bandwidth_trace: required but missing (" +
                                std::to_string(required.size()) + " remote links in use)");
    }

    return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file '" + path.string() + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ScenarioError("scenario '" + path.string() + "': " + e.what());
    }
    return parse_scenario(root, path.stem().string());
}

}  // namespace gridbroker
