#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridbroker/catalog.hpp"
#include "gridbroker/plan.hpp"

// Expands a validated plan into the job set: dynamic parameters are resolved
// against the catalog, then one job is created per element of the Cartesian
// product of parameter domains.

namespace gridbroker {

struct DecomposeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class JobStatus { unassigned, queued, executing, done, failed };

inline const char* to_string(JobStatus s) {
    switch (s) {
        case JobStatus::unassigned: return "unassigned";
        case JobStatus::queued: return "queued";
        case JobStatus::executing: return "executing";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "?";
}

inline std::optional<JobStatus> job_status_from_string(std::string_view s) {
    if (s == "unassigned") return JobStatus::unassigned;
    if (s == "queued") return JobStatus::queued;
    if (s == "executing") return JobStatus::executing;
    if (s == "done") return JobStatus::done;
    if (s == "failed") return JobStatus::failed;
    return std::nullopt;
}

struct Job {
    std::string id;  // "job<ordinal>", 1-based decomposition order
    std::vector<std::pair<std::string, std::string>> bindings;  // parameter order
    std::vector<TaskDecl> tasks;  // commands with $NAME references substituted
    std::optional<LogicalFileName> required_lfn;
    JobStatus status = JobStatus::unassigned;
    std::string assigned_server;
    std::string chosen_data_host;
    int attempt_count = 0;

    const std::string* binding(const std::string& name) const {
        for (const auto& [k, v] : bindings)
            if (k == name) return &v;
        return nullptr;
    }
};

struct JobSet {
    std::vector<Job> jobs;
};

struct ResolvedParameter {
    std::string name;
    std::vector<std::string> values;
    bool dynamic = false;  // came from a gridfile pattern
};

struct ResolvedPlan {
    std::vector<ResolvedParameter> parameters;
    std::vector<TaskDecl> tasks;
};

inline std::vector<std::string> expand_range(const RangeValues& r) {
    std::vector<std::string> out;
    // lo + n*step <= hi, with a tolerance for accumulated float error
    auto count = static_cast<std::size_t>(std::floor((r.hi - r.lo) / r.step + 1e-9)) + 1;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(detail::format_number(r.lo + static_cast<double>(i) * r.step));
    return out;
}

// Makes every parameter domain concrete. Gridfile patterns resolve to the
// catalog's sorted match list; an empty match is rejected since it would
// produce an empty experiment.
inline ResolvedPlan resolve_dynamic_parameters(const PlanFile& plan, const Catalog& catalog) {
    ResolvedPlan resolved;
    resolved.tasks = plan.tasks;
    for (const auto& p : plan.parameters) {
        ResolvedParameter out{p.name, {}, false};
        std::visit(
            [&](const auto& k) {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, SingleValue>) {
                    out.values = {k.value};
                } else if constexpr (std::is_same_v<T, RangeValues>) {
                    out.values = expand_range(k);
                } else if constexpr (std::is_same_v<T, SetValues>) {
                    out.values = k.values;
                } else {
                    out.dynamic = true;
                    for (const auto& lfn : catalog.resolve_wildcard(k.pattern))
                        out.values.push_back(lfn.str());
                    if (out.values.empty())
                        throw DecomposeError("gridfile pattern '" + k.pattern +
                                             "' matched no catalog entries");
                }
            },
            p.kind);
        resolved.parameters.push_back(std::move(out));
    }
    return resolved;
}

namespace detail {

inline std::string substitute_variables(
    std::string_view text, const std::vector<std::pair<std::string, std::string>>& bindings,
    const std::string& jobname) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '$' || i + 1 >= text.size()) {
            out += text[i];
            continue;
        }
        std::size_t start = i + 1;
        auto head = static_cast<unsigned char>(text[start]);
        if (!std::isalpha(head) && text[start] != '_') {
            out += text[i];
            continue;
        }
        std::size_t end = start + 1;
        while (end < text.size()) {
            auto c = static_cast<unsigned char>(text[end]);
            if (!std::isalnum(c) && text[end] != '_') break;
            ++end;
        }
        std::string name(text.substr(start, end - start));
        if (name == kJobNameVariable) {
            out += jobname;
        } else {
            const std::string* value = nullptr;
            for (const auto& [k, v] : bindings)
                if (k == name) {
                    value = &v;
                    break;
                }
            if (value)
                out += *value;
            else
                out += text.substr(i, end - i);  // undeclared: left as-is
        }
        i = end - 1;
    }
    return out;
}

inline Command substitute_command(const Command& cmd,
                                  const std::vector<std::pair<std::string, std::string>>& bindings,
                                  const std::string& jobname) {
    return std::visit(
        [&](const auto& c) -> Command {
            using T = std::decay_t<decltype(c)>;
            auto sub = [&](const std::string& s) {
                return substitute_variables(s, bindings, jobname);
            };
            if constexpr (std::is_same_v<T, CopyCommand>) {
                return CopyCommand{sub(c.src), sub(c.dst)};
            } else if constexpr (std::is_same_v<T, MCopyCommand>) {
                return MCopyCommand{sub(c.src_pattern), sub(c.dst)};
            } else if constexpr (std::is_same_v<T, ExecuteCommand>) {
                ExecuteCommand out{c.on_node, sub(c.program), {}};
                for (const auto& a : c.args) out.args.push_back(sub(a));
                return out;
            } else {
                return SubstituteCommand{sub(c.template_path), sub(c.output)};
            }
        },
        cmd);
}

}  // namespace detail

// One job per element of the Cartesian product of domains, in lexicographic
// order of (parameter order, domain order): the first parameter varies
// slowest. Job ids are "job1".."jobN" in that order.
inline JobSet decompose(const ResolvedPlan& plan) {
    std::size_t dynamic_count = 0;
    for (const auto& p : plan.parameters)
        if (p.dynamic) ++dynamic_count;
    if (dynamic_count > 1)
        throw DecomposeError("at most one gridfile parameter is supported per plan");
    for (const auto& p : plan.parameters)
        if (p.values.empty())
            throw DecomposeError("parameter '" + p.name + "' has an empty domain");

    std::size_t total = 1;
    for (const auto& p : plan.parameters) total *= p.values.size();

    JobSet set;
    set.jobs.reserve(total);
    for (std::size_t ordinal = 0; ordinal < total; ++ordinal) {
        Job job;
        job.id = "job" + std::to_string(ordinal + 1);
        std::size_t rem = ordinal, radix = total;
        for (const auto& p : plan.parameters) {
            radix /= p.values.size();
            std::size_t idx = rem / radix;
            rem %= radix;
            job.bindings.emplace_back(p.name, p.values[idx]);
            if (p.dynamic)
                job.required_lfn = LogicalFileName::parse(p.values[idx]);
        }
        for (const auto& task : plan.tasks) {
            TaskDecl resolved{task.name, {}, task.line};
            for (const auto& cmd : task.commands)
                resolved.commands.push_back(detail::substitute_command(cmd, job.bindings, job.id));
            job.tasks.push_back(std::move(resolved));
        }
        set.jobs.push_back(std::move(job));
    }
    return set;
}

inline const TaskDecl* find_task(const std::vector<TaskDecl>& tasks, std::string_view name) {
    for (const auto& t : tasks)
        if (t.name == name) return &t;
    return nullptr;
}

// True when the main task copies results from the node back to the broker.
inline bool has_output_copy(const Job& job) {
    const TaskDecl* main = find_task(job.tasks, "main");
    if (!main) return false;
    for (const auto& cmd : main->commands) {
        if (const auto* copy = std::get_if<CopyCommand>(&cmd))
            if (has_node_prefix(copy->src) && !has_node_prefix(copy->dst)) return true;
        if (const auto* mcopy = std::get_if<MCopyCommand>(&cmd))
            if (has_node_prefix(mcopy->src_pattern) && !has_node_prefix(mcopy->dst)) return true;
    }
    return false;
}

}  // namespace gridbroker
