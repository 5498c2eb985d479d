#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gridbroker/util.hpp"

// Declarative parametric plan language: parameter declarations plus task
// blocks made of file-staging and execution commands.
//
// Grammar (line oriented, '#' starts a comment, keywords case-insensitive,
// identifiers case-sensitive):
//
//   parameter <name> single <value>;
//   parameter <name> range <lo> <hi> <step>;
//   parameter <name> set <value>...;
//   parameter <name> gridfile <lfn-pattern>;
//   task <name>
//     copy <src> <dst>
//     mcopy <src-pattern> <dst>
//     [node:]execute <program> <arg>...
//     substitute <template> <output>
//   endtask
//
// Path and argument tokens may carry a `node:` location prefix and `$NAME`
// references to declared parameters or the implicit `$jobname`.

namespace gridbroker {

enum class Severity { error, warning };

struct Diagnostic {
    Severity severity = Severity::error;
    int line = 1;  // 1-based source line
    std::string message;
};

inline bool any_errors(const std::vector<Diagnostic>& diags) {
    for (const auto& d : diags)
        if (d.severity == Severity::error) return true;
    return false;
}

struct SingleValue {
    std::string value;
    bool operator==(const SingleValue&) const = default;
};

struct RangeValues {
    double lo = 0, hi = 0, step = 1;
    bool operator==(const RangeValues&) const = default;
};

struct SetValues {
    std::vector<std::string> values;
    bool operator==(const SetValues&) const = default;
};

struct GridfilePattern {
    std::string pattern;  // carries the lfn: scheme prefix
    bool operator==(const GridfilePattern&) const = default;
};

using ParameterKind = std::variant<SingleValue, RangeValues, SetValues, GridfilePattern>;

struct ParameterDecl {
    std::string name;
    ParameterKind kind;
    int line = 1;  // not part of structural equality

    friend bool operator==(const ParameterDecl& a, const ParameterDecl& b) {
        return a.name == b.name && a.kind == b.kind;
    }
};

struct CopyCommand {
    std::string src, dst;
    bool operator==(const CopyCommand&) const = default;
};

struct MCopyCommand {
    std::string src_pattern, dst;
    bool operator==(const MCopyCommand&) const = default;
};

struct ExecuteCommand {
    bool on_node = false;
    std::string program;
    std::vector<std::string> args;
    bool operator==(const ExecuteCommand&) const = default;
};

struct SubstituteCommand {
    std::string template_path, output;
    bool operator==(const SubstituteCommand&) const = default;
};

using Command = std::variant<CopyCommand, MCopyCommand, ExecuteCommand, SubstituteCommand>;

struct TaskDecl {
    std::string name;
    std::vector<Command> commands;  // source order
    int line = 1;

    friend bool operator==(const TaskDecl& a, const TaskDecl& b) {
        return a.name == b.name && a.commands == b.commands;
    }
};

struct PlanFile {
    std::vector<ParameterDecl> parameters;
    std::vector<TaskDecl> tasks;

    friend bool operator==(const PlanFile& a, const PlanFile& b) {
        return a.parameters == b.parameters && a.tasks == b.tasks;
    }
};

struct ParseResult {
    std::optional<PlanFile> plan;  // present iff no error diagnostic
    std::vector<Diagnostic> diagnostics;
};

inline constexpr std::string_view kJobNameVariable = "jobname";
inline constexpr std::string_view kNodePrefix = "node:";

inline bool has_node_prefix(std::string_view token) {
    return token.size() > kNodePrefix.size() &&
           detail::to_lower(token.substr(0, kNodePrefix.size())) == kNodePrefix;
}

// Every `$NAME` reference inside a token, in order of appearance.
inline void scan_variables(std::string_view text, std::vector<std::string>& out) {
    for (std::size_t i = 0; i + 1 < text.size(); ++i) {
        if (text[i] != '$') continue;
        std::size_t start = i + 1;
        auto head = static_cast<unsigned char>(text[start]);
        if (!std::isalpha(head) && text[start] != '_') continue;
        std::size_t end = start + 1;
        while (end < text.size()) {
            auto c = static_cast<unsigned char>(text[end]);
            if (!std::isalnum(c) && text[end] != '_') break;
            ++end;
        }
        out.emplace_back(text.substr(start, end - start));
        i = end - 1;
    }
}

inline std::vector<std::string> referenced_variables(const Command& cmd) {
    std::vector<std::string> vars;
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, CopyCommand>) {
                scan_variables(c.src, vars);
                scan_variables(c.dst, vars);
            } else if constexpr (std::is_same_v<T, MCopyCommand>) {
                scan_variables(c.src_pattern, vars);
                scan_variables(c.dst, vars);
            } else if constexpr (std::is_same_v<T, ExecuteCommand>) {
                scan_variables(c.program, vars);
                for (const auto& a : c.args) scan_variables(a, vars);
            } else {
                scan_variables(c.template_path, vars);
                scan_variables(c.output, vars);
            }
        },
        cmd);
    return vars;
}

namespace detail {

inline std::optional<ParameterKind> parse_parameter_kind(
    const std::string& kind_word, const std::vector<std::string>& args, int line,
    std::vector<Diagnostic>& diags) {
    auto err = [&](std::string msg) {
        diags.push_back({Severity::error, line, std::move(msg)});
        return std::nullopt;
    };
    std::string kind = to_lower(kind_word);
    if (kind == "single") {
        if (args.size() != 1) return err("'single' takes exactly one value");
        return ParameterKind{SingleValue{args[0]}};
    }
    if (kind == "range") {
        if (args.size() != 3) return err("'range' takes <lo> <hi> <step>");
        double lo, hi, step;
        if (!parse_number(args[0], lo) || !parse_number(args[1], hi) ||
            !parse_number(args[2], step))
            return err("'range' bounds must be numeric");
        if (step <= 0) return err("'range' step must be > 0");
        if (lo > hi) return err("'range' lower bound exceeds upper bound");
        return ParameterKind{RangeValues{lo, hi, step}};
    }
    if (kind == "set") {
        if (args.empty()) return err("'set' needs at least one value");
        std::set<std::string> seen;
        for (const auto& v : args)
            if (!seen.insert(v).second) return err("duplicate set value '" + v + "'");
        return ParameterKind{SetValues{args}};
    }
    if (kind == "gridfile") {
        if (args.size() != 1) return err("'gridfile' takes exactly one lfn pattern");
        if (args[0].rfind("lfn:", 0) != 0)
            return err("gridfile pattern must begin with 'lfn:'");
        return ParameterKind{GridfilePattern{args[0]}};
    }
    return err("unknown parameter kind '" + kind_word + "'");
}

inline std::optional<Command> parse_command(const std::vector<std::string>& toks, int line,
                                            std::vector<Diagnostic>& diags) {
    auto err = [&](std::string msg) {
        diags.push_back({Severity::error, line, std::move(msg)});
        return std::nullopt;
    };
    std::string head = toks[0];
    bool on_node = false;
    if (has_node_prefix(head)) {
        on_node = true;
        head = head.substr(kNodePrefix.size());
    }
    std::string kw = to_lower(head);
    if (kw == "execute") {
        if (toks.size() < 2) return err("'execute' needs a program");
        return Command{ExecuteCommand{
            on_node, toks[1], std::vector<std::string>(toks.begin() + 2, toks.end())}};
    }
    if (on_node) return err("location prefix is only valid on 'execute'");
    if (kw == "copy") {
        if (toks.size() != 3) return err("'copy' takes <src> <dst>");
        return Command{CopyCommand{toks[1], toks[2]}};
    }
    if (kw == "mcopy") {
        if (toks.size() != 3) return err("'mcopy' takes <src-pattern> <dst>");
        return Command{MCopyCommand{toks[1], toks[2]}};
    }
    if (kw == "substitute") {
        if (toks.size() != 3) return err("'substitute' takes <template> <output>");
        return Command{SubstituteCommand{toks[1], toks[2]}};
    }
    if (kw == "task") return err("nested 'task' (missing 'endtask'?)");
    return err("unknown command '" + toks[0] + "'");
}

}  // namespace detail

inline ParseResult parse_plan(std::string_view source) {
    PlanFile plan;
    std::vector<Diagnostic> diags;
    auto err = [&](int line, std::string msg) {
        diags.push_back({Severity::error, line, std::move(msg)});
    };

    std::optional<TaskDecl> task;
    auto lines = detail::split_lines(source);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        int line = static_cast<int>(i) + 1;
        std::string_view text = lines[i];
        if (auto hash = text.find('#'); hash != std::string_view::npos)
            text = text.substr(0, hash);
        text = detail::trim(text);
        if (text.empty()) continue;

        if (task) {
            auto toks = detail::split_ws(text);
            if (detail::to_lower(toks[0]) == "endtask") {
                if (toks.size() != 1) {
                    err(line, "'endtask' takes no arguments");
                    continue;
                }
                plan.tasks.push_back(std::move(*task));
                task.reset();
                continue;
            }
            if (auto cmd = detail::parse_command(toks, line, diags))
                task->commands.push_back(std::move(*cmd));
            continue;
        }

        bool terminated = false;
        if (text.back() == ';') {
            terminated = true;
            text = detail::trim(text.substr(0, text.size() - 1));
        }
        auto toks = detail::split_ws(text);
        if (toks.empty()) {
            err(line, "stray ';'");
            continue;
        }
        std::string kw = detail::to_lower(toks[0]);
        if (kw == "parameter") {
            if (!terminated) {
                err(line, "parameter declaration must end with ';'");
                continue;
            }
            if (toks.size() < 3) {
                err(line, "parameter declaration needs <name> <kind> <args>");
                continue;
            }
            if (!detail::is_identifier(toks[1])) {
                err(line, "invalid parameter name '" + toks[1] + "'");
                continue;
            }
            auto kind = detail::parse_parameter_kind(
                toks[2], std::vector<std::string>(toks.begin() + 3, toks.end()), line, diags);
            if (kind) plan.parameters.push_back({toks[1], std::move(*kind), line});
        } else if (kw == "task") {
            if (terminated) {
                err(line, "unexpected ';' after task header");
                continue;
            }
            if (toks.size() != 2 || !detail::is_identifier(toks[1])) {
                err(line, "task header must be 'task <name>'");
                continue;
            }
            task = TaskDecl{toks[1], {}, line};
        } else if (kw == "endtask") {
            err(line, "'endtask' outside a task block");
        } else {
            err(line, "unknown keyword '" + toks[0] + "'");
        }
    }
    if (task) err(task->line, "unterminated task block '" + task->name + "'");

    if (any_errors(diags)) return {std::nullopt, std::move(diags)};
    return {std::move(plan), std::move(diags)};
}

// Checks every declared invariant: unique parameter names, task naming rules,
// parameter-kind constraints, mcopy wildcards and `$NAME` resolution.
inline std::vector<Diagnostic> validate_plan(const PlanFile& plan) {
    std::vector<Diagnostic> diags;
    auto err = [&](int line, std::string msg) {
        diags.push_back({Severity::error, std::max(1, line), std::move(msg)});
    };

    std::set<std::string> names;
    for (const auto& p : plan.parameters) {
        if (!names.insert(p.name).second)
            err(p.line, "duplicate parameter name '" + p.name + "'");
        std::visit(
            [&](const auto& k) {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, RangeValues>) {
                    if (k.step <= 0) err(p.line, "range step must be > 0");
                    if (k.lo > k.hi) err(p.line, "range lower bound exceeds upper bound");
                } else if constexpr (std::is_same_v<T, SetValues>) {
                    if (k.values.empty()) err(p.line, "set domain is empty");
                    std::set<std::string> seen;
                    for (const auto& v : k.values)
                        if (!seen.insert(v).second)
                            err(p.line, "duplicate set value '" + v + "'");
                } else if constexpr (std::is_same_v<T, GridfilePattern>) {
                    if (k.pattern.rfind("lfn:", 0) != 0)
                        err(p.line, "gridfile pattern must begin with 'lfn:'");
                }
            },
            p.kind);
    }

    int main_count = 0, nodestart_count = 0;
    for (const auto& t : plan.tasks) {
        if (t.name == "main")
            ++main_count;
        else if (t.name == "nodestart")
            ++nodestart_count;
        else
            err(t.line, "task name must be 'nodestart' or 'main', got '" + t.name + "'");
    }
    if (main_count == 0) err(1, "plan must declare a task named 'main'");
    if (main_count > 1) err(1, "plan declares more than one task named 'main'");
    if (nodestart_count > 1) err(1, "plan declares more than one task named 'nodestart'");

    for (const auto& t : plan.tasks) {
        for (const auto& cmd : t.commands) {
            if (const auto* mc = std::get_if<MCopyCommand>(&cmd)) {
                if (mc->src_pattern.find('*') == std::string::npos &&
                    mc->src_pattern.find('?') == std::string::npos)
                    err(t.line, "mcopy source has no wildcard: '" + mc->src_pattern + "'");
            }
            for (const auto& var : referenced_variables(cmd)) {
                if (var != kJobNameVariable && !names.count(var))
                    err(t.line, "undefined parameter '$" + var + "' in task '" + t.name + "'");
            }
        }
    }
    return diags;
}

inline std::string command_to_string(const Command& cmd) {
    return std::visit(
        [](const auto& c) -> std::string {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, CopyCommand>) {
                return "copy " + c.src + " " + c.dst;
            } else if constexpr (std::is_same_v<T, MCopyCommand>) {
                return "mcopy " + c.src_pattern + " " + c.dst;
            } else if constexpr (std::is_same_v<T, ExecuteCommand>) {
                std::string out = c.on_node ? "node:execute " : "execute ";
                out += c.program;
                for (const auto& a : c.args) out += " " + a;
                return out;
            } else {
                return "substitute " + c.template_path + " " + c.output;
            }
        },
        cmd);
}

// Canonical text form; parse_plan(print_plan(p)) is structurally equal to p.
inline std::string print_plan(const PlanFile& plan) {
    std::string out;
    for (const auto& p : plan.parameters) {
        out += "parameter " + p.name + " ";
        std::visit(
            [&](const auto& k) {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, SingleValue>) {
                    out += "single " + k.value;
                } else if constexpr (std::is_same_v<T, RangeValues>) {
                    out += "range " + detail::format_number(k.lo) + " " +
                           detail::format_number(k.hi) + " " + detail::format_number(k.step);
                } else if constexpr (std::is_same_v<T, SetValues>) {
                    out += "set";
                    for (const auto& v : k.values) out += " " + v;
                } else {
                    out += "gridfile " + k.pattern;
                }
            },
            p.kind);
        out += ";\n";
    }
    for (const auto& t : plan.tasks) {
        out += "task " + t.name + "\n";
        for (const auto& cmd : t.commands) out += "  " + command_to_string(cmd) + "\n";
        out += "endtask\n";
    }
    return out;
}

}  // namespace gridbroker
