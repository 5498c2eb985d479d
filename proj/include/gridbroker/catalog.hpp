#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gridbroker/util.hpp"

// Replica catalog: logical file names in a virtual directory tree, each
// mapping to one or more physical replicas on data hosts.

namespace gridbroker {

struct CatalogError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

// Splits "lfn:/a/b/c" into {"a","b","c"}, normalizing '.', '..' and duplicate
// slashes. `allow_wildcards` admits '*' and '?' (pattern form).
inline std::vector<std::string> lfn_segments(std::string_view text, bool allow_wildcards) {
    if (text.rfind("lfn:", 0) != 0)
        throw CatalogError("logical file name must begin with 'lfn:': '" + std::string(text) + "'");
    std::string_view path = text.substr(4);
    if (path.empty() || path[0] != '/')
        throw CatalogError("logical file name must be absolute: '" + std::string(text) + "'");
    std::vector<std::string> segments;
    std::size_t pos = 1;
    while (pos <= path.size()) {
        std::size_t slash = path.find('/', pos);
        std::string_view seg = (slash == std::string_view::npos)
                                   ? path.substr(pos)
                                   : path.substr(pos, slash - pos);
        pos = (slash == std::string_view::npos) ? path.size() + 1 : slash + 1;
        if (seg.empty() || seg == ".") continue;
        if (seg == "..") {
            if (segments.empty())
                throw CatalogError("path escapes the virtual root: '" + std::string(text) + "'");
            segments.pop_back();
            continue;
        }
        if (!allow_wildcards && (seg.find('*') != std::string_view::npos ||
                                 seg.find('?') != std::string_view::npos))
            throw CatalogError("wildcard in logical file name: '" + std::string(text) + "'");
        segments.emplace_back(seg);
    }
    if (segments.empty())
        throw CatalogError("logical file name has no segments: '" + std::string(text) + "'");
    return segments;
}

inline std::string join_lfn(const std::vector<std::string>& segments) {
    std::string out = "lfn:";
    for (const auto& s : segments) out += "/" + s;
    return out;
}

// Classic glob over a single path segment: '*' any run, '?' one character.
inline bool segment_glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, star_t = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            star_t = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++star_t;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

}  // namespace detail

// Normalized absolute name in the virtual directory structure.
class LogicalFileName {
public:
    LogicalFileName() = default;

    static LogicalFileName parse(std::string_view text) {
        LogicalFileName lfn;
        lfn.path_ = detail::join_lfn(detail::lfn_segments(text, /*allow_wildcards=*/false));
        return lfn;
    }

    const std::string& str() const { return path_; }
    bool empty() const { return path_.empty(); }

    auto operator<=>(const LogicalFileName&) const = default;

private:
    std::string path_;
};

// Wildcards never cross '/' boundaries: pattern and path must have the same
// number of segments, each matched independently.
inline bool glob_match(std::string_view pattern, std::string_view path) {
    auto pat = detail::lfn_segments(pattern, /*allow_wildcards=*/true);
    auto segs = detail::lfn_segments(path, /*allow_wildcards=*/true);
    if (pat.size() != segs.size()) return false;
    for (std::size_t i = 0; i < pat.size(); ++i)
        if (!detail::segment_glob_match(pat[i], segs[i])) return false;
    return true;
}

struct ReplicaLocation {
    std::string host;
    std::string physical_path;
    bool operator==(const ReplicaLocation&) const = default;
};

struct ReplicaEntry {
    LogicalFileName lfn;
    std::uint64_t size_bytes = 0;
    std::vector<ReplicaLocation> replicas;  // non-empty; all share size_bytes
};

class Catalog {
public:
    // Re-registering an existing LFN with the same size merges replicas;
    // a different size is rejected.
    void register_file(const LogicalFileName& lfn, std::uint64_t size_bytes,
                       std::vector<ReplicaLocation> replicas) {
        if (size_bytes == 0)
            throw CatalogError("file size must be > 0 for '" + lfn.str() + "'");
        if (replicas.empty())
            throw CatalogError("at least one replica required for '" + lfn.str() + "'");
        auto it = entries_.find(lfn.str());
        if (it == entries_.end()) {
            entries_.emplace(lfn.str(), ReplicaEntry{lfn, size_bytes, std::move(replicas)});
            return;
        }
        if (it->second.size_bytes != size_bytes)
            throw CatalogError("conflicting size for '" + lfn.str() + "': " +
                               std::to_string(it->second.size_bytes) + " vs " +
                               std::to_string(size_bytes));
        for (auto& r : replicas) {
            bool dup = false;
            for (const auto& existing : it->second.replicas)
                if (existing == r) {
                    dup = true;
                    break;
                }
            if (!dup) it->second.replicas.push_back(std::move(r));
        }
    }

    const ReplicaEntry& lookup_replicas(const LogicalFileName& lfn) const {
        auto it = entries_.find(lfn.str());
        if (it == entries_.end())
            throw CatalogError("unknown logical file name '" + lfn.str() + "'");
        return it->second;
    }

    bool contains(const LogicalFileName& lfn) const { return entries_.count(lfn.str()) > 0; }

    // All registered LFNs matching the glob, lexicographically sorted.
    std::vector<LogicalFileName> resolve_wildcard(std::string_view pattern) const {
        auto normalized = detail::join_lfn(detail::lfn_segments(pattern, /*allow_wildcards=*/true));
        std::vector<LogicalFileName> matches;
        if (normalized.find('*') == std::string::npos &&
            normalized.find('?') == std::string::npos) {
            auto it = entries_.find(normalized);
            if (it != entries_.end()) matches.push_back(it->second.lfn);
            return matches;
        }
        for (const auto& [path, entry] : entries_)
            if (glob_match(normalized, path)) matches.push_back(entry.lfn);
        return matches;  // map iteration is already lexicographic
    }

    // Entries inside the virtual directory `dir` ("lfn:/a/b"), recursively.
    std::vector<const ReplicaEntry*> list_collection(std::string_view dir) const {
        auto prefix = detail::join_lfn(detail::lfn_segments(dir, /*allow_wildcards=*/false)) + "/";
        std::vector<const ReplicaEntry*> out;
        for (auto it = entries_.lower_bound(prefix);
             it != entries_.end() && it->first.rfind(prefix, 0) == 0; ++it)
            out.push_back(&it->second);
        return out;
    }

    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::map<std::string, ReplicaEntry> entries_;  // keyed by normalized LFN
};

}  // namespace gridbroker
