#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "qdebate/adjudication.hpp"
#include "qdebate/debate.hpp"
#include "qdebate/gateway.hpp"

namespace qdebate {

namespace fs = std::filesystem;

/// Replaces `${NAME}` with the environment value; an unset variable is a config error.
inline std::string interpolate_env(const std::string& s) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s.compare(i, 2, "${") == 0) {
            auto end = s.find('}', i + 2);
            if (end == std::string::npos)
                throw ConfigError("unterminated ${ in config value '" + s + "'");
            const std::string name = s.substr(i + 2, end - i - 2);
            const char* v = std::getenv(name.c_str());
            if (!v)
                throw ConfigError("config references unset environment variable " + name);
            out += v;
            i = end + 1;
        } else {
            out += s[i++];
        }
    }
    return out;
}

inline void interpolate_tree(json& j) {
    if (j.is_string())
        j = interpolate_env(j.get<std::string>());
    else if (j.is_structured())
        for (auto& v : j)
            interpolate_tree(v);
}

struct Rosters {
    std::vector<AgentConfig> filter;
    std::vector<AgentConfig> debate;
    std::vector<AgentConfig> adjudicator;
    std::vector<AgentConfig> judge;
    std::vector<AgentConfig> generator;
};

struct PipelineConfig {
    fs::path source;
    fs::path workspace;
    fs::path corpus;
    fs::path queries;
    std::vector<fs::path> runs;
    fs::path qrels;
    int k = 10;
    Rosters rosters;
    DebateConfig debate;
    int workers = 4;
    AdjudicationConfig adjudication;
    GatewayOptions gateway;
    std::uint64_t sample_seed = 0;
    std::uint64_t ordering_seed = 0;
    std::size_t orderings = 10;
    std::string host = "127.0.0.1";
    int port = 8080;
    fs::path static_dir;
    std::string dataset;
};

namespace detail {

inline std::vector<AgentConfig> roster_from(const json& j, const char* name) {
    if (!j.contains(name) || !j[name].is_array() || j[name].empty())
        throw ConfigError(std::string("roster '") + name + "' must list at least one agent");
    auto r = j[name].get<std::vector<AgentConfig>>();
    std::set<std::string> names;
    for (const auto& a : r)
        if (!names.insert(a.name).second)
            throw ConfigError(std::string("duplicate agent name '") + a.name + "' in roster '" + name + "'");
    return r;
}

inline fs::path resolve(const fs::path& base, const json& j, const char* key, bool required) {
    if (!j.contains(key) || j[key].is_null()) {
        if (required)
            throw ConfigError(std::string("config is missing data path '") + key + "'");
        return {};
    }
    fs::path p = j[key].get<std::string>();
    if (p.is_relative())
        p = base / p;
    if (!fs::exists(p))
        throw ConfigError(std::string("config path '") + key + "' does not exist: " + p.string());
    return p;
}

} // namespace detail

/// Parses and validates a pipeline config. Relative paths resolve against the
/// config file's directory; every referenced data file must exist.
inline PipelineConfig parse_config(json j, const fs::path& base_dir) {
    interpolate_tree(j);
    PipelineConfig c;
    try {
        c.workspace = j.value("workspace", std::string("workspace"));
        if (c.workspace.is_relative())
            c.workspace = base_dir / c.workspace;
        const json data = j.value("data", json::object());
        c.corpus = detail::resolve(base_dir, data, "corpus", true);
        c.queries = detail::resolve(base_dir, data, "queries", true);
        c.qrels = detail::resolve(base_dir, data, "qrels", true);
        for (const auto& r : data.value("runs", json::array())) {
            fs::path p = r.get<std::string>();
            if (p.is_relative())
                p = base_dir / p;
            if (!fs::exists(p))
                throw ConfigError("run path does not exist: " + p.string());
            c.runs.push_back(p);
        }
        if (c.runs.empty())
            throw ConfigError("config lists no run files");
        c.dataset = data.value("name", std::string{});
        c.k = j.value("k", 10);
        if (c.k < 1)
            throw ConfigError("k must be >= 1");

        const json rosters = j.value("rosters", json::object());
        c.rosters.filter = detail::roster_from(rosters, "filter");
        c.rosters.debate = detail::roster_from(rosters, "debate");
        c.rosters.adjudicator = detail::roster_from(rosters, "adjudicator");
        c.rosters.judge = detail::roster_from(rosters, "judge");
        c.rosters.generator = detail::roster_from(rosters, "generator");

        const json d = j.value("debate", json::object());
        c.debate.roster = c.rosters.debate;
        c.debate.max_rounds = d.value("max_rounds", 2);
        c.debate.first_stance = stance_order_from_string(d.value("first_stance", std::string("relevant-first")));
        c.debate.continue_past_consensus = d.value("continue_past_consensus", false);
        c.workers = d.value("workers", 4);
        c.debate.validate();

        const json a = j.value("adjudication", json::object());
        c.adjudication.panel_size = a.value("panel_size", 3);
        c.adjudication.attention_rate = a.value("attention_rate", 0.10);
        c.adjudication.lease_timeout = std::chrono::seconds(a.value("lease_timeout_seconds", 1800));

        const json g = j.value("gateway", json::object());
        c.gateway.max_attempts = g.value("max_attempts", 4);
        c.gateway.backoff_initial = std::chrono::milliseconds(g.value("backoff_initial_ms", 500));
        c.gateway.backoff_max = std::chrono::milliseconds(g.value("backoff_max_ms", 8000));
        c.gateway.backoff_multiplier = g.value("backoff_multiplier", 2.0);
        c.gateway.timeout = std::chrono::seconds(g.value("timeout_seconds", 60));
        c.gateway.max_in_flight = g.value("max_in_flight", 8);
        if (c.gateway.max_attempts < 1 || c.gateway.max_in_flight < 1)
            throw ConfigError("gateway max_attempts and max_in_flight must be >= 1");

        const json s = j.value("seeds", json::object());
        c.sample_seed = s.value("sample", std::uint64_t{0});
        c.ordering_seed = s.value("orderings", std::uint64_t{0});
        c.adjudication.seed = s.value("attention", std::uint64_t{0});
        c.orderings = j.value("orderings", std::size_t{10});
        c.adjudication.validate();

        const json srv = j.value("serve", json::object());
        c.host = srv.value("host", std::string("127.0.0.1"));
        c.port = srv.value("port", 8080);
        if (srv.contains("static_dir") && !srv["static_dir"].is_null()) {
            c.static_dir = srv["static_dir"].get<std::string>();
            if (c.static_dir.is_relative())
                c.static_dir = base_dir / c.static_dir;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
}

inline PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    auto c = parse_config(std::move(j), fs::absolute(path).parent_path());
    c.source = path;
    return c;
}

/// File layout inside a workspace directory.
struct WorkspacePaths {
    fs::path root;
    fs::path pool() const { return root / "pool.jsonl"; }
    fs::path filter_audit() const { return root / "filter_audit.jsonl"; }
    fs::path filtered() const { return root / "filtered.jsonl"; }
    fs::path transcripts() const { return root / "transcripts.jsonl"; }
    fs::path adjudication() const { return root / "adjudication.jsonl"; }
    fs::path augmented_qrels() const { return root / "qrels.augmented.txt"; }
    fs::path holes() const { return root / "holes.jsonl"; }
    fs::path conflicts() const { return root / "conflicts.jsonl"; }
    fs::path reports() const { return root / "reports"; }
    fs::path lock() const { return root / ".lock"; }
};

/// Exclusive per-workspace lock held for the duration of a pipeline stage.
class WorkspaceLock {
public:
    explicit WorkspaceLock(const fs::path& lock_path) : path_(lock_path) {
        fs::create_directories(path_.parent_path());
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) {
            std::string holder;
            if (std::ifstream in(path_); in)
                std::getline(in, holder);
            throw ConfigError("workspace is locked by another stage (" + path_.string() +
                              (holder.empty() ? "" : ": " + holder) + "); remove the file if no stage is running");
        }
        std::fprintf(f, "pid %ld\n", static_cast<long>(::getpid()));
        std::fclose(f);
    }
    ~WorkspaceLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    WorkspaceLock(const WorkspaceLock&) = delete;
    WorkspaceLock& operator=(const WorkspaceLock&) = delete;

private:
    fs::path path_;
};

} // namespace qdebate
