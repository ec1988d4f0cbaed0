#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "qdebate/data_model.hpp"
#include "qdebate/gateway.hpp"
#include "qdebate/jsonl.hpp"
#include "qdebate/templates.hpp"

namespace qdebate {

enum class FilterVote { supported, unsupported, error };

inline std::string_view to_string(FilterVote v) {
    switch (v) {
    case FilterVote::supported: return "supported";
    case FilterVote::unsupported: return "unsupported";
    case FilterVote::error: return "error";
    }
    return "";
}

struct FilterVerdict {
    PairKey key;
    /// agent name -> vote; `error` votes count as supported.
    std::map<std::string, FilterVote> votes;
    std::map<std::string, std::string> errors;
    bool kept = true;
};

inline void to_json(json& j, const FilterVerdict& v) {
    json votes = json::object();
    for (const auto& [a, vote] : v.votes)
        votes[a] = to_string(vote);
    j = json{{"key", v.key}, {"votes", votes}, {"kept", v.kept}};
    if (!v.errors.empty())
        j["errors"] = v.errors;
}

struct FilterResult {
    std::vector<Triplet> kept;
    std::vector<FilterVerdict> verdicts;
    std::size_t discarded() const { return verdicts.size() - kept.size(); }
};

inline std::string render_filter_prompt(const Triplet& t) {
    return render_template(TemplateId::chunk_filter,
                           {{"query", t.query}, {"chunk", t.chunk}, {"answers", numbered_list(t.answers)}})
        .user;
}

/// One triplet against every roster model. Discarded only on a unanimous
/// unsupported vote; malformed replies and transport failures keep the triplet.
inline FilterVerdict filter_one(Gateway& gw, const Triplet& t, const std::vector<AgentConfig>& roster) {
    FilterVerdict v{t.key(), {}, {}, true};
    const auto prompt = render_filter_prompt(t);
    bool all_unsupported = true;
    for (const auto& agent : roster) {
        FilterVote vote = FilterVote::error;
        try {
            vote = gw.complete_parsed(agent, {}, prompt, [](const std::string& raw) { return extract_supported(raw); })
                       ? FilterVote::supported
                       : FilterVote::unsupported;
        } catch (const MalformedReply& e) {
            v.errors[agent.name] = e.what();
        } catch (const TransportError& e) {
            v.errors[agent.name] = e.what();
        }
        v.votes[agent.name] = vote;
        all_unsupported = all_unsupported && vote == FilterVote::unsupported;
    }
    v.kept = !all_unsupported;
    return v;
}

/// Filters concurrently; results keep pool order. When `audit_log` is set the
/// verdicts are appended there in pool order.
inline FilterResult filter_pool(Gateway& gw, const std::vector<Triplet>& pool, const std::vector<AgentConfig>& roster,
                                const std::filesystem::path& audit_log = {}, int workers = 4) {
    if (roster.empty())
        throw ConfigError("filter roster is empty");
    for (const auto& t : pool)
        if (t.answers.empty())
            throw DataError("triplet " + t.key().str() + " has no answers");

    std::vector<FilterVerdict> verdicts(pool.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto work = [&] {
        for (std::size_t i = next.fetch_add(1); i < pool.size(); i = next.fetch_add(1)) {
            try {
                verdicts[i] = filter_one(gw, pool[i], roster);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure)
                    failure = std::current_exception();
                next.store(pool.size());
            }
        }
    };
    {
        std::vector<std::jthread> threads;
        const int n = std::max(1, std::min<int>(workers, static_cast<int>(pool.size())));
        for (int i = 0; i < n; ++i)
            threads.emplace_back(work);
    }
    if (failure)
        std::rethrow_exception(failure);

    FilterResult r;
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (verdicts[i].kept)
            r.kept.push_back(pool[i]);
    r.verdicts = std::move(verdicts);
    if (!audit_log.empty()) {
        std::vector<json> records;
        for (const auto& v : r.verdicts)
            records.push_back(v);
        jsonl::write_file(audit_log, records);
    }
    return r;
}

} // namespace qdebate
