#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "qdebate/debate.hpp"
#include "qdebate/gateway.hpp"

namespace testing {

using namespace qdebate;

inline AgentConfig agent(const std::string& name, const std::string& endpoint = "mock:test") {
    AgentConfig a;
    a.name = name;
    a.model = "test-model";
    a.endpoint = endpoint;
    return a;
}

inline Triplet triplet(const std::string& q, const std::string& c, const std::string& chunk_text = "",
                       std::vector<std::string> answers = {"an answer"}) {
    return {q, c, "query " + q, std::move(answers), chunk_text.empty() ? "chunk " + c : chunk_text};
}

inline std::string reply(const std::string& response, const std::string& reason = "because") {
    return json{{"reference", json::array()}, {"reason", reason}, {"response", response}}.dump();
}

inline std::string between(const std::string& s, const std::string& open, const std::string& close) {
    auto a = s.find(open);
    if (a == std::string::npos)
        return {};
    a += open.size();
    return s.substr(a, s.find(close, a) - a);
}

/// Debate agents that replay a per-agent script of raw replies, one entry per
/// round. Scripts are keyed by chunk text ("*" applies to every chunk). The call
/// index per (agent, chunk) picks the entry; past the end the last entry repeats.
class ScriptedAgents {
public:
    using Script = std::map<std::string, std::vector<std::string>>; // agent -> replies

    void script(const std::string& chunk, Script s) { scripts_[chunk] = std::move(s); }

    std::shared_ptr<FunctionTransport> transport() {
        return FunctionTransport::text([this](const AgentConfig& a, const std::string&, const std::string& user) {
            const auto chunk = between(user, "<doc>\n", "\n</doc>");
            std::lock_guard lock(mu_);
            prompts_[a.name + "|" + chunk].push_back(user);
            auto idx = calls_[a.name + "|" + chunk]++;
            auto it = scripts_.find(chunk);
            if (it == scripts_.end())
                it = scripts_.find("*");
            const auto& replies = it->second.at(a.name);
            return replies[std::min(idx, replies.size() - 1)];
        });
    }

    std::vector<std::string> prompts(const std::string& agent, const std::string& chunk) {
        std::lock_guard lock(mu_);
        return prompts_[agent + "|" + chunk];
    }

private:
    std::mutex mu_;
    std::map<std::string, Script> scripts_;
    std::map<std::string, std::size_t> calls_;
    std::map<std::string, std::vector<std::string>> prompts_;
};

inline GatewayOptions fast_options() {
    GatewayOptions o;
    o.sleep = [](std::chrono::milliseconds) {};
    o.max_in_flight = 16;
    return o;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    static std::mt19937_64 rng(std::random_device{}());
    auto p = std::filesystem::temp_directory_path() / ("qdebate-" + name + "-" + std::to_string(rng() % 1000000007));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
