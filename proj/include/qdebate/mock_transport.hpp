#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qdebate/gateway.hpp"
#include "qdebate/templates.hpp"

namespace qdebate {

/// Deterministic offline stand-in for `mock:<rule>` endpoints. It recognises which
/// prompt it was given and answers in that prompt's output contract.
///
/// Rules:
///   yes         always relevant / supported / True
///   no          always irrelevant / unsupported / False
///   hash        verdict from a hash of the chunk text (agents with this rule agree)
///   contrarian  verdict from a hash of agent name + chunk text (agents may disagree)
///   overlap     relevant when the chunk contains a word of four or more letters from an answer
class MockRuleTransport : public ChatTransport {
public:
    RawResponse post(const AgentConfig& agent, const std::string& body, std::chrono::seconds) override {
        auto req = json::parse(body);
        std::string user;
        for (const auto& m : req.at("messages"))
            if (m.at("role") == "user")
                user = m.at("content").get<std::string>();
        const std::string rule = agent.endpoint.substr(agent.endpoint.find(':') + 1);
        std::string content = answer(rule, agent.name, user);
        return {200, make_completion_body(content, user.size() / 4 + 1, content.size() / 4 + 1), {}, {}};
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        // splitmix64 finalizer so every output bit depends on every input byte
        h ^= h >> 30;
        h *= 0xbf58476d1ce4e5b9ull;
        h ^= h >> 27;
        h *= 0x94d049bb133111ebull;
        h ^= h >> 31;
        return h;
    }

private:
    static std::string between(const std::string& s, std::string_view open, std::string_view close) {
        auto a = s.find(open);
        if (a == std::string::npos)
            return {};
        a += open.size();
        auto b = s.find(close, a);
        return s.substr(a, b == std::string::npos ? std::string::npos : b - a);
    }

    static std::vector<std::string> words(std::string_view s) {
        std::vector<std::string> out;
        std::string w;
        for (char c : s) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            } else {
                if (w.size() >= 4)
                    out.push_back(w);
                w.clear();
            }
        }
        if (w.size() >= 4)
            out.push_back(w);
        return out;
    }

    static bool overlaps(const std::string& answers, const std::string& doc) {
        auto dw = words(doc);
        for (const auto& a : words(answers))
            if (std::find(dw.begin(), dw.end(), a) != dw.end())
                return true;
        return false;
    }

    static bool verdict(const std::string& rule, const std::string& agent, const std::string& key,
                        const std::string& answers = {}) {
        if (rule == "overlap")
            return overlaps(answers, key);
        if (rule == "yes")
            return true;
        if (rule == "no")
            return false;
        if (rule == "hash")
            return fnv1a(key) % 2 == 0;
        if (rule == "contrarian")
            return fnv1a(agent + "|" + key) % 2 == 0;
        throw ConfigError("unknown mock rule '" + rule + "'");
    }

    static std::string answer(const std::string& rule, const std::string& agent, const std::string& user) {
        if (user.find("\"is_supported\"") != std::string::npos) {
            auto doc = between(user, "DOCUMENT: ", "\nANSWERs:");
            return verdict(rule, agent, doc, between(user, "ANSWERs:\n", "\n\nIf any")) ? R"({"is_supported": true})" : R"({"is_supported": false})";
        }
        if (user.find("Strictly output True or False") != std::string::npos) {
            auto pred = between(user, "### PREDICTED ANSWER:\n", "\n\n###");
            if (pred == prompts::kNoInformationSentinel)
                return "False";
            return verdict(rule, agent, pred, between(user, "### GT ANSWERs:\n", "\n\n###")) ? "True" : "False";
        }
        if (user.find("\"Answer\"") != std::string::npos) {
            // answer with the first context the rule accepts for the query
            auto ctx = between(user, "Multiple CONTEXTs: ", "\n\nDo not provide");
            const auto query = between(user, "QUERY: ", "\n");
            std::istringstream lines(ctx);
            for (std::string line; std::getline(lines, line);) {
                auto close = line.find("] ");
                if (line.empty() || line[0] != '[' || close == std::string::npos)
                    continue;
                auto text = line.substr(close + 2);
                if (verdict(rule, agent, text, query))
                    return json{{"Answer", text}}.dump();
            }
            return json{{"Answer", prompts::kNoInformationSentinel}}.dump();
        }
        auto doc = between(user, "<doc>\n", "\n</doc>");
        bool yes = verdict(rule, agent, doc, between(user, "<answer>\n", "\n</answer>"));
        json reply = {{"reference", yes && !doc.empty() ? json::array({doc}) : json::array()},
                      {"reason", std::string("Mock ") + rule + " verdict for this chunk."},
                      {"response", yes ? "yes" : "no"}};
        return reply.dump();
    }
};

} // namespace qdebate
