#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>

#include "qdebate/gateway.hpp"
#include "qdebate/mock_transport.hpp"

namespace qdebate {

/// OpenAI-compatible chat-completion transport over cpp-httplib. The endpoint is
/// either the full `/chat/completions` URL or a base URL such as `http://host/v1`.
class HttpTransport : public ChatTransport {
public:
    RawResponse post(const AgentConfig& agent, const std::string& body, std::chrono::seconds timeout) override {
        auto [origin, path] = split_url(agent.endpoint);
        httplib::Client cli(origin);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
        httplib::Headers headers;
        if (!agent.api_key_env.empty()) {
            const char* key = std::getenv(agent.api_key_env.c_str());
            if (!key)
                throw ConfigError("environment variable " + agent.api_key_env + " is not set for agent " + agent.name);
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        auto res = cli.Post(path, headers, body, "application/json");
        if (!res)
            return {0, {}, {}, httplib::to_string(res.error())};
        RawResponse out{res->status, res->body, {}, {}};
        for (const auto& [k, v] : res->headers) {
            std::string lower = k;
            for (auto& c : lower)
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            out.headers[lower] = v;
        }
        return out;
    }

    static std::pair<std::string, std::string> split_url(const std::string& url) {
        auto scheme = url.find("://");
        if (scheme == std::string::npos)
            throw ConfigError("endpoint must be an http(s) URL: " + url);
        auto slash = url.find('/', scheme + 3);
        std::string origin = slash == std::string::npos ? url : url.substr(0, slash);
        std::string path = slash == std::string::npos ? "/" : url.substr(slash);
        static constexpr std::string_view suffix = "/chat/completions";
        if (path.size() < suffix.size() || path.compare(path.size() - suffix.size(), suffix.size(), suffix) != 0) {
            if (!path.empty() && path.back() == '/')
                path.pop_back();
            path += suffix;
        }
        return {origin, path};
    }
};

/// Dispatches `mock:` endpoints to the offline rule transport and everything else to HTTP.
class RoutingTransport : public ChatTransport {
public:
    RawResponse post(const AgentConfig& agent, const std::string& body, std::chrono::seconds timeout) override {
        if (agent.endpoint.rfind("mock:", 0) == 0)
            return mock_.post(agent, body, timeout);
        return http_.post(agent, body, timeout);
    }

private:
    MockRuleTransport mock_;
    HttpTransport http_;
};

} // namespace qdebate
