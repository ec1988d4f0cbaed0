#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qdebate/data_model.hpp"
#include "qdebate/error.hpp"

namespace qdebate {

using json = nlohmann::json;

struct AgentConfig {
    std::string name;
    std::string model;
    std::string endpoint;
    double temperature = 0.0;
    int max_tokens = 1024;
    /// Environment variable holding the bearer token; empty means no auth header.
    std::string api_key_env;
    /// Prices per token. Absent prices make cost unknown.
    std::optional<double> price_in;
    std::optional<double> price_out;
};

inline void from_json(const json& j, AgentConfig& a) {
    a.name = j.at("name").get<std::string>();
    a.model = j.value("model", std::string{});
    a.endpoint = j.at("endpoint").get<std::string>();
    a.temperature = j.value("temperature", 0.0);
    a.max_tokens = j.value("max_tokens", 1024);
    a.api_key_env = j.value("api_key_env", std::string{});
    if (j.contains("price_in") && !j["price_in"].is_null())
        a.price_in = j["price_in"].get<double>();
    if (j.contains("price_out") && !j["price_out"].is_null())
        a.price_out = j["price_out"].get<double>();
    if (a.temperature < 0.0)
        throw ConfigError("agent " + a.name + ": temperature must be >= 0");
    if (a.max_tokens < 1)
        throw ConfigError("agent " + a.name + ": max_tokens must be positive");
}

struct UsageRecord {
    std::uint64_t input_tokens = 0;
    std::uint64_t output_tokens = 0;
    double latency_seconds = 0.0;
    /// nullopt when any contributing call lacked prices.
    std::optional<double> cost = 0.0;

    static UsageRecord priced(std::uint64_t in, std::uint64_t out, double latency, const AgentConfig& agent) {
        UsageRecord u{in, out, latency, std::nullopt};
        if (agent.price_in && agent.price_out)
            u.cost = static_cast<double>(in) * *agent.price_in + static_cast<double>(out) * *agent.price_out;
        return u;
    }

    UsageRecord& operator+=(const UsageRecord& o) {
        input_tokens += o.input_tokens;
        output_tokens += o.output_tokens;
        latency_seconds += o.latency_seconds;
        if (cost && o.cost)
            *cost += *o.cost;
        else
            cost.reset();
        return *this;
    }
};

inline void to_json(json& j, const UsageRecord& u) {
    j = json{{"input_tokens", u.input_tokens},
             {"output_tokens", u.output_tokens},
             {"latency_seconds", u.latency_seconds},
             {"cost", u.cost ? json(*u.cost) : json(nullptr)}};
}
inline void from_json(const json& j, UsageRecord& u) {
    u.input_tokens = j.value("input_tokens", std::uint64_t{0});
    u.output_tokens = j.value("output_tokens", std::uint64_t{0});
    u.latency_seconds = j.value("latency_seconds", 0.0);
    if (j.contains("cost") && !j["cost"].is_null())
        u.cost = j["cost"].get<double>();
    else
        u.cost.reset();
}

// ---------------------------------------------------------------------------
// Transport

/// One HTTP exchange. status 0 means the request never got a response.
struct RawResponse {
    int status = 0;
    std::string body;
    std::map<std::string, std::string> headers;
    std::string error;
};

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    /// POSTs an OpenAI-compatible chat-completion body to the agent's endpoint.
    virtual RawResponse post(const AgentConfig& agent, const std::string& body, std::chrono::seconds timeout) = 0;
};

/// Wraps message text in an OpenAI chat-completion response body.
inline std::string make_completion_body(const std::string& content, std::uint64_t prompt_tokens,
                                        std::uint64_t completion_tokens) {
    json j = {{"object", "chat.completion"},
              {"choices", json::array({{{"index", 0},
                                        {"message", {{"role", "assistant"}, {"content", content}}},
                                        {"finish_reason", "stop"}}})},
              {"usage",
               {{"prompt_tokens", prompt_tokens},
                {"completion_tokens", completion_tokens},
                {"total_tokens", prompt_tokens + completion_tokens}}}};
    return j.dump();
}

/// Transport that answers in-process through a callback; the callback sees the
/// agent and the decoded system/user messages. Used by tests and `mock:` endpoints.
class FunctionTransport : public ChatTransport {
public:
    using Handler = std::function<RawResponse(const AgentConfig&, const std::string& system, const std::string& user)>;

    explicit FunctionTransport(Handler h) : handler_(std::move(h)) {}

    /// Convenience: handler returns message text; token counts are byte lengths / 4.
    static std::shared_ptr<FunctionTransport> text(
        std::function<std::string(const AgentConfig&, const std::string&, const std::string&)> f) {
        return std::make_shared<FunctionTransport>(
            [f = std::move(f)](const AgentConfig& a, const std::string& s, const std::string& u) {
                auto content = f(a, s, u);
                return RawResponse{200, make_completion_body(content, (s.size() + u.size()) / 4 + 1, content.size() / 4 + 1),
                                   {}, {}};
            });
    }

    RawResponse post(const AgentConfig& agent, const std::string& body, std::chrono::seconds) override {
        auto req = json::parse(body);
        std::string system, user;
        for (const auto& m : req.at("messages")) {
            if (m.at("role") == "system")
                system = m.at("content").get<std::string>();
            else if (m.at("role") == "user")
                user = m.at("content").get<std::string>();
        }
        calls_.fetch_add(1);
        return handler_(agent, system, user);
    }

    std::uint64_t calls() const { return calls_.load(); }

private:
    Handler handler_;
    std::atomic<std::uint64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Gateway

struct GatewayOptions {
    int max_attempts = 4;
    std::chrono::milliseconds backoff_initial{500};
    double backoff_multiplier = 2.0;
    std::chrono::milliseconds backoff_max{8000};
    std::chrono::seconds timeout{60};
    int max_in_flight = 8;
    /// Replaceable for tests.
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
};

struct Completion {
    std::string text;
    UsageRecord usage;
    int attempts = 1;
};

inline bool is_retryable_status(int status) {
    return status == 0 || status == 408 || status == 429 || (status >= 500 && status <= 599);
}

inline std::string format_reminder() {
    return "\n\nYour previous output could not be parsed. Respond only with the output format specified above, "
           "with no other text.";
}

class Gateway {
public:
    static constexpr std::ptrdiff_t kMaxInFlightCeiling = 4096;

    Gateway(std::shared_ptr<ChatTransport> transport, GatewayOptions options = {})
        : transport_(std::move(transport)), options_(std::move(options)),
          limiter_(std::clamp<std::ptrdiff_t>(options_.max_in_flight, 1, kMaxInFlightCeiling)) {
        if (options_.max_attempts < 1)
            throw ConfigError("gateway max_attempts must be >= 1");
    }

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// One chat completion with retries on transport failures, 408/429 and 5xx.
    Completion complete(const AgentConfig& agent, std::string_view system, std::string_view user) {
        if (user.empty())
            throw ConfigError("empty prompt for agent " + agent.name);
        const std::string body = request_body(agent, system, user);

        Permit permit(limiter_);
        const auto start = std::chrono::steady_clock::now();
        auto delay = options_.backoff_initial;
        RawResponse last;
        for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
            last = transport_->post(agent, body, options_.timeout);
            if (last.status >= 200 && last.status < 300) {
                const double latency =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                auto c = decode(agent, last, latency);
                c.attempts = attempt;
                record(agent, c.usage);
                return c;
            }
            if (!is_retryable_status(last.status))
                throw StatusError(last.status, excerpt(last.body));
            if (attempt < options_.max_attempts) {
                options_.sleep(delay);
                delay = std::min(options_.backoff_max,
                                 std::chrono::milliseconds(static_cast<long long>(
                                     static_cast<double>(delay.count()) * options_.backoff_multiplier)));
            }
        }
        if (last.status == 0)
            throw TransportError("transport failure after " + std::to_string(options_.max_attempts) +
                                 " attempts: " + last.error);
        throw TransportError("endpoint kept failing after " + std::to_string(options_.max_attempts) +
                             " attempts (last status " + std::to_string(last.status) + "): " + excerpt(last.body));
    }

    /// Completion parsed by `parse`; on MalformedReply re-asks once with a format
    /// reminder appended, then rethrows. Usage of both calls is accumulated.
    template <typename Parser>
    auto complete_parsed(const AgentConfig& agent, std::string_view system, std::string_view user, Parser&& parse,
                         UsageRecord* usage_out = nullptr) -> decltype(parse(std::string{})) {
        UsageRecord usage;
        auto first = complete(agent, system, user);
        usage += first.usage;
        try {
            auto r = parse(first.text);
            if (usage_out)
                *usage_out += usage;
            return r;
        } catch (const MalformedReply&) {
        }
        std::string repaired(user);
        repaired += format_reminder();
        auto second = complete(agent, system, repaired);
        usage += second.usage;
        if (usage_out)
            *usage_out += usage;
        return parse(second.text);
    }

    UsageRecord total_usage() const {
        std::lock_guard lock(mu_);
        return total_;
    }

    std::map<std::string, UsageRecord> usage_by_agent() const {
        std::lock_guard lock(mu_);
        return by_agent_;
    }

    std::uint64_t call_count() const { return calls_.load(); }

    const GatewayOptions& options() const { return options_; }

private:
    using Limiter = std::counting_semaphore<kMaxInFlightCeiling>;

    struct Permit {
        explicit Permit(Limiter& l) : l_(l) { l_.acquire(); }
        ~Permit() { l_.release(); }
        Limiter& l_;
    };

    static std::string request_body(const AgentConfig& agent, std::string_view system, std::string_view user) {
        json messages = json::array();
        if (!system.empty())
            messages.push_back({{"role", "system"}, {"content", std::string(system)}});
        messages.push_back({{"role", "user"}, {"content", std::string(user)}});
        return json{{"model", agent.model},
                    {"messages", messages},
                    {"temperature", agent.temperature},
                    {"max_tokens", agent.max_tokens}}
            .dump();
    }

    static std::string excerpt(const std::string& body) { return body.size() > 200 ? body.substr(0, 200) + "..." : body; }

    static std::uint64_t header_count(const RawResponse& r, const char* name) {
        auto it = r.headers.find(name);
        if (it == r.headers.end())
            return 0;
        return std::strtoull(it->second.c_str(), nullptr, 10);
    }

    static Completion decode(const AgentConfig& agent, const RawResponse& r, double latency) {
        json j;
        try {
            j = json::parse(r.body);
        } catch (const json::parse_error& e) {
            throw TransportError("unparseable completion body from " + agent.endpoint + ": " + excerpt(r.body));
        }
        Completion c;
        try {
            c.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw TransportError("completion body lacks choices[0].message.content: " + excerpt(r.body));
        }
        std::uint64_t in = header_count(r, "x-usage-input-tokens");
        std::uint64_t out = header_count(r, "x-usage-output-tokens");
        if (j.contains("usage") && j["usage"].is_object()) {
            in = j["usage"].value("prompt_tokens", in);
            out = j["usage"].value("completion_tokens", out);
        }
        c.usage = UsageRecord::priced(in, out, latency, agent);
        return c;
    }

    void record(const AgentConfig& agent, const UsageRecord& u) {
        calls_.fetch_add(1);
        std::lock_guard lock(mu_);
        total_ += u;
        by_agent_[agent.name] += u;
    }

    std::shared_ptr<ChatTransport> transport_;
    GatewayOptions options_;
    Limiter limiter_;
    mutable std::mutex mu_;
    UsageRecord total_;
    std::map<std::string, UsageRecord> by_agent_;
    std::atomic<std::uint64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Structured-output extraction

/// First well-formed JSON object embedded in free text (fences and prose tolerated).
inline std::optional<json> find_json_object(std::string_view raw) {
    for (std::size_t start = raw.find('{'); start != std::string_view::npos; start = raw.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false, escaped = false;
        for (std::size_t i = start; i < raw.size(); ++i) {
            char ch = raw[i];
            if (in_string) {
                if (escaped)
                    escaped = false;
                else if (ch == '\\')
                    escaped = true;
                else if (ch == '"')
                    in_string = false;
                continue;
            }
            if (ch == '"')
                in_string = true;
            else if (ch == '{')
                ++depth;
            else if (ch == '}' && --depth == 0) {
                auto parsed = json::parse(raw.substr(start, i - start + 1), nullptr, false);
                if (!parsed.is_discarded() && parsed.is_object())
                    return parsed;
                break;
            }
        }
    }
    return std::nullopt;
}

inline std::string trim_lower(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(b, e - b + 1));
    for (auto& ch : out)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

struct AgentReply {
    std::vector<std::string> references;
    std::string reason;
    Label label = Label::irrelevant;
    std::string raw;
};

/// Parses the debate/adjudicator output contract:
/// {"reference": [...], "reason": "...", "response": "yes|no"}.
inline AgentReply extract_reply(std::string_view raw) {
    auto obj = find_json_object(raw);
    if (!obj)
        throw MalformedReply("no JSON object found", std::string(raw));
    if (!obj->contains("response") || !(*obj)["response"].is_string())
        throw MalformedReply("missing string field 'response'", std::string(raw));
    const auto response = trim_lower((*obj)["response"].get<std::string>());
    AgentReply r;
    if (response == "yes")
        r.label = Label::relevant;
    else if (response == "no")
        r.label = Label::irrelevant;
    else
        throw MalformedReply("response must be yes or no, got '" + response + "'", std::string(raw));
    for (const char* key : {"reference", "references"}) {
        if (obj->contains(key)) {
            const auto& refs = (*obj)[key];
            if (refs.is_array()) {
                for (const auto& s : refs)
                    if (s.is_string())
                        r.references.push_back(s.get<std::string>());
            } else if (refs.is_string() && !refs.get<std::string>().empty()) {
                r.references.push_back(refs.get<std::string>());
            }
            break;
        }
    }
    if (obj->contains("reason") && (*obj)["reason"].is_string())
        r.reason = (*obj)["reason"].get<std::string>();
    r.raw = std::string(raw);
    return r;
}

/// Inverse of extract_reply for the fields it reads.
inline std::string serialize_reply(const AgentReply& r) {
    return json{{"reference", r.references},
                {"reason", r.reason},
                {"response", r.label == Label::relevant ? "yes" : "no"}}
        .dump();
}

/// Parses the filter contract {"is_supported": true/false}; string "true"/"false"
/// values are tolerated the same way extract_reply tolerates case and whitespace.
inline bool extract_supported(std::string_view raw) {
    auto obj = find_json_object(raw);
    if (!obj)
        throw MalformedReply("no JSON object found", std::string(raw));
    auto it = obj->find("is_supported");
    if (it == obj->end())
        throw MalformedReply("missing field 'is_supported'", std::string(raw));
    if (it->is_boolean())
        return it->get<bool>();
    if (it->is_string()) {
        auto v = trim_lower(it->get<std::string>());
        if (v == "true")
            return true;
        if (v == "false")
            return false;
    }
    throw MalformedReply("is_supported must be true or false", std::string(raw));
}

} // namespace qdebate
