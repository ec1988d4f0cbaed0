#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <thread>

#include "qdebate/http_transport.hpp"
#include "qdebate/mock_transport.hpp"
#include "qdebate/templates.hpp"
#include "support.hpp"

using namespace qdebate;
using testing::agent;

namespace {

std::shared_ptr<FunctionTransport> statuses(std::vector<int> codes, std::string content = "ok") {
    auto i = std::make_shared<std::atomic<std::size_t>>(0);
    return std::make_shared<FunctionTransport>(
        [codes, content, i](const AgentConfig&, const std::string&, const std::string&) {
            auto n = i->fetch_add(1);
            int code = codes[std::min(n, codes.size() - 1)];
            if (code == 200)
                return RawResponse{200, make_completion_body(content, 10, 3), {}, {}};
            return RawResponse{code, "error body", {}, code == 0 ? "connection refused" : ""};
        });
}

/// Local OpenAI-compatible endpoint answering with a fixed status sequence.
struct FakeEndpoint {
    httplib::Server server;
    std::thread thread;
    int port = -1;
    std::atomic<int> hits{0};
    std::string last_auth;
    std::string last_body;
    std::mutex mu;

    explicit FakeEndpoint(std::vector<int> codes, bool header_usage = false) {
        server.Post("/v1/chat/completions", [this, codes, header_usage](const httplib::Request& req, httplib::Response& res) {
            auto n = static_cast<std::size_t>(hits.fetch_add(1));
            {
                std::lock_guard lock(mu);
                last_auth = req.get_header_value("Authorization");
                last_body = req.body;
            }
            res.status = codes[std::min(n, codes.size() - 1)];
            if (res.status != 200) {
                res.set_content("{\"error\":\"busy\"}", "application/json");
                return;
            }
            if (header_usage) {
                res.set_header("X-Usage-Input-Tokens", "21");
                res.set_header("X-Usage-Output-Tokens", "4");
                res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"fine"}}]})", "application/json");
            } else {
                res.set_content(make_completion_body("fine", 11, 2), "application/json");
            }
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeEndpoint() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

} // namespace

TEST_CASE("retryable statuses", "[gateway]") {
    for (int s : {0, 408, 429, 500, 502, 503, 599})
        CHECK(is_retryable_status(s));
    for (int s : {400, 401, 403, 404, 422})
        CHECK_FALSE(is_retryable_status(s));
}

TEST_CASE("gateway retries with exponential backoff", "[gateway]") {
    std::vector<std::chrono::milliseconds> sleeps;
    GatewayOptions o;
    o.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
    o.backoff_initial = std::chrono::milliseconds(100);
    o.backoff_max = std::chrono::milliseconds(250);

    SECTION("429 twice then success") {
        Gateway gw(statuses({429, 429, 200}), o);
        auto c = gw.complete(agent("a"), "sys", "user");
        CHECK(c.text == "ok");
        CHECK(c.attempts == 3);
        CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100), std::chrono::milliseconds(200)});
        CHECK(gw.call_count() == 1);
    }
    SECTION("persistent 5xx exhausts attempts") {
        Gateway gw(statuses({500}), o);
        CHECK_THROWS_AS(gw.complete(agent("a"), "sys", "user"), TransportError);
        CHECK(sleeps.size() == 3);
        CHECK(sleeps.back() == std::chrono::milliseconds(250));
        CHECK(gw.call_count() == 0);
    }
    SECTION("4xx fails immediately") {
        Gateway gw(statuses({401}), o);
        try {
            gw.complete(agent("a"), "sys", "user");
            FAIL("expected StatusError");
        } catch (const StatusError& e) {
            CHECK(e.status() == 401);
            CHECK(e.body() == "error body");
        }
        CHECK(sleeps.empty());
    }
    SECTION("connection failures are retried") {
        Gateway gw(statuses({0, 200}), o);
        CHECK(gw.complete(agent("a"), "", "user").attempts == 2);
    }
}

TEST_CASE("gateway rejects empty prompts and bad options", "[gateway]") {
    Gateway gw(statuses({200}), testing::fast_options());
    CHECK_THROWS_AS(gw.complete(agent("a"), "sys", ""), ConfigError);
    GatewayOptions bad;
    bad.max_attempts = 0;
    CHECK_THROWS_AS(Gateway(statuses({200}), bad), ConfigError);
}

TEST_CASE("gateway caps in-flight requests", "[gateway]") {
    std::atomic<int> live{0}, peak{0};
    auto t = std::make_shared<FunctionTransport>([&](const AgentConfig&, const std::string&, const std::string&) {
        int now = ++live;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --live;
        return RawResponse{200, make_completion_body("x", 1, 1), {}, {}};
    });
    auto o = testing::fast_options();
    o.max_in_flight = 2;
    Gateway gw(t, o);
    {
        std::vector<std::jthread> threads;
        for (int i = 0; i < 8; ++i)
            threads.emplace_back([&] {
                for (int j = 0; j < 4; ++j)
                    gw.complete(agent("a"), "", "u");
            });
    }
    CHECK(peak.load() <= 2);
    CHECK(gw.call_count() == 32);
}

TEST_CASE("usage accumulates per agent and cost needs prices", "[gateway]") {
    Gateway gw(statuses({200}), testing::fast_options());
    auto priced = agent("priced");
    priced.price_in = 0.5;
    priced.price_out = 2.0;
    auto c = gw.complete(priced, "", "u");
    CHECK(c.usage.input_tokens == 10);
    CHECK(c.usage.output_tokens == 3);
    REQUIRE(c.usage.cost);
    CHECK(*c.usage.cost == Catch::Approx(11.0));
    gw.complete(priced, "", "u");
    CHECK(*gw.usage_by_agent().at("priced").cost == Catch::Approx(22.0));
    CHECK(gw.total_usage().input_tokens == 20);

    gw.complete(agent("free"), "", "u");
    CHECK_FALSE(gw.usage_by_agent().at("free").cost);
    CHECK_FALSE(gw.total_usage().cost);
}

TEST_CASE("malformed replies are repaired once", "[gateway]") {
    std::vector<std::string> seen;
    std::vector<std::string> replies = {"garbage", testing::reply("yes")};
    auto t = FunctionTransport::text([&](const AgentConfig&, const std::string&, const std::string& user) {
        seen.push_back(user);
        return replies[std::min(seen.size() - 1, replies.size() - 1)];
    });
    Gateway gw(t, testing::fast_options());
    UsageRecord usage;
    auto r = gw.complete_parsed(agent("a"), "s", "prompt", [](const std::string& raw) { return extract_reply(raw); }, &usage);
    CHECK(r.label == Label::relevant);
    REQUIRE(seen.size() == 2);
    CHECK(seen[1] == "prompt" + format_reminder());
    CHECK(usage.output_tokens == gw.total_usage().output_tokens);

    replies = {"garbage"};
    seen.clear();
    CHECK_THROWS_AS(gw.complete_parsed(agent("a"), "s", "prompt", [](const std::string& raw) { return extract_reply(raw); }),
                    MalformedReply);
    CHECK(seen.size() == 2);
}

TEST_CASE("extract_reply tolerates wrapping and case", "[gateway]") {
    auto r = extract_reply("Sure!\n```json\n{\"reference\": [\"a {quoted} span\"], \"reason\": \"r\", \"response\": \" YES \"}\n```");
    CHECK(r.label == Label::relevant);
    CHECK(r.references == std::vector<std::string>{"a {quoted} span"});
    CHECK(r.reason == "r");

    CHECK(extract_reply(R"({"response":"No"})").label == Label::irrelevant);
    CHECK(extract_reply(R"({"references":"one","response":"no"})").references == std::vector<std::string>{"one"});
    CHECK(extract_reply(R"(prefix {not json} then {"response":"yes"})").label == Label::relevant);

    CHECK_THROWS_AS(extract_reply("no braces at all"), MalformedReply);
    CHECK_THROWS_AS(extract_reply(R"({"reason":"r"})"), MalformedReply);
    CHECK_THROWS_AS(extract_reply(R"({"response":"maybe"})"), MalformedReply);
    CHECK_THROWS_AS(extract_reply(R"({"response":1})"), MalformedReply);
}

TEST_CASE("extract_reply inverts serialize_reply", "[gateway]") {
    std::mt19937_64 rng(3);
    const std::vector<std::string> alphabet = {"a", "b", " ", "{", "}", "\"", "\\", "\n", ":", ",", "\u00e9"};
    for (int i = 0; i < 200; ++i) {
        AgentReply r;
        r.label = rng() % 2 ? Label::relevant : Label::irrelevant;
        auto text = [&] {
            std::string s;
            for (std::size_t n = rng() % 12; n > 0; --n)
                s += alphabet[rng() % alphabet.size()];
            return s;
        };
        r.reason = text();
        for (std::size_t n = rng() % 3; n > 0; --n)
            r.references.push_back(text());
        auto back = extract_reply(serialize_reply(r));
        CHECK(back.label == r.label);
        CHECK(back.reason == r.reason);
        CHECK(back.references == r.references);
    }
}

TEST_CASE("extract_supported", "[gateway]") {
    CHECK(extract_supported(R"({"is_supported": true})"));
    CHECK_FALSE(extract_supported(R"(```{"is_supported": "False"}```)"));
    CHECK_THROWS_AS(extract_supported(R"({"supported": true})"), MalformedReply);
    CHECK_THROWS_AS(extract_supported(R"({"is_supported": "perhaps"})"), MalformedReply);
}

TEST_CASE("templates render every placeholder", "[templates]") {
    Bindings b{{"agent1", "Agent A"}, {"agent2", "Agent B"}, {"query", "Q {answer} literal"}, {"answer", "1. x"},
               {"chunk", "C"}, {"history", "H"}};
    auto p = render_template(TemplateId::debate_first_round, b);
    CHECK_THAT(p.system, Catch::Matchers::StartsWith("You are Agent A,"));
    CHECK_THAT(p.user, Catch::Matchers::ContainsSubstring("Q {answer} literal"));
    CHECK(p.user.find("{history}") == std::string::npos);
    CHECK(render_template(TemplateId::debate_first_round, b) == p);

    b.erase("history");
    try {
        render_template(TemplateId::debate_first_round, b);
        FAIL("expected TemplateError");
    } catch (const TemplateError& e) {
        CHECK(e.placeholder() == "history");
    }
}

TEST_CASE("templates keep literal JSON braces", "[templates]") {
    auto p = render_template(TemplateId::chunk_filter, {{"query", "q"}, {"answers", "a"}, {"chunk", "c"}});
    CHECK_THAT(p.user, Catch::Matchers::ContainsSubstring("\"is_supported\""));
    CHECK(p.system.empty());
}

TEST_CASE("numbered list", "[templates]") {
    CHECK(numbered_list({"a", "b"}) == "1. a\n2. b");
    CHECK(numbered_list({}).empty());
}

TEST_CASE("mock rules are deterministic", "[mock]") {
    Gateway gw(std::make_shared<MockRuleTransport>(), testing::fast_options());
    auto filter_prompt = render_template(TemplateId::chunk_filter, {{"query", "q"}, {"answers", "1. Paris"}, {"chunk", "Paris is big"}});
    CHECK(extract_supported(gw.complete(agent("f", "mock:overlap"), "", filter_prompt.user).text));
    CHECK_FALSE(extract_supported(gw.complete(agent("f", "mock:no"), "", filter_prompt.user).text));
    CHECK(extract_supported(gw.complete(agent("f", "mock:yes"), "", filter_prompt.user).text));
    const auto h1 = gw.complete(agent("x", "mock:hash"), "", filter_prompt.user).text;
    CHECK(gw.complete(agent("y", "mock:hash"), "", filter_prompt.user).text == h1);
    CHECK_THROWS_AS(gw.complete(agent("f", "mock:sometimes"), "", filter_prompt.user), ConfigError);
}

TEST_CASE("http transport against a local endpoint", "[http]") {
    auto o = testing::fast_options();
    o.timeout = std::chrono::seconds(5);

    SECTION("429, 429, 200") {
        FakeEndpoint ep({429, 429, 200});
        Gateway gw(std::make_shared<RoutingTransport>(), o);
        auto c = gw.complete(agent("a", ep.url()), "sys", "hello");
        CHECK(c.text == "fine");
        CHECK(c.attempts == 3);
        CHECK(ep.hits == 3);
        CHECK(c.usage.input_tokens == 11);
        auto body = json::parse(ep.last_body);
        CHECK(body["model"] == "test-model");
        CHECK(body["messages"][0]["role"] == "system");
        CHECK(body["messages"][1]["content"] == "hello");
    }
    SECTION("always 500") {
        FakeEndpoint ep({500});
        Gateway gw(std::make_shared<RoutingTransport>(), o);
        CHECK_THROWS_AS(gw.complete(agent("a", ep.url()), "sys", "hello"), TransportError);
        CHECK(ep.hits == o.max_attempts);
    }
    SECTION("usage from headers and bearer token") {
        FakeEndpoint ep({200}, true);
        ::setenv("QDEBATE_TEST_KEY", "sekrit", 1);
        auto a = agent("a", ep.url() + "/chat/completions");
        a.api_key_env = "QDEBATE_TEST_KEY";
        Gateway gw(std::make_shared<RoutingTransport>(), o);
        auto c = gw.complete(a, "", "hello");
        CHECK(c.usage.input_tokens == 21);
        CHECK(c.usage.output_tokens == 4);
        CHECK(ep.last_auth == "Bearer sekrit");
        a.api_key_env = "QDEBATE_TEST_KEY_UNSET";
        CHECK_THROWS_AS(gw.complete(a, "", "hello"), ConfigError);
    }
    SECTION("unreachable endpoint") {
        o.max_attempts = 2;
        o.timeout = std::chrono::seconds(1);
        Gateway gw(std::make_shared<RoutingTransport>(), o);
        CHECK_THROWS_AS(gw.complete(agent("a", "http://127.0.0.1:1/v1"), "", "hello"), TransportError);
    }
}

TEST_CASE("endpoint URL normalization", "[http]") {
    using P = std::pair<std::string, std::string>;
    CHECK(HttpTransport::split_url("http://h:1/v1") == P{"http://h:1", "/v1/chat/completions"});
    CHECK(HttpTransport::split_url("http://h:1/v1/") == P{"http://h:1", "/v1/chat/completions"});
    CHECK(HttpTransport::split_url("https://h/v1/chat/completions") == P{"https://h", "/v1/chat/completions"});
    CHECK(HttpTransport::split_url("http://h") == P{"http://h", "/chat/completions"});
    CHECK_THROWS_AS(HttpTransport::split_url("h:1/v1"), ConfigError);
}
