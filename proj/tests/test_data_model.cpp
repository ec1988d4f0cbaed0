#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "qdebate/data_model.hpp"
#include "qdebate/jsonl.hpp"
#include "support.hpp"

using namespace qdebate;

namespace {

std::vector<RunEntry> parse_runs(const std::string& text) {
    std::istringstream in(text);
    return parse_run_file(in);
}

QrelsSet parse_q(const std::string& text) {
    std::istringstream in(text);
    return parse_qrels(in);
}

} // namespace

TEST_CASE("run files parse six columns", "[parsers]") {
    auto e = parse_runs("q1 Q0 d1 1 9.5 bm25\n\nq1  Q0\td2 2 -1e-3 bm25\n");
    REQUIRE(e.size() == 2);
    CHECK(e[1] == RunEntry{"q1", "d2", 2, -1e-3, "bm25"});
}

TEST_CASE("run file errors carry line numbers", "[parsers]") {
    SECTION("column count") {
        try {
            parse_runs("q1 Q0 d1 1 9.5 bm25\nq1 Q0 d2 2 bm25\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
            CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("6 columns"));
        }
    }
    SECTION("rank") {
        CHECK_THROWS_AS(parse_runs("q1 Q0 d1 0 1 s\n"), ParseError);
        CHECK_THROWS_AS(parse_runs("q1 Q0 d1 x 1 s\n"), ParseError);
    }
    SECTION("score") { CHECK_THROWS_AS(parse_runs("q1 Q0 d1 1 high s\n"), ParseError); }
    SECTION("duplicate rank") {
        CHECK_THROWS_WITH(parse_runs("q1 Q0 d1 1 2 s\nq1 Q0 d2 1 1 s\n"),
                          Catch::Matchers::ContainsSubstring("duplicate rank"));
    }
    SECTION("duplicate chunk") { CHECK_THROWS_AS(parse_runs("q1 Q0 d1 1 2 s\nq1 Q0 d1 2 1 s\n"), ParseError); }
    SECTION("same rank in different systems is fine") {
        CHECK(parse_runs("q1 Q0 d1 1 2 a\nq1 Q0 d1 1 2 b\n").size() == 2);
    }
}

TEST_CASE("RunSet requires contiguous ranks", "[parsers]") {
    CHECK_THROWS_AS(RunSet(parse_runs("q1 Q0 d1 1 2 s\nq1 Q0 d2 3 1 s\n")), DataError);
    RunSet runs(parse_runs("q1 Q0 d2 2 1 s\nq1 Q0 d1 1 2 s\nq2 Q0 d9 1 1 t\n"));
    CHECK(runs.system_names() == std::vector<std::string>{"s", "t"});
    CHECK(runs.top_k("s", "q1", 1) == std::vector<std::string>{"d1"});
    CHECK(runs.top_k("s", "q1", 10) == std::vector<std::string>{"d1", "d2"});
    CHECK(runs.top_k("s", "q9", 10).empty());
}

TEST_CASE("run round trip", "[parsers]") {
    std::mt19937_64 rng(5);
    std::vector<RunEntry> entries;
    for (int q = 0; q < 4; ++q)
        for (int r = 1; r <= 7; ++r)
            entries.push_back({"q" + std::to_string(q), "doc-" + std::to_string(rng() % 100000), r,
                               std::ldexp(static_cast<double>(rng() % 1000000), -7), "sys"});
    std::ostringstream out;
    write_run_file(out, entries);
    CHECK(parse_runs(out.str()) == entries);
}

TEST_CASE("qrels are binary", "[parsers]") {
    auto q = parse_q("q1 0 d1 1\nq1 0 d2 0\nq2 0 d1 1\nq1 0 d1 1\n");
    CHECK(q.size() == 3);
    CHECK(q.is_relevant("q1", "d1"));
    CHECK_FALSE(q.is_relevant("q1", "d2"));
    CHECK(q.relevant_count("q1") == 1);
    CHECK(q.find({"q1", "d1"})->provenance == Provenance::original);

    CHECK_THROWS_WITH(parse_q("q1 0 d1 2\n"), Catch::Matchers::ContainsSubstring("graded"));
    CHECK_THROWS_AS(parse_q("q1 0 d1 -1\n"), ParseError);
    CHECK_THROWS_AS(parse_q("q1 0 d1\n"), ParseError);
    CHECK_THROWS_AS(parse_q("q1 0 d1 1\nq1 0 d1 0\n"), ParseError);
}

TEST_CASE("qrels round trip", "[parsers]") {
    const std::string text = "a 0 x 1\na 0 y 0\nb 0 x 0\n";
    std::ostringstream out;
    write_qrels(out, parse_q(text));
    CHECK(out.str() == text);
}

TEST_CASE("qrels merge never overwrites originals and prefers human over auto", "[qrels]") {
    QrelsSet q;
    q.set({"q", "orig"}, {0, Provenance::original});
    CHECK_FALSE(q.merge({"q", "orig"}, 1, Provenance::human));
    CHECK(q.find({"q", "orig"})->label == 0);

    CHECK(q.merge({"q", "c"}, 1, Provenance::automatic));
    CHECK(q.merge({"q", "c"}, 0, Provenance::human));
    CHECK_FALSE(q.merge({"q", "c"}, 1, Provenance::automatic));
    CHECK(q.find({"q", "c"}) == QrelsEntry{0, Provenance::human});
    CHECK_THROWS_AS(q.set({"q", "x"}, {2, Provenance::human}), DataError);
}

TEST_CASE("corpus and query records", "[parsers]") {
    std::istringstream corpus(R"({"id":"c1","text":"alpha"})" "\n" R"({"id":"c2","text":"beta"})" "\n");
    auto c = parse_corpus(corpus);
    CHECK(c.size() == 2);
    CHECK(c.find("c2")->text == "beta");
    CHECK(c.find("c3") == nullptr);

    std::istringstream dup(R"({"id":"c1","text":"a"})" "\n" R"({"id":"c1","text":"b"})" "\n");
    CHECK_THROWS_AS(parse_corpus(dup), DataError);

    std::istringstream queries(R"({"id":"q1","text":"who?","answers":["me"]})" "\n");
    auto qs = parse_queries(queries);
    CHECK(qs.find("q1")->answers == std::vector<std::string>{"me"});

    std::istringstream no_answers(R"({"id":"q1","text":"who?","answers":[]})" "\n");
    CHECK_THROWS_AS(parse_queries(no_answers), DataError);
}

TEST_CASE("pool is the deduplicated top-k union", "[pool]") {
    RunSet runs(parse_runs("q1 Q0 a 1 3 s1\nq1 Q0 b 2 2 s1\nq1 Q0 c 3 1 s1\n"
                           "q1 Q0 b 1 3 s2\nq1 Q0 d 2 2 s2\nq1 Q0 e 3 1 s2\n"));
    Corpus corpus({{"a", "A"}, {"b", "B"}, {"c", "C"}, {"d", "D"}, {"e", "E"}});
    QuerySet queries({{"q1", "question", {"ans"}}});

    auto pool = build_pool(runs, queries, corpus, 2);
    REQUIRE(pool.size() == 3);
    CHECK(pool[0].chunk_id == "a");
    CHECK(pool[1].chunk_id == "b");
    CHECK(pool[2].chunk_id == "d");
    CHECK(pool[1].chunk == "B");
    CHECK(pool[1].answers == std::vector<std::string>{"ans"});

    CHECK(build_pool(runs, queries, corpus, 10).size() == 5);
    CHECK(build_pool(runs, queries, corpus, 10).size() <= 2u * 1u * 10u);
    CHECK_THROWS_AS(build_pool(runs, queries, corpus, 0), ConfigError);
}

TEST_CASE("pooling reports every unresolvable id", "[pool]") {
    RunSet runs(parse_runs("q1 Q0 a 1 3 s\nq1 Q0 zz 2 2 s\nq9 Q0 a 1 1 s\n"));
    Corpus corpus(std::vector<Chunk>{{"a", "A"}});
    QuerySet queries({{"q1", "question", {"ans"}}});
    try {
        build_pool(runs, queries, corpus, 10);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("q9"));
        CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("zz"));
    }
}

TEST_CASE("pool save and load", "[pool]") {
    auto dir = testing::temp_dir("pool");
    std::vector<Triplet> pool = {testing::triplet("q1", "a", "text with \"quotes\"\nand newline"),
                                 testing::triplet("q2", "b")};
    save_pool(dir / "pool.jsonl", pool);
    CHECK(load_pool(dir / "pool.jsonl") == pool);

    {
        std::ofstream out(dir / "pool.jsonl", std::ios::app);
        out << json(pool[0]).dump() << '\n';
    }
    CHECK_THROWS_AS(load_pool(dir / "pool.jsonl"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sampling one triplet per query is seeded", "[pool]") {
    std::vector<Triplet> pool;
    for (int q = 0; q < 5; ++q)
        for (int c = 0; c < 7; ++c)
            pool.push_back(testing::triplet("q" + std::to_string(q), "c" + std::to_string(c)));
    auto a = sample_one_per_query(pool, 42);
    auto b = sample_one_per_query(pool, 42);
    CHECK(a == b);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i].query_id == "q" + std::to_string(i));
    bool differs = false;
    for (std::uint64_t s = 0; s < 20 && !differs; ++s)
        differs = sample_one_per_query(pool, s) != a;
    CHECK(differs);
}

TEST_CASE("jsonl tolerates only a torn final line", "[jsonl]") {
    std::istringstream torn("{\"a\":1}\n{\"a\":2}\n{\"a\":");
    CHECK(jsonl::read(torn, true).size() == 2);
    std::istringstream strict("{\"a\":1}\n{\"a\":");
    CHECK_THROWS(jsonl::read(strict, false));
    std::istringstream middle("{\"a\":1}\n{bad\n{\"a\":2}\n");
    CHECK_THROWS(jsonl::read(middle, true));
}
