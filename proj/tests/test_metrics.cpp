#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "qdebate/generation.hpp"
#include "qdebate/metrics.hpp"
#include "support.hpp"

using namespace qdebate;

namespace {

RunSet runs_from(const std::string& text) {
    std::istringstream in(text);
    return RunSet(parse_run_file(in));
}

QrelsSet qrels_from(const std::string& text) {
    std::istringstream in(text);
    return parse_qrels(in);
}

} // namespace

TEST_CASE("labeling quality excludes escalated cases from recall", "[metrics]") {
    std::vector<LabelComparison> cs = {{Label::relevant, Label::relevant, false},
                                       {Label::irrelevant, Label::relevant, false},
                                       {Label::irrelevant, Label::irrelevant, false},
                                       {Label::relevant, Label::irrelevant, true}};
    auto q = labeling_quality(cs);
    CHECK(*q.recall_relevant == 0.5);
    CHECK(*q.recall_irrelevant == 1.0);
    CHECK(*q.bacc == 0.75);
    CHECK(q.escalation_ratio == 0.25);
    CHECK(q.escalated == 1);

    auto one_class = labeling_quality({{Label::relevant, Label::relevant, false}});
    CHECK_FALSE(one_class.recall_irrelevant);
    CHECK_FALSE(one_class.bacc);
}

TEST_CASE("hit, nDCG and recall on hand-computed cases", "[metrics]") {
    auto q = qrels_from("q 0 a 1\nq 0 b 1\nq 0 x 0\nempty 0 z 0\n");
    const std::vector<std::string> ranked = {"x", "a", "y", "b"};

    CHECK(*hit_at_k(ranked, q, "q", 1).value == 0.0);
    CHECK(*hit_at_k(ranked, q, "q", 2).value == 1.0);

    const double dcg = 1 / std::log2(3.0) + 1 / std::log2(5.0);
    const double idcg = 1 + 1 / std::log2(3.0);
    CHECK(*ndcg_at_k(ranked, q, "q", 10).value == Catch::Approx(dcg / idcg).epsilon(1e-12));
    CHECK(*ndcg_at_k(ranked, q, "q", 2).value == Catch::Approx((1 / std::log2(3.0)) / idcg).epsilon(1e-12));

    CHECK(*recall_at_k(ranked, q, "q", 2).value == 0.5);
    CHECK(*recall_at_k(ranked, q, "q", 4).value == 1.0);

    for (auto s : {ndcg_at_k(ranked, q, "empty", 10), recall_at_k(ranked, q, "empty", 10), ndcg_at_k(ranked, q, "none", 10)}) {
        CHECK_FALSE(s.value);
        CHECK(s.no_relevant);
    }
    CHECK(*hit_at_k(ranked, q, "empty", 10).value == 0.0);
    CHECK_THROWS_AS(hit_at_k(ranked, q, "q", 0), ConfigError);

    QrelsSet single;
    single.set({"q", "b"}, {1, Provenance::original});
    CHECK(*ndcg_at_k({"a", "b", "c"}, single, "q", 10).value == Catch::Approx(0.6309297535714574).epsilon(1e-12));
}

TEST_CASE("system metric averages over queries with relevant chunks", "[metrics]") {
    auto runs = runs_from("q1 Q0 a 1 2 s\nq1 Q0 b 2 1 s\nq2 Q0 c 1 1 s\nq3 Q0 d 1 1 s\n");
    auto q = qrels_from("q1 0 b 1\nq2 0 c 1\n");
    auto r = system_metric(runs, "s", q, RetrievalMetric::ndcg, 10, "demo");
    CHECK(r.sample_size == 2);
    CHECK(r.excluded == 1);
    CHECK(*r.value == Catch::Approx((1 / std::log2(3.0) + 1) / 2));
    CHECK(r.dataset == "demo");
    auto hit = system_metric(runs, "s", q, RetrievalMetric::hit, 1);
    CHECK(*hit.value == Catch::Approx(1.0 / 3.0));
    CHECK(retrieval_metric_from_string("ndcg") == RetrievalMetric::ndcg);
    CHECK_THROWS_AS(retrieval_metric_from_string("map"), ConfigError);

    json j = r;
    CHECK(j["metric"] == "ndcg@k");
    CHECK(j["k"] == 10);
    CHECK_THAT(render_table({r}), Catch::Matchers::ContainsSubstring("ndcg@k"));
}

TEST_CASE("holes and hole rate", "[metrics]") {
    auto runs = runs_from("q1 Q0 a 1 3 s\nq1 Q0 b 2 2 s\nq1 Q0 c 3 1 s\nq2 Q0 d 1 1 s\n");
    auto original = qrels_from("q1 0 a 1\nq1 0 b 0\n");
    QrelsSet augmented = original;
    augmented.merge({"q1", "b"}, 1, Provenance::human); // originals win: not a hole
    augmented.merge({"q1", "c"}, 1, Provenance::automatic);
    augmented.merge({"q2", "d"}, 0, Provenance::human);

    CHECK_FALSE(is_hole({"q1", "a"}, original, augmented));
    CHECK_FALSE(is_hole({"q1", "b"}, original, augmented));
    CHECK(is_hole({"q1", "c"}, original, augmented));
    CHECK_FALSE(is_hole({"q2", "d"}, original, augmented));

    auto c = hole_count(runs, "s", original, augmented, 3);
    CHECK(c.holes == 1);
    CHECK(c.positions == 4);
    CHECK(hole_at_k(runs, "s", original, augmented, 3) == 0.25);
    CHECK(hole_at_k(runs, "s", original, augmented, 2) == 0.0);
    CHECK(pool_holes(runs, {"s"}, original, augmented, 3).size() == 1);
}

TEST_CASE("seeded permutations are uniform permutations", "[metrics]") {
    std::mt19937_64 rng(1);
    std::map<std::vector<std::size_t>, int> counts;
    for (int i = 0; i < 6000; ++i)
        ++counts[seeded_permutation(3, rng)];
    CHECK(counts.size() == 6);
    for (const auto& [p, n] : counts)
        CHECK(n == Catch::Approx(1000).margin(120));
    std::mt19937_64 a(9), b(9);
    CHECK(seeded_permutation(10, a) == seeded_permutation(10, b));
}

TEST_CASE("growth rate", "[metrics]") {
    auto gr = growth_rate({0, 4, 6, 6});
    REQUIRE(gr.size() == 3);
    CHECK_FALSE(gr[0]);
    CHECK(*gr[1] == 0.5);
    CHECK(*gr[2] == 0.0);
    CHECK_THROWS_AS(growth_rate({3, 2}), DataError);
    CHECK(growth_rate({5}).empty());
}

TEST_CASE("growth rate curve over seeded orderings", "[metrics]") {
    auto runs = runs_from("q Q0 a 1 1 s1\nq Q0 b 1 1 s2\nq Q0 a 1 1 s3\n");
    QrelsSet original;
    QrelsSet augmented;
    augmented.merge({"q", "a"}, 1, Provenance::automatic);
    augmented.merge({"q", "b"}, 1, Provenance::automatic);
    auto curve = growth_rate_curve(runs, {"s1", "s2", "s3"}, original, augmented, 1, 50, 3);
    REQUIRE(curve.size() == 2);
    CHECK(curve[0].m == 2);
    for (const auto& p : curve)
        if (p.mean)
            CHECK(*p.mean >= 0.0);
    // orderings starting with s2 then s1/s3 grow 1 -> 2; the total hole set is 2 at m = 3
    auto again = growth_rate_curve(runs, {"s1", "s2", "s3"}, original, augmented, 1, 50, 3);
    CHECK(again[0].mean == curve[0].mean);
}

TEST_CASE("marginal contribution", "[metrics]") {
    // s2 alone retrieves the hole b for q
    auto runs = runs_from("q Q0 a 1 2 s1\nq Q0 b 2 1 s1\nq Q0 b 1 2 s2\nq Q0 c 2 1 s2\n");
    auto original = qrels_from("q 0 a 1\n");
    QrelsSet augmented = original;
    augmented.merge({"q", "b"}, 1, Provenance::automatic);

    auto d_none = qrels_for_systems(runs, {}, original, augmented, 1);
    CHECK(d_none == original);
    auto d_s2 = qrels_for_systems(runs, {"s2"}, original, augmented, 1);
    CHECK(d_s2.is_relevant("q", "b"));

    // target s2, S = {}: with D_{s2}, s2 hits b at rank 1 -> nDCG@1 1; with D_{} it scores 0
    CHECK(*marginal_contribution(runs, "s2", {}, original, augmented, RetrievalMetric::ndcg, 1) == 1.0);
    // S = {s1} at k = 2 already includes b
    CHECK(*marginal_contribution(runs, "s2", {"s1"}, original, augmented, RetrievalMetric::ndcg, 2) == 0.0);
    CHECK_THROWS_AS(marginal_contribution(runs, "s2", {"s2"}, original, augmented, RetrievalMetric::ndcg, 1), ConfigError);

    auto curve = marginal_contribution_curve(runs, {"s1", "s2"}, original, augmented, RetrievalMetric::ndcg, 2, 10, 4);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0].m == 1);
    CHECK(*curve[0].mean == 0.0);
}

TEST_CASE("RAG alignment", "[metrics]") {
    std::map<std::string, int> r = {{"a", 1}, {"b", 0}, {"c", 1}, {"d", 0}};
    std::map<std::string, int> g = {{"a", 1}, {"b", 1}, {"c", 1}, {"d", 0}};
    CHECK(rag_align_binary(r, g) == 0.75);
    CHECK(rag_align_binary(r, r) == 1.0);
    CHECK_THROWS_AS(rag_align_binary(r, {{"a", 1}}), DataError);
    CHECK_THROWS_AS(rag_align_binary({{"a", 2}}, {{"a", 1}}), DataError);
    CHECK_THROWS_AS(rag_align_binary({}, {}), DataError);

    std::map<std::string, double> cont = {{"a", 0.9}, {"b", 0.2}, {"c", 0.8}, {"d", 0.1}};
    auto pb = rag_align_pointbiserial(cont, g);
    REQUIRE(pb);
    CHECK(*pb > 0.0);
    CHECK(*pb <= 1.0);
    CHECK_FALSE(rag_align_pointbiserial(cont, {{"a", 1}, {"b", 1}, {"c", 1}, {"d", 1}}));
    CHECK_FALSE(rag_align_pointbiserial({{"a", 0.5}, {"b", 0.5}}, {{"a", 1}, {"b", 0}}));
}

TEST_CASE("rank shift", "[metrics]") {
    auto rows = rank_shift_report({{"A", 0.5}, {"B", 0.4}, {"C", 0.3}}, {{"A", 0.55}, {"B", 0.6}, {"C", 0.3}});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].system == "B");
    CHECK(rows[0].delta == 1);
    CHECK(rows[1].system == "A");
    CHECK(rows[1].delta == -1);
    CHECK(rows[2].delta == 0);
    // ties keep name order
    auto tied = rank_shift_report({{"A", 0.5}, {"B", 0.5}}, {{"A", 0.5}, {"B", 0.5}});
    CHECK(tied[0].system == "A");
    CHECK_THROWS_AS(rank_shift_report({{"A", 1}}, {{"B", 1}}), DataError);
}

TEST_CASE("generation judge and answer extraction", "[generation]") {
    CHECK(extract_true_false("True"));
    CHECK_FALSE(extract_true_false(" \"false.\" "));
    CHECK_THROWS_AS(extract_true_false("True or False"), MalformedReply);
    CHECK_THROWS_AS(extract_true_false("maybe"), MalformedReply);

    CHECK(extract_answer(R"(```json
{"Answer": "Paris"}
```)") == "Paris");
    CHECK_THROWS_AS(extract_answer(R"({"answer": "x"})"), MalformedReply);

    CHECK(render_contexts({"one", "two"}) == "\n[1] one\n[2] two");
    auto prompt = render_generation_prompt("Q?", {"one"});
    CHECK_THAT(prompt, Catch::Matchers::ContainsSubstring("[1] one"));

    std::string judged;
    Gateway gw(FunctionTransport::text([&](const AgentConfig&, const std::string&, const std::string& user) {
                   judged = user;
                   return std::string("False");
               }),
               testing::fast_options());
    CHECK(judge_generation(gw, testing::agent("j"), "Q?", {"A1", "A2"}, "pred") == 0);
    CHECK_THAT(judged, Catch::Matchers::ContainsSubstring("1. A1\n2. A2"));
    CHECK_THROWS_AS(judge_generation(gw, testing::agent("j"), "Q?", {"A1"}, ""), DataError);
    CHECK_THROWS_AS(generate_answer(gw, testing::agent("g"), "Q?", {}), DataError);
}
