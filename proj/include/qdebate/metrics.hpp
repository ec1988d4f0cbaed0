#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qdebate/data_model.hpp"

namespace qdebate {

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
    std::string metric;
    std::optional<int> k;
    std::string system;
    std::string dataset;
    /// nullopt when undefined on this slice.
    std::optional<double> value;
    std::size_t sample_size = 0;
    std::size_t excluded = 0;
    std::optional<std::uint64_t> seed;
    std::string note;
};

inline void to_json(json& j, const MetricReport& r) {
    j = json{{"metric", r.metric}, {"system", r.system}, {"dataset", r.dataset}, {"n", r.sample_size}};
    j["k"] = r.k ? json(*r.k) : json(nullptr);
    j["value"] = r.value ? json(*r.value) : json(nullptr);
    if (r.excluded)
        j["excluded"] = r.excluded;
    if (r.seed)
        j["seed"] = *r.seed;
    if (!r.note.empty())
        j["note"] = r.note;
}

/// Aligned-column rendering for terminals.
inline std::string render_table(const std::vector<MetricReport>& rows) {
    std::vector<std::array<std::string, 7>> cells;
    cells.push_back({"metric", "k", "system", "dataset", "value", "n", "excluded"});
    for (const auto& r : rows) {
        std::ostringstream v;
        if (r.value)
            v << std::fixed << std::setprecision(4) << *r.value;
        else
            v << "undefined";
        cells.push_back({r.metric, r.k ? std::to_string(*r.k) : "-", r.system.empty() ? "-" : r.system,
                         r.dataset.empty() ? "-" : r.dataset, v.str(), std::to_string(r.sample_size),
                         std::to_string(r.excluded)});
    }
    std::array<std::size_t, 7> width{};
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c)
            width[c] = std::max(width[c], row[c].size());
    std::ostringstream out;
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c)
                out << "  ";
            if (c == 4 || c == 5 || c == 6)
                out << std::setw(static_cast<int>(width[c])) << std::right << row[c];
            else
                out << std::setw(static_cast<int>(width[c])) << std::left << row[c];
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Labeling quality

struct LabelComparison {
    Label predicted = Label::irrelevant;
    Label truth = Label::irrelevant;
    bool escalated = false;
};

struct LabelingQuality {
    std::optional<double> recall_relevant;
    std::optional<double> recall_irrelevant;
    std::optional<double> bacc;
    double escalation_ratio = 0.0;
    std::size_t total = 0;
    std::size_t escalated = 0;
};

/// Class-wise recall over non-escalated cases; escalated cases only count toward
/// the escalation ratio.
inline LabelingQuality labeling_quality(const std::vector<LabelComparison>& cs) {
    std::size_t correct[2] = {0, 0}, seen[2] = {0, 0};
    LabelingQuality q;
    q.total = cs.size();
    for (const auto& c : cs) {
        if (c.escalated) {
            ++q.escalated;
            continue;
        }
        ++seen[to_int(c.truth)];
        if (c.predicted == c.truth)
            ++correct[to_int(c.truth)];
    }
    if (seen[1])
        q.recall_relevant = static_cast<double>(correct[1]) / static_cast<double>(seen[1]);
    if (seen[0])
        q.recall_irrelevant = static_cast<double>(correct[0]) / static_cast<double>(seen[0]);
    if (q.recall_relevant && q.recall_irrelevant)
        q.bacc = (*q.recall_relevant + *q.recall_irrelevant) / 2.0;
    if (q.total)
        q.escalation_ratio = static_cast<double>(q.escalated) / static_cast<double>(q.total);
    return q;
}

// ---------------------------------------------------------------------------
// Per-query retrieval metrics

struct QueryScore {
    std::optional<double> value;
    /// Query has no relevant chunk in the qrels.
    bool no_relevant = false;
};

inline QueryScore hit_at_k(const std::vector<std::string>& ranked, const QrelsSet& qrels, const std::string& query_id,
                           int k) {
    if (k < 1)
        throw ConfigError("k must be >= 1");
    QueryScore s{0.0, qrels.relevant_count(query_id) == 0};
    const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i)
        if (qrels.is_relevant(query_id, ranked[i])) {
            s.value = 1.0;
            break;
        }
    return s;
}

/// Exponential-gain nDCG; undefined when the query has no relevant chunk.
inline QueryScore ndcg_at_k(const std::vector<std::string>& ranked, const QrelsSet& qrels, const std::string& query_id,
                            int k) {
    if (k < 1)
        throw ConfigError("k must be >= 1");
    const std::size_t rel = qrels.relevant_count(query_id);
    if (rel == 0)
        return {std::nullopt, true};
    double dcg = 0.0, idcg = 0.0;
    const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
        const int g = qrels.is_relevant(query_id, ranked[i]) ? 1 : 0;
        dcg += (std::exp2(g) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    const auto ideal = std::min<std::size_t>(rel, static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < ideal; ++i)
        idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return {dcg / idcg, false};
}

inline QueryScore recall_at_k(const std::vector<std::string>& ranked, const QrelsSet& qrels,
                              const std::string& query_id, int k) {
    if (k < 1)
        throw ConfigError("k must be >= 1");
    const std::size_t rel = qrels.relevant_count(query_id);
    if (rel == 0)
        return {std::nullopt, true};
    std::size_t found = 0;
    const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i)
        found += qrels.is_relevant(query_id, ranked[i]) ? 1 : 0;
    return {static_cast<double>(found) / static_cast<double>(rel), false};
}

enum class RetrievalMetric { hit, ndcg, recall };

inline RetrievalMetric retrieval_metric_from_string(std::string_view s) {
    if (s == "hit")
        return RetrievalMetric::hit;
    if (s == "ndcg")
        return RetrievalMetric::ndcg;
    if (s == "recall")
        return RetrievalMetric::recall;
    throw ConfigError("unknown metric '" + std::string(s) + "' (hit, ndcg, recall)");
}

inline std::string_view to_string(RetrievalMetric m) {
    switch (m) {
    case RetrievalMetric::hit: return "hit";
    case RetrievalMetric::ndcg: return "ndcg";
    case RetrievalMetric::recall: return "recall";
    }
    return "";
}

inline QueryScore score_query(RetrievalMetric m, const std::vector<std::string>& ranked, const QrelsSet& qrels,
                              const std::string& query_id, int k) {
    switch (m) {
    case RetrievalMetric::hit: return hit_at_k(ranked, qrels, query_id, k);
    case RetrievalMetric::ndcg: return ndcg_at_k(ranked, qrels, query_id, k);
    case RetrievalMetric::recall: return recall_at_k(ranked, qrels, query_id, k);
    }
    return {};
}

/// Per-query scores of one system, keyed by query id.
inline std::map<std::string, QueryScore> per_query_scores(const RunSet& runs, const std::string& system,
                                                          const QrelsSet& qrels, RetrievalMetric m, int k) {
    std::map<std::string, QueryScore> out;
    for (const auto& [qid, _] : runs.queries(system))
        out[qid] = score_query(m, runs.top_k(system, qid, static_cast<std::size_t>(k)), qrels, qid, k);
    return out;
}

/// Mean over the system's queries; undefined scores are excluded and counted.
inline MetricReport system_metric(const RunSet& runs, const std::string& system, const QrelsSet& qrels,
                                  RetrievalMetric m, int k, const std::string& dataset = {}) {
    MetricReport r{std::string(to_string(m)) + "@k", k, system, dataset, std::nullopt, 0, 0, std::nullopt, {}};
    double sum = 0.0;
    std::size_t flagged = 0;
    for (const auto& [_, s] : per_query_scores(runs, system, qrels, m, k)) {
        if (s.no_relevant)
            ++flagged;
        if (!s.value) {
            ++r.excluded;
            continue;
        }
        sum += *s.value;
        ++r.sample_size;
    }
    if (r.sample_size)
        r.value = sum / static_cast<double>(r.sample_size);
    if (flagged && m == RetrievalMetric::hit)
        r.note = std::to_string(flagged) + " queries without relevant chunks scored 0";
    return r;
}

// ---------------------------------------------------------------------------
// Holes

inline bool is_hole(const PairKey& key, const QrelsSet& original, const QrelsSet& augmented) {
    auto a = augmented.find(key);
    return a && a->label == 1 && !original.is_relevant(key.query_id, key.chunk_id);
}

struct HoleCount {
    std::size_t holes = 0;
    std::size_t positions = 0;
    std::optional<double> rate() const {
        if (!positions)
            return std::nullopt;
        return static_cast<double>(holes) / static_cast<double>(positions);
    }
};

/// Retrieved positions with rank <= k that hold a hole, over all of the system's queries.
inline HoleCount hole_count(const RunSet& runs, const std::string& system, const QrelsSet& original,
                            const QrelsSet& augmented, int k) {
    if (k < 1)
        throw ConfigError("k must be >= 1");
    HoleCount c;
    for (const auto& [qid, _] : runs.queries(system))
        for (const auto& cid : runs.top_k(system, qid, static_cast<std::size_t>(k))) {
            ++c.positions;
            c.holes += is_hole({qid, cid}, original, augmented) ? 1 : 0;
        }
    return c;
}

inline double hole_at_k(const RunSet& runs, const std::string& system, const QrelsSet& original,
                        const QrelsSet& augmented, int k) {
    return hole_count(runs, system, original, augmented, k).rate().value_or(0.0);
}

/// Holes among the union of top-k chunks of the given systems.
inline std::set<PairKey> pool_holes(const RunSet& runs, const std::vector<std::string>& systems,
                                    const QrelsSet& original, const QrelsSet& augmented, int k) {
    std::set<PairKey> out;
    for (const auto& s : systems)
        for (const auto& [qid, _] : runs.queries(s))
            for (const auto& cid : runs.top_k(s, qid, static_cast<std::size_t>(k)))
                if (is_hole({qid, cid}, original, augmented))
                    out.insert({qid, cid});
    return out;
}

/// Unbiased seeded permutation of 0..n-1 (Fisher-Yates over mt19937_64 words).
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(p[i - 1], p[static_cast<std::size_t>(r % bound)]);
    }
    return p;
}

/// GR(m) for m = 2..M from the hole counts of nested snapshots C_1..C_M.
inline std::vector<std::optional<double>> growth_rate(const std::vector<std::size_t>& hole_counts) {
    std::vector<std::optional<double>> out;
    for (std::size_t m = 1; m < hole_counts.size(); ++m) {
        if (hole_counts[m] < hole_counts[m - 1])
            throw DataError("hole counts must come from nested snapshots");
        if (hole_counts[m - 1] == 0)
            out.push_back(std::nullopt);
        else
            out.push_back(static_cast<double>(hole_counts[m] - hole_counts[m - 1]) /
                          static_cast<double>(hole_counts[m - 1]));
    }
    return out;
}

struct CurvePoint {
    int m = 0;
    std::optional<double> mean;
    /// Orderings in which the point was defined.
    std::size_t defined = 0;
};

/// GR(m) averaged over `orderings` seeded random orders of the system list.
inline std::vector<CurvePoint> growth_rate_curve(const RunSet& runs, const std::vector<std::string>& systems,
                                                 const QrelsSet& original, const QrelsSet& augmented, int k,
                                                 std::size_t orderings, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> sum(systems.size() > 1 ? systems.size() - 1 : 0, 0.0);
    std::vector<std::size_t> defined(sum.size(), 0);
    for (std::size_t o = 0; o < orderings; ++o) {
        auto perm = seeded_permutation(systems.size(), rng);
        std::vector<std::size_t> counts;
        std::vector<std::string> prefix;
        for (auto idx : perm) {
            prefix.push_back(systems[idx]);
            counts.push_back(pool_holes(runs, prefix, original, augmented, k).size());
        }
        auto gr = growth_rate(counts);
        for (std::size_t i = 0; i < gr.size(); ++i)
            if (gr[i]) {
                sum[i] += *gr[i];
                ++defined[i];
            }
    }
    std::vector<CurvePoint> out;
    for (std::size_t i = 0; i < sum.size(); ++i)
        out.push_back({static_cast<int>(i) + 2,
                       defined[i] ? std::optional<double>(sum[i] / static_cast<double>(defined[i])) : std::nullopt,
                       defined[i]});
    return out;
}

// ---------------------------------------------------------------------------
// Marginal contribution

/// D_A: the original judgments plus augmented labels for chunks in the top-k of
/// any system in A.
inline QrelsSet qrels_for_systems(const RunSet& runs, const std::vector<std::string>& systems,
                                  const QrelsSet& original, const QrelsSet& augmented, int k) {
    QrelsSet d = original;
    for (const auto& s : systems)
        for (const auto& [qid, _] : runs.queries(s))
            for (const auto& cid : runs.top_k(s, qid, static_cast<std::size_t>(k)))
                if (auto e = augmented.find({qid, cid}); e && e->provenance != Provenance::original)
                    d.merge({qid, cid}, e->label, e->provenance);
    return d;
}

/// MC_m(r) = |Perf_{D_{S ∪ {r}}}(r) − Perf_{D_S}(r)|.
inline std::optional<double> marginal_contribution(const RunSet& runs, const std::string& target,
                                                   const std::vector<std::string>& subset, const QrelsSet& original,
                                                   const QrelsSet& augmented, RetrievalMetric metric, int k) {
    if (std::find(subset.begin(), subset.end(), target) != subset.end())
        throw ConfigError("marginal contribution subset must exclude the target system");
    auto with = subset;
    with.push_back(target);
    auto a = system_metric(runs, target, qrels_for_systems(runs, with, original, augmented, k), metric, k).value;
    auto b = system_metric(runs, target, qrels_for_systems(runs, subset, original, augmented, k), metric, k).value;
    if (!a || !b)
        return std::nullopt;
    return std::abs(*a - *b);
}

/// For each seeded ordering, the system joining at position m + 1 is the target
/// and the first m systems form S_m; MC_m is averaged over orderings.
inline std::vector<CurvePoint> marginal_contribution_curve(const RunSet& runs, const std::vector<std::string>& systems,
                                                           const QrelsSet& original, const QrelsSet& augmented,
                                                           RetrievalMetric metric, int k, std::size_t orderings,
                                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t M = systems.size();
    std::vector<double> sum(M > 1 ? M - 1 : 0, 0.0);
    std::vector<std::size_t> defined(sum.size(), 0);
    for (std::size_t o = 0; o < orderings; ++o) {
        auto perm = seeded_permutation(M, rng);
        std::vector<std::string> prefix;
        for (std::size_t m = 1; m < M; ++m) {
            prefix.push_back(systems[perm[m - 1]]);
            auto mc = marginal_contribution(runs, systems[perm[m]], prefix, original, augmented, metric, k);
            if (mc) {
                sum[m - 1] += *mc;
                ++defined[m - 1];
            }
        }
    }
    std::vector<CurvePoint> out;
    for (std::size_t i = 0; i < sum.size(); ++i)
        out.push_back({static_cast<int>(i) + 1,
                       defined[i] ? std::optional<double>(sum[i] / static_cast<double>(defined[i])) : std::nullopt,
                       defined[i]});
    return out;
}

// ---------------------------------------------------------------------------
// Retrieval-generation alignment

namespace detail {

template <typename A, typename B>
void require_same_queries(const std::map<std::string, A>& r, const std::map<std::string, B>& g) {
    std::vector<std::string> missing;
    for (const auto& [q, _] : r)
        if (!g.contains(q))
            missing.push_back(q + " (no generation outcome)");
    for (const auto& [q, _] : g)
        if (!r.contains(q))
            missing.push_back(q + " (no retrieval outcome)");
    if (!missing.empty()) {
        std::string msg = "retrieval and generation outcomes cover different queries:";
        for (const auto& m : missing)
            msg += " " + m;
        throw DataError(msg);
    }
}

} // namespace detail

inline double rag_align_binary(const std::map<std::string, int>& retrieval, const std::map<std::string, int>& generation) {
    detail::require_same_queries(retrieval, generation);
    if (retrieval.empty())
        throw DataError("no queries to align");
    std::size_t agree = 0;
    for (const auto& [q, r] : retrieval) {
        const int g = generation.at(q);
        if ((r != 0 && r != 1) || (g != 0 && g != 1))
            throw DataError("binary outcome expected for query " + q);
        agree += r == g ? 1 : 0;
    }
    return static_cast<double>(agree) / static_cast<double>(retrieval.size());
}

/// Point-biserial correlation; undefined when a group is empty or R has no spread.
inline std::optional<double> rag_align_pointbiserial(const std::map<std::string, double>& retrieval,
                                                     const std::map<std::string, int>& generation) {
    detail::require_same_queries(retrieval, generation);
    const double n = static_cast<double>(retrieval.size());
    double sum1 = 0, sum0 = 0, n1 = 0, n0 = 0, mean = 0;
    for (const auto& [q, r] : retrieval) {
        mean += r;
        if (generation.at(q) == 1) {
            sum1 += r;
            ++n1;
        } else if (generation.at(q) == 0) {
            sum0 += r;
            ++n0;
        } else {
            throw DataError("binary generation outcome expected for query " + q);
        }
    }
    if (n1 == 0 || n0 == 0 || n < 2)
        return std::nullopt;
    mean /= n;
    double ss = 0;
    for (const auto& [_, r] : retrieval)
        ss += (r - mean) * (r - mean);
    const double sd = std::sqrt(ss / (n - 1));
    if (sd == 0.0)
        return std::nullopt;
    return (sum1 / n1 - sum0 / n0) / sd * std::sqrt(n1 * n0 / (n * (n - 1)));
}

// ---------------------------------------------------------------------------
// Ranking shifts

struct RankShift {
    std::string system;
    double original = 0.0;
    double augmented = 0.0;
    int rank_original = 0;
    int rank_augmented = 0;
    /// Positive when the system moves up under the augmented qrels.
    int delta = 0;
};

/// Rows ordered by augmented rank; ranks are 1-based, sorted descending by value
/// with system name as tie-break.
inline std::vector<RankShift> rank_shift_report(const std::map<std::string, double>& original,
                                                const std::map<std::string, double>& augmented) {
    if (original.size() != augmented.size())
        throw DataError("rank shift needs the same systems under both qrels");
    for (const auto& [s, _] : original)
        if (!augmented.contains(s))
            throw DataError("system " + s + " missing under augmented qrels");
    auto ranks = [](const std::map<std::string, double>& v) {
        std::vector<std::pair<std::string, double>> rows(v.begin(), v.end());
        std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        std::map<std::string, int> r;
        for (std::size_t i = 0; i < rows.size(); ++i)
            r[rows[i].first] = static_cast<int>(i) + 1;
        return r;
    };
    auto ro = ranks(original), ra = ranks(augmented);
    std::vector<RankShift> out;
    for (const auto& [s, v] : original)
        out.push_back({s, v, augmented.at(s), ro[s], ra[s], ro[s] - ra[s]});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.rank_augmented < b.rank_augmented; });
    return out;
}

} // namespace qdebate
