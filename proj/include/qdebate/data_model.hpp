#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "qdebate/error.hpp"
#include "qdebate/jsonl.hpp"

namespace qdebate {

using json = nlohmann::json;

/// Binary relevance label. Integer value is the qrels label.
enum class Label : int { irrelevant = 0, relevant = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }
inline Label label_from_int(int v) { return v ? Label::relevant : Label::irrelevant; }
inline std::string_view to_string(Label l) { return l == Label::relevant ? "relevant" : "irrelevant"; }
inline Label label_from_string(std::string_view s) {
    if (s == "relevant") return Label::relevant;
    if (s == "irrelevant") return Label::irrelevant;
    throw DataError("unknown label '" + std::string(s) + "'");
}

struct Query {
    std::string id;
    std::string text;
    std::vector<std::string> answers;
};

struct Chunk {
    std::string id;
    std::string text;
};

/// (query_id, chunk_id): the identity of one assessment unit and of one qrels entry.
struct PairKey {
    std::string query_id;
    std::string chunk_id;

    auto operator<=>(const PairKey&) const = default;
    bool operator==(const PairKey&) const = default;

    std::string str() const { return query_id + "\t" + chunk_id; }
};

inline void to_json(json& j, const PairKey& k) { j = json{{"query_id", k.query_id}, {"chunk_id", k.chunk_id}}; }
inline void from_json(const json& j, PairKey& k) {
    k.query_id = j.at("query_id").get<std::string>();
    k.chunk_id = j.at("chunk_id").get<std::string>();
}

/// Query, its answer set and one candidate chunk, snapshotted at pooling time.
struct Triplet {
    std::string query_id;
    std::string chunk_id;
    std::string query;
    std::vector<std::string> answers;
    std::string chunk;

    PairKey key() const { return {query_id, chunk_id}; }
    bool operator==(const Triplet&) const = default;
};

inline void to_json(json& j, const Triplet& t) {
    j = json{{"query_id", t.query_id}, {"chunk_id", t.chunk_id}, {"query", t.query},
             {"answers", t.answers}, {"chunk", t.chunk}};
}
inline void from_json(const json& j, Triplet& t) {
    t.query_id = j.at("query_id").get<std::string>();
    t.chunk_id = j.at("chunk_id").get<std::string>();
    t.query = j.at("query").get<std::string>();
    t.answers = j.at("answers").get<std::vector<std::string>>();
    t.chunk = j.at("chunk").get<std::string>();
}

struct RunEntry {
    std::string query_id;
    std::string chunk_id;
    int rank = 0;
    double score = 0.0;
    std::string system_tag;

    bool operator==(const RunEntry&) const = default;
};

enum class Provenance { original, automatic, human };

inline std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::original: return "original";
    case Provenance::automatic: return "auto";
    case Provenance::human: return "human";
    }
    return "?";
}

inline Provenance provenance_from_string(std::string_view s) {
    if (s == "original") return Provenance::original;
    if (s == "auto") return Provenance::automatic;
    if (s == "human") return Provenance::human;
    throw DataError("unknown provenance '" + std::string(s) + "'");
}

struct QrelsEntry {
    int label = 0;
    Provenance provenance = Provenance::original;
    bool operator==(const QrelsEntry&) const = default;
};

/// Binary relevance judgments keyed by query then chunk, with provenance per entry.
class QrelsSet {
public:
    using ChunkMap = std::map<std::string, QrelsEntry>;

    void set(const PairKey& key, QrelsEntry entry) {
        if (entry.label != 0 && entry.label != 1)
            throw DataError("qrels label must be 0 or 1 for " + key.str());
        by_query_[key.query_id][key.chunk_id] = entry;
    }

    /// Inserts a non-original label unless a stronger entry exists. Original entries
    /// are never overwritten; human beats auto. Returns true if the set changed.
    bool merge(const PairKey& key, int label, Provenance prov) {
        auto existing = find(key);
        if (existing) {
            if (existing->provenance == Provenance::original)
                return false;
            if (rank(existing->provenance) > rank(prov))
                return false;
            if (rank(existing->provenance) == rank(prov) && existing->label == label)
                return false;
        }
        set(key, {label, prov});
        return true;
    }

    std::optional<QrelsEntry> find(const PairKey& key) const {
        auto q = by_query_.find(key.query_id);
        if (q == by_query_.end())
            return std::nullopt;
        auto c = q->second.find(key.chunk_id);
        if (c == q->second.end())
            return std::nullopt;
        return c->second;
    }

    bool is_relevant(const std::string& query_id, const std::string& chunk_id) const {
        auto e = find({query_id, chunk_id});
        return e && e->label == 1;
    }

    bool has_query(const std::string& query_id) const { return by_query_.contains(query_id); }

    /// Number of label-1 entries for a query.
    std::size_t relevant_count(const std::string& query_id) const {
        auto q = by_query_.find(query_id);
        if (q == by_query_.end())
            return 0;
        return static_cast<std::size_t>(std::count_if(q->second.begin(), q->second.end(),
                                                       [](const auto& kv) { return kv.second.label == 1; }));
    }

    const ChunkMap* chunks(const std::string& query_id) const {
        auto q = by_query_.find(query_id);
        return q == by_query_.end() ? nullptr : &q->second;
    }

    const std::map<std::string, ChunkMap>& queries() const { return by_query_; }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& [_, m] : by_query_)
            n += m.size();
        return n;
    }

    template <typename F>
    void for_each(F&& f) const {
        for (const auto& [q, m] : by_query_)
            for (const auto& [c, e] : m)
                f(PairKey{q, c}, e);
    }

    bool operator==(const QrelsSet&) const = default;

private:
    static int rank(Provenance p) {
        switch (p) {
        case Provenance::original: return 3;
        case Provenance::human: return 2;
        case Provenance::automatic: return 1;
        }
        return 0;
    }

    std::map<std::string, ChunkMap> by_query_;
};

// ---------------------------------------------------------------------------
// Whitespace tokenizing shared by the TREC parsers.

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
            ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r')
            ++j;
        if (j > i)
            out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        return std::nullopt;
    return v;
}

inline std::string format_score(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

} // namespace detail

// ---------------------------------------------------------------------------
// TREC run files: `qid Q0 docid rank score tag`

inline std::vector<RunEntry> parse_run_file(std::istream& in) {
    std::vector<RunEntry> out;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    std::set<std::tuple<std::string, std::string, int>> seen_rank;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto cols = detail::split_ws(line);
        if (cols.empty())
            continue;
        if (cols.size() != 6)
            throw ParseError(lineno, "expected 6 columns, found " + std::to_string(cols.size()));
        auto rank = detail::parse_number<int>(cols[3]);
        if (!rank || *rank < 1)
            throw ParseError(lineno, "rank must be a positive integer: '" + std::string(cols[3]) + "'");
        auto score = detail::parse_number<double>(cols[4]);
        if (!score)
            throw ParseError(lineno, "score is not a real number: '" + std::string(cols[4]) + "'");
        RunEntry e{std::string(cols[0]), std::string(cols[2]), *rank, *score, std::string(cols[5])};
        if (!seen.emplace(e.system_tag, e.query_id, e.chunk_id).second)
            throw ParseError(lineno, "duplicate (system, query, chunk) " + e.system_tag + "/" + e.query_id + "/" +
                                         e.chunk_id);
        if (!seen_rank.emplace(e.system_tag, e.query_id, e.rank).second)
            throw ParseError(lineno, "duplicate rank " + std::to_string(e.rank) + " for " + e.system_tag + "/" +
                                         e.query_id);
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_run_file(std::ostream& out, const std::vector<RunEntry>& entries) {
    for (const auto& e : entries)
        out << e.query_id << " Q0 " << e.chunk_id << ' ' << e.rank << ' ' << detail::format_score(e.score) << ' '
            << e.system_tag << '\n';
}

/// Per-system ranked lists, indexed system -> query -> entries sorted by rank.
class RunSet {
public:
    using RankedList = std::vector<RunEntry>;

    RunSet() = default;

    explicit RunSet(const std::vector<RunEntry>& entries) { add(entries); }

    /// Adds entries and re-validates: within one (system, query) the ranks must be
    /// exactly 1..n and chunk ids distinct.
    void add(const std::vector<RunEntry>& entries) {
        for (const auto& e : entries)
            systems_[e.system_tag][e.query_id].push_back(e);
        for (auto& [sys, queries] : systems_) {
            for (auto& [qid, list] : queries) {
                std::sort(list.begin(), list.end(), [](const RunEntry& a, const RunEntry& b) { return a.rank < b.rank; });
                std::set<std::string> ids;
                for (std::size_t i = 0; i < list.size(); ++i) {
                    if (list[i].rank != static_cast<int>(i + 1))
                        throw DataError("run " + sys + "/" + qid + ": ranks are not 1..n (found rank " +
                                        std::to_string(list[i].rank) + " at position " + std::to_string(i + 1) + ")");
                    if (!ids.insert(list[i].chunk_id).second)
                        throw DataError("run " + sys + "/" + qid + ": duplicate chunk " + list[i].chunk_id);
                }
            }
        }
    }

    std::vector<std::string> system_names() const {
        std::vector<std::string> out;
        for (const auto& [s, _] : systems_)
            out.push_back(s);
        return out;
    }

    bool has_system(const std::string& s) const { return systems_.contains(s); }

    const std::map<std::string, RankedList>& queries(const std::string& system) const {
        static const std::map<std::string, RankedList> empty;
        auto it = systems_.find(system);
        return it == systems_.end() ? empty : it->second;
    }

    /// Chunk ids at rank <= k for (system, query); empty when the system has no list.
    std::vector<std::string> top_k(const std::string& system, const std::string& query_id, std::size_t k) const {
        std::vector<std::string> out;
        auto s = systems_.find(system);
        if (s == systems_.end())
            return out;
        auto q = s->second.find(query_id);
        if (q == s->second.end())
            return out;
        for (const auto& e : q->second) {
            if (static_cast<std::size_t>(e.rank) > k)
                break;
            out.push_back(e.chunk_id);
        }
        return out;
    }

    /// All query ids with at least one list in any system.
    std::set<std::string> query_ids() const {
        std::set<std::string> out;
        for (const auto& [_, qs] : systems_)
            for (const auto& [q, __] : qs)
                out.insert(q);
        return out;
    }

    std::vector<RunEntry> entries() const {
        std::vector<RunEntry> out;
        for (const auto& [_, qs] : systems_)
            for (const auto& [__, list] : qs)
                out.insert(out.end(), list.begin(), list.end());
        return out;
    }

private:
    std::map<std::string, std::map<std::string, RankedList>> systems_;
};

/// Loads one run file, or every regular file of a directory in name order.
inline RunSet load_runs(const std::vector<std::filesystem::path>& paths) {
    std::vector<std::filesystem::path> files;
    for (const auto& p : paths) {
        if (std::filesystem::is_directory(p)) {
            std::vector<std::filesystem::path> dir;
            for (const auto& de : std::filesystem::directory_iterator(p))
                if (de.is_regular_file())
                    dir.push_back(de.path());
            std::sort(dir.begin(), dir.end());
            files.insert(files.end(), dir.begin(), dir.end());
        } else {
            files.push_back(p);
        }
    }
    std::vector<RunEntry> all;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in)
            throw DataError("cannot open run file " + f.string());
        std::vector<RunEntry> entries;
        try {
            entries = parse_run_file(in);
        } catch (const ParseError& e) {
            throw DataError(f.string() + ": " + e.what());
        }
        for (auto& e : entries) {
            if (!seen.emplace(e.system_tag, e.query_id, e.chunk_id).second)
                throw DataError(f.string() + ": duplicate (system, query, chunk) across files: " + e.system_tag + "/" +
                                e.query_id + "/" + e.chunk_id);
            all.push_back(std::move(e));
        }
    }
    return RunSet(all);
}

// ---------------------------------------------------------------------------
// TREC binary qrels: `qid 0 docid rel`

inline QrelsSet parse_qrels(std::istream& in) {
    QrelsSet out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto cols = detail::split_ws(line);
        if (cols.empty())
            continue;
        if (cols.size() != 4)
            throw ParseError(lineno, "expected 4 columns, found " + std::to_string(cols.size()));
        auto rel = detail::parse_number<int>(cols[3]);
        if (!rel)
            throw ParseError(lineno, "relevance is not an integer: '" + std::string(cols[3]) + "'");
        if (*rel != 0 && *rel != 1)
            throw ParseError(lineno, "graded relevance " + std::to_string(*rel) + " not supported (labels are 0/1)");
        PairKey key{std::string(cols[0]), std::string(cols[2])};
        if (auto prev = out.find(key)) {
            if (prev->label != *rel)
                throw ParseError(lineno, "conflicting labels for " + key.query_id + "/" + key.chunk_id);
            continue;
        }
        out.set(key, {*rel, Provenance::original});
    }
    return out;
}

inline QrelsSet load_qrels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open qrels " + path.string());
    try {
        return parse_qrels(in);
    } catch (const ParseError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline void write_qrels(std::ostream& out, const QrelsSet& q) {
    q.for_each([&](const PairKey& k, const QrelsEntry& e) {
        out << k.query_id << " 0 " << k.chunk_id << ' ' << e.label << '\n';
    });
}

// ---------------------------------------------------------------------------
// Corpus and query sets (line-delimited JSON records).

class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Chunk> chunks) {
        for (auto& c : chunks)
            add(std::move(c));
    }

    void add(Chunk c) {
        if (c.id.empty())
            throw DataError("chunk with empty id");
        if (c.text.empty())
            throw DataError("chunk " + c.id + " has empty text");
        if (!index_.emplace(c.id, chunks_.size()).second)
            throw DataError("duplicate chunk id " + c.id);
        chunks_.push_back(std::move(c));
    }

    const Chunk* find(const std::string& id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &chunks_[it->second];
    }

    std::size_t size() const { return chunks_.size(); }
    const std::vector<Chunk>& all() const { return chunks_; }

private:
    std::vector<Chunk> chunks_;
    std::unordered_map<std::string, std::size_t> index_;
};

class QuerySet {
public:
    QuerySet() = default;
    explicit QuerySet(std::vector<Query> qs) {
        for (auto& q : qs)
            add(std::move(q));
    }

    void add(Query q) {
        if (q.id.empty())
            throw DataError("query with empty id");
        if (q.answers.empty())
            throw DataError("query " + q.id + " has no answers");
        if (!index_.emplace(q.id, queries_.size()).second)
            throw DataError("duplicate query id " + q.id);
        queries_.push_back(std::move(q));
    }

    const Query* find(const std::string& id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &queries_[it->second];
    }

    std::size_t size() const { return queries_.size(); }
    const std::vector<Query>& all() const { return queries_; }

private:
    std::vector<Query> queries_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline Corpus parse_corpus(std::istream& in) {
    Corpus c;
    std::size_t lineno = 0;
    for (const auto& r : jsonl::read(in)) {
        ++lineno;
        try {
            c.add(Chunk{r.at("id").get<std::string>(), r.at("text").get<std::string>()});
        } catch (const json::exception& e) {
            throw ParseError(lineno, std::string("bad corpus record: ") + e.what());
        }
    }
    return c;
}

inline QuerySet parse_queries(std::istream& in) {
    QuerySet qs;
    std::size_t lineno = 0;
    for (const auto& r : jsonl::read(in)) {
        ++lineno;
        try {
            qs.add(Query{r.at("id").get<std::string>(), r.at("text").get<std::string>(),
                         r.at("answers").get<std::vector<std::string>>()});
        } catch (const json::exception& e) {
            throw ParseError(lineno, std::string("bad query record: ") + e.what());
        }
    }
    return qs;
}

inline Corpus load_corpus(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in)
        throw DataError("cannot open corpus " + p.string());
    return parse_corpus(in);
}

inline QuerySet load_queries(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in)
        throw DataError("cannot open queries " + p.string());
    return parse_queries(in);
}

// ---------------------------------------------------------------------------
// Pooling

/// Union over systems of the chunks at rank <= k, one triplet per (query, chunk),
/// ordered by query id then chunk id.
inline std::vector<Triplet> build_pool(const RunSet& runs, const QuerySet& queries, const Corpus& corpus,
                                       std::size_t k = 10) {
    if (k < 1)
        throw ConfigError("pool depth k must be >= 1");
    std::set<PairKey> keys;
    std::set<std::string> missing_queries, missing_chunks;
    for (const auto& sys : runs.system_names()) {
        for (const auto& [qid, list] : runs.queries(sys)) {
            if (!queries.find(qid))
                missing_queries.insert(qid);
            for (const auto& e : list) {
                if (static_cast<std::size_t>(e.rank) > k)
                    break;
                if (!corpus.find(e.chunk_id))
                    missing_chunks.insert(e.chunk_id);
                keys.insert({qid, e.chunk_id});
            }
        }
    }
    if (!missing_queries.empty() || !missing_chunks.empty()) {
        std::string msg = "unresolvable ids in runs:";
        if (!missing_queries.empty()) {
            msg += " queries [";
            for (const auto& q : missing_queries)
                msg += (msg.back() == '[' ? "" : ", ") + q;
            msg += "]";
        }
        if (!missing_chunks.empty()) {
            msg += " chunks [";
            for (const auto& c : missing_chunks)
                msg += (msg.back() == '[' ? "" : ", ") + c;
            msg += "]";
        }
        throw DataError(msg);
    }
    std::vector<Triplet> pool;
    pool.reserve(keys.size());
    for (const auto& key : keys) {
        const Query* q = queries.find(key.query_id);
        const Chunk* c = corpus.find(key.chunk_id);
        pool.push_back(Triplet{key.query_id, key.chunk_id, q->text, q->answers, c->text});
    }
    return pool;
}

inline std::vector<Triplet> load_pool(const std::filesystem::path& p) {
    std::vector<Triplet> out;
    std::set<PairKey> seen;
    for (const auto& r : jsonl::read_file(p)) {
        auto t = r.get<Triplet>();
        if (t.answers.empty())
            throw DataError("triplet " + t.key().str() + " has no answers");
        if (!seen.insert(t.key()).second)
            throw DataError("duplicate triplet " + t.key().str() + " in " + p.string());
        out.push_back(std::move(t));
    }
    return out;
}

inline void save_pool(const std::filesystem::path& p, const std::vector<Triplet>& pool) {
    std::vector<json> recs;
    recs.reserve(pool.size());
    for (const auto& t : pool)
        recs.emplace_back(t);
    jsonl::write_file(p, recs);
}

/// One uniformly drawn candidate per query (seeded), in query-id order.
inline std::vector<Triplet> sample_one_per_query(const std::vector<Triplet>& pool, std::uint64_t seed) {
    std::map<std::string, std::vector<const Triplet*>> by_query;
    for (const auto& t : pool)
        by_query[t.query_id].push_back(&t);
    std::mt19937_64 rng(seed);
    std::vector<Triplet> out;
    for (const auto& [_, cands] : by_query) {
        // Unbiased index draw without relying on distribution implementations.
        const std::uint64_t n = cands.size();
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        out.push_back(*cands[r % n]);
    }
    return out;
}

} // namespace qdebate
