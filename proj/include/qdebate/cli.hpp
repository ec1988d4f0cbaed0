#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "qdebate/adjudication.hpp"
#include "qdebate/config.hpp"
#include "qdebate/data_model.hpp"
#include "qdebate/debate.hpp"
#include "qdebate/gateway.hpp"
#include "qdebate/generation.hpp"
#include "qdebate/http_transport.hpp"
#include "qdebate/metrics.hpp"
#include "qdebate/prefilter.hpp"
#include "qdebate/server.hpp"

namespace qdebate::cli {

namespace fs = std::filesystem;

/// Holds the parsed flags of every subcommand.
struct Options {
    std::string config;
    std::string workspace;
    // pool
    std::vector<std::string> runs;
    std::optional<int> k;
    std::string out;
    bool sample = false;
    // filter / debate / audit
    std::string pool;
    bool skip = false;
    bool resume = false;
    std::optional<int> max_rounds;
    std::optional<int> workers;
    std::size_t limit = 0;
    std::string audit_kind = "swap";
    int audit_rounds = 5;
    // serve
    std::optional<std::string> host;
    std::optional<int> port;
    std::string static_dir;
    // export
    bool partial = false;
    // evaluate / report
    std::string metric = "hit";
    std::string mc_metric = "hit";
    std::string qrels;
    std::string truth;
    std::string system;
    std::string generation;
    std::optional<std::size_t> orderings;
    std::optional<std::uint64_t> seed;
};

inline std::shared_ptr<spdlog::logger> log() {
    static auto l = [] {
        auto lg = spdlog::stderr_color_mt("qdebate");
        lg->set_pattern("[%l] %v");
        return lg;
    }();
    return l;
}

/// Flags override config values; each override is logged.
template <typename T, typename U>
void override_with(const char* flag, const std::optional<T>& value, U& target) {
    if (value) {
        log()->info("--{} overrides the config value", flag);
        target = static_cast<U>(*value);
    }
}

struct Context {
    PipelineConfig cfg;
    WorkspacePaths ws;
};

inline Context load_context(const Options& o) {
    Context c{load_config(o.config), {}};
    if (!o.workspace.empty()) {
        log()->info("--workspace overrides the config value");
        c.cfg.workspace = o.workspace;
    }
    c.ws.root = c.cfg.workspace;
    fs::create_directories(c.ws.root);
    return c;
}

inline std::unique_ptr<Gateway> make_gateway(const PipelineConfig& cfg) {
    return std::make_unique<Gateway>(std::make_shared<RoutingTransport>(), cfg.gateway);
}

inline void write_json(const fs::path& p, const json& j) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

inline void report_usage(const Gateway& gw, std::size_t samples, const fs::path& path) {
    json per_agent = json::object();
    for (const auto& [name, u] : gw.usage_by_agent())
        per_agent[name] = u;
    const auto total = gw.total_usage();
    json j{{"calls", gw.call_count()}, {"total", total}, {"per_agent", per_agent}, {"samples", samples}};
    if (samples) {
        const double n = static_cast<double>(samples);
        j["per_sample"] = {{"latency_seconds", total.latency_seconds / n},
                           {"cost", total.cost ? json(*total.cost / n) : json(nullptr)},
                           {"input_tokens", static_cast<double>(total.input_tokens) / n},
                           {"output_tokens", static_cast<double>(total.output_tokens) / n}};
    }
    write_json(path, j);
    log()->info("{} LLM calls, {} input / {} output tokens, cost {}", gw.call_count(), total.input_tokens,
                total.output_tokens, total.cost ? std::to_string(*total.cost) : std::string("unknown"));
}

inline std::vector<Triplet> default_debate_pool(const Context& c, const std::string& flag) {
    if (!flag.empty())
        return load_pool(flag);
    if (fs::exists(c.ws.filtered()))
        return load_pool(c.ws.filtered());
    if (fs::exists(c.ws.pool()))
        return load_pool(c.ws.pool());
    throw DataError("no pool in workspace; run `pool` first");
}

/// Original qrels plus a loaded augmented file whose new entries are marked non-original.
inline QrelsSet load_augmented(const QrelsSet& original, const fs::path& path) {
    if (!fs::exists(path))
        throw DataError("augmented qrels not found at " + path.string() + "; run `export` first");
    QrelsSet out = original;
    load_qrels(path).for_each([&](const PairKey& k, const QrelsEntry& e) {
        if (!original.find(k))
            out.merge(k, e.label, Provenance::automatic);
    });
    return out;
}

inline std::vector<Triplet> gold_pairs(const PipelineConfig& cfg, const QrelsSet& original) {
    auto corpus = load_corpus(cfg.corpus);
    auto queries = load_queries(cfg.queries);
    std::vector<Triplet> gold;
    original.for_each([&](const PairKey& k, const QrelsEntry& e) {
        if (e.label != 1)
            return;
        auto q = queries.find(k.query_id);
        auto ch = corpus.find(k.chunk_id);
        if (q && ch)
            gold.push_back({k.query_id, k.chunk_id, q->text, q->answers, ch->text});
    });
    return gold;
}

inline ExportResult build_export(const Context& c, AdjudicationStore& store, bool partial) {
    auto original = load_qrels(c.cfg.qrels);
    auto outcomes = read_transcript_log(c.ws.transcripts()).completed;
    return export_qrels(original, outcomes, store.items(), partial);
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_pool(const Options& o) {
    auto c = load_context(o);
    WorkspaceLock lock(c.ws.lock());
    int k = c.cfg.k;
    override_with("k", o.k, k);
    std::vector<fs::path> run_paths = c.cfg.runs;
    if (!o.runs.empty()) {
        log()->info("--runs overrides the config value");
        run_paths.assign(o.runs.begin(), o.runs.end());
    }
    auto runs = load_runs(run_paths);
    auto pool = build_pool(runs, load_queries(c.cfg.queries), load_corpus(c.cfg.corpus), k);
    if (o.sample) {
        pool = sample_one_per_query(pool, c.cfg.sample_seed);
        log()->info("sampled one candidate per query (seed {})", c.cfg.sample_seed);
    }
    fs::path out = o.out.empty() ? c.ws.pool() : fs::path(o.out);
    save_pool(out, pool);
    log()->info("{} systems, k={}: {} pooled triplets -> {}", runs.system_names().size(), k, pool.size(), out.string());
    return 0;
}

inline int cmd_filter(const Options& o) {
    auto c = load_context(o);
    WorkspaceLock lock(c.ws.lock());
    auto pool = load_pool(o.pool.empty() ? c.ws.pool() : fs::path(o.pool));
    fs::path out = o.out.empty() ? c.ws.filtered() : fs::path(o.out);
    if (o.skip) {
        save_pool(out, pool);
        log()->info("filtering skipped: {} triplets copied to {}", pool.size(), out.string());
        return 0;
    }
    auto gw = make_gateway(c.cfg);
    int workers = c.cfg.workers;
    override_with("workers", o.workers, workers);
    auto r = filter_pool(*gw, pool, c.cfg.rosters.filter, c.ws.filter_audit(), workers);
    save_pool(out, r.kept);
    std::size_t errors = 0;
    for (const auto& v : r.verdicts)
        errors += v.errors.size();
    log()->info("filter: {} in, {} kept, {} discarded ({} model errors kept fail-open)", pool.size(), r.kept.size(),
                r.discarded(), errors);
    report_usage(*gw, pool.size(), c.ws.reports() / "usage_filter.json");
    write_json(c.ws.reports() / "filter_summary.json",
               {{"in", pool.size()}, {"kept", r.kept.size()}, {"discarded", r.discarded()}, {"model_errors", errors}});
    return 0;
}

inline json debate_summary(const std::vector<AssessmentOutcome>& outcomes, int max_rounds) {
    std::vector<std::size_t> by_round(static_cast<std::size_t>(max_rounds), 0);
    std::size_t escalated = 0, malformed = 0;
    for (const auto& o : outcomes) {
        if (o.escalated()) {
            ++escalated;
            malformed += o.transcript.status == DebateStatus::malformed ? 1 : 0;
        } else if (o.round >= 1 && o.round <= max_rounds) {
            ++by_round[static_cast<std::size_t>(o.round - 1)];
        }
    }
    return json{{"total", outcomes.size()},
                {"consensus_by_round", by_round},
                {"escalated", escalated},
                {"force_escalated_malformed", malformed},
                {"escalation_ratio", outcomes.empty() ? 0.0 : static_cast<double>(escalated) / static_cast<double>(outcomes.size())}};
}

inline int cmd_debate(const Options& o) {
    auto c = load_context(o);
    WorkspaceLock lock(c.ws.lock());
    auto pool = default_debate_pool(c, o.pool);
    DebateConfig dcfg = c.cfg.debate;
    override_with("max-rounds", o.max_rounds, dcfg.max_rounds);
    int workers = c.cfg.workers;
    override_with("workers", o.workers, workers);
    auto gw = make_gateway(c.cfg);
    BatchOptions bo;
    bo.log_path = c.ws.transcripts();
    bo.resume = o.resume;
    bo.workers = workers;
    bo.max_new_outcomes = o.limit;
    auto r = run_batch(*gw, pool, dcfg, bo);
    log()->info("debate: {} debated now, {} already done, {} of {} complete", r.newly_debated, r.skipped,
                r.outcomes.size(), pool.size());
    auto summary = debate_summary(r.outcomes, dcfg.max_rounds);
    log()->info("escalation ratio {:.4f} ({} of {})", r.escalation_ratio(), r.escalated(), r.outcomes.size());
    write_json(c.ws.reports() / "debate_summary.json", summary);
    report_usage(*gw, r.newly_debated, c.ws.reports() / "usage_debate.json");

    AdjudicationStore store(c.cfg.adjudication, c.ws.adjudication());
    auto added = store.enqueue(r.outcomes, pool);
    log()->info("{} escalations queued for adjudication", added);
    if (r.interrupted)
        log()->warn("batch stopped early; rerun with --resume to continue");
    return 0;
}

inline int cmd_audit(const Options& o) {
    auto c = load_context(o);
    WorkspaceLock lock(c.ws.lock());
    auto pool = default_debate_pool(c, o.pool);
    if (o.limit && pool.size() > o.limit)
        pool.resize(o.limit);
    auto gw = make_gateway(c.cfg);
    json out;
    if (o.audit_kind == "swap") {
        auto m = stance_swap_audit(*gw, pool, c.cfg.debate);
        out = {{"kind", "stance_swap"},
               {"matrix", {{m.counts[0][0], m.counts[0][1]}, {m.counts[1][0], m.counts[1][1]}}},
               {"rows", "relevant-first [irrelevant, relevant]"},
               {"columns", "irrelevant-first [irrelevant, relevant]"},
               {"total", m.total()},
               {"identical", m.identical()},
               {"identity_rate", m.identity_rate()},
               {"relevant_to_irrelevant", m.relevant_to_irrelevant()},
               {"irrelevant_to_relevant", m.irrelevant_to_relevant()}};
    } else if (o.audit_kind == "persistence") {
        auto rep = persistence_audit(*gw, pool, c.cfg.debate, o.audit_rounds);
        json pts = json::array();
        for (const auto& p : rep.points)
            pts.push_back({{"round", p.round}, {"persisted", p.persisted}, {"ratio", p.ratio}});
        out = {{"kind", "persistence"}, {"round1_consensus", rep.round1_consensus}, {"points", pts}};
    } else {
        throw ConfigError("--kind must be swap or persistence");
    }
    write_json(c.ws.reports() / ("audit_" + o.audit_kind + ".json"), out);
    report_usage(*gw, pool.size(), c.ws.reports() / ("usage_audit_" + o.audit_kind + ".json"));
    std::cout << out.dump(2) << '\n';
    return 0;
}

inline int cmd_serve(const Options& o) {
    auto c = load_context(o);
    WorkspaceLock lock(c.ws.lock());
    std::string host = c.cfg.host;
    int port = c.cfg.port;
    override_with("host", o.host, host);
    override_with("port", o.port, port);
    fs::path static_dir = c.cfg.static_dir;
    if (!o.static_dir.empty())
        static_dir = o.static_dir;
    AdjudicationStore store(c.cfg.adjudication, c.ws.adjudication());
    auto original = load_qrels(c.cfg.qrels);
    store.set_attention_pool(gold_pairs(c.cfg, original));
    AdjudicationServer server(store, [&](bool partial) { return build_export(c, store, partial); }, static_dir);
    auto p = store.progress();
    log()->info("serving {} escalations ({} open) on http://{}:{}", p.open + p.in_progress + p.resolved, p.open, host,
                port);
    if (!server.listen(host, port))
        throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
    return 0;
}

inline int cmd_adjudicate_llm(const Options& o) {
    auto c = load_context(o);
    WorkspaceLock lock(c.ws.lock());
    AdjudicationStore store(c.cfg.adjudication, c.ws.adjudication());
    auto gw = make_gateway(c.cfg);
    const auto& agent = c.cfg.rosters.adjudicator.front();
    std::size_t labeled = 0, left_open = 0, seen = 0;
    for (const auto& it : store.items()) {
        if (it.status == ItemStatus::resolved)
            continue;
        if (o.limit && seen >= o.limit)
            break;
        ++seen;
        if (store.adjudicate_llm(*gw, it.id, agent))
            ++labeled;
        else
            ++left_open;
    }
    log()->info("LLM adjudicator {}: {} items labeled, {} left open for humans", agent.name, labeled, left_open);
    report_usage(*gw, seen, c.ws.reports() / "usage_adjudicate_llm.json");
    return 0;
}

inline int cmd_export(const Options& o) {
    auto c = load_context(o);
    WorkspaceLock lock(c.ws.lock());
    AdjudicationStore store(c.cfg.adjudication, c.ws.adjudication());
    auto r = build_export(c, store, o.partial);
    fs::path out = o.out.empty() ? c.ws.augmented_qrels() : fs::path(o.out);
    {
        std::ofstream os(out, std::ios::trunc);
        if (!os)
            throw DataError("cannot write " + out.string());
        write_qrels(os, r.augmented);
    }
    write_hole_report(c.ws.holes(), r.holes);
    std::vector<json> conflicts;
    for (const auto& x : r.conflicts)
        conflicts.push_back({{"query_id", x.key.query_id},
                             {"chunk_id", x.key.chunk_id},
                             {"original", x.original_label},
                             {"proposed", x.proposed_label},
                             {"provenance", to_string(x.provenance)}});
    jsonl::write_file(c.ws.conflicts(), conflicts);
    for (const auto& x : r.conflicts)
        log()->warn("conflict kept original label {} for {} {} ({} proposed {})", x.original_label, x.key.query_id,
                    x.key.chunk_id, to_string(x.provenance), x.proposed_label);
    log()->info("export: {} entries, {} holes, {} conflicts, {} unresolved -> {}", r.augmented.size(), r.holes.size(),
                r.conflicts.size(), r.unresolved.size(), out.string());
    return 0;
}

inline void emit(const Context& c, const std::string& name, const std::vector<MetricReport>& rows, const std::string& out) {
    std::vector<json> recs(rows.begin(), rows.end());
    jsonl::write_file(out.empty() ? c.ws.reports() / (name + ".jsonl") : fs::path(out), recs);
    std::cout << render_table(rows);
}

inline int cmd_evaluate(const Options& o) {
    auto c = load_context(o);
    int k = c.cfg.k;
    override_with("k", o.k, k);
    std::size_t orderings = c.cfg.orderings;
    override_with("orderings", o.orderings, orderings);
    std::uint64_t seed = c.cfg.ordering_seed;
    override_with("seed", o.seed, seed);
    const auto original = load_qrels(c.cfg.qrels);
    auto runs = load_runs(c.cfg.runs);
    const auto systems = runs.system_names();
    auto augmented = [&] { return load_augmented(original, c.ws.augmented_qrels()); };
    const std::string ds = c.cfg.dataset;
    std::vector<MetricReport> rows;

    if (o.metric == "hit" || o.metric == "ndcg" || o.metric == "recall") {
        const auto m = retrieval_metric_from_string(o.metric);
        std::vector<std::pair<std::string, QrelsSet>> versions;
        if (!o.qrels.empty()) {
            versions.emplace_back(fs::path(o.qrels).filename().string(), load_qrels(o.qrels));
        } else {
            versions.emplace_back("original", original);
            if (fs::exists(c.ws.augmented_qrels()))
                versions.emplace_back("augmented", augmented());
        }
        for (const auto& [tag, q] : versions)
            for (const auto& s : systems) {
                auto r = system_metric(runs, s, q, m, k, ds.empty() ? tag : ds + "/" + tag);
                rows.push_back(r);
            }
    } else if (o.metric == "hole") {
        auto aug = augmented();
        for (const auto& s : systems) {
            auto hc = hole_count(runs, s, original, aug, k);
            rows.push_back({"hole@k", k, s, ds, hc.rate(), hc.positions, 0, std::nullopt, {}});
        }
        double sum = 0;
        for (const auto& r : rows)
            sum += r.value.value_or(0.0);
        rows.push_back({"hole@k", k, "mean", ds, rows.empty() ? std::nullopt : std::optional<double>(sum / static_cast<double>(rows.size())),
                        rows.size(), 0, std::nullopt, {}});
    } else if (o.metric == "growth") {
        auto aug = augmented();
        for (const auto& p : growth_rate_curve(runs, systems, original, aug, k, orderings, seed))
            rows.push_back({"growth_rate", k, "m=" + std::to_string(p.m), ds, p.mean, p.defined, orderings - p.defined,
                            seed, {}});
    } else if (o.metric == "mc") {
        auto aug = augmented();
        auto m = retrieval_metric_from_string(o.mc_metric);
        for (const auto& p : marginal_contribution_curve(runs, systems, original, aug, m, k, orderings, seed))
            rows.push_back({"mc_" + o.mc_metric, k, "m=" + std::to_string(p.m), ds, p.mean, p.defined,
                            orderings - p.defined, seed, {}});
    } else if (o.metric == "labeling") {
        if (o.truth.empty())
            throw ConfigError("--truth <qrels> is required for --metric labeling");
        auto truth = load_qrels(o.truth);
        std::vector<LabelComparison> cs;
        for (const auto& out : read_transcript_log(c.ws.transcripts()).completed)
            if (auto t = truth.find(out.key()))
                cs.push_back({out.label, label_from_int(t->label), out.escalated()});
        auto q = labeling_quality(cs);
        const std::size_t judged = q.total - q.escalated;
        rows.push_back({"recall_relevant", std::nullopt, {}, ds, q.recall_relevant, judged, 0, std::nullopt, {}});
        rows.push_back({"recall_irrelevant", std::nullopt, {}, ds, q.recall_irrelevant, judged, 0, std::nullopt, {}});
        rows.push_back({"bacc", std::nullopt, {}, ds, q.bacc, judged, 0, std::nullopt, {}});
        rows.push_back({"escalation_ratio", std::nullopt, {}, ds, q.escalation_ratio, q.total, 0, std::nullopt, {}});
    } else if (o.metric == "ragalign") {
        if (o.system.empty() || !runs.has_system(o.system))
            throw ConfigError("--system must name a system present in the runs");
        const QrelsSet q = o.qrels.empty() ? (fs::exists(c.ws.augmented_qrels()) ? augmented() : original)
                                           : load_qrels(o.qrels);
        std::map<std::string, int> gen;
        if (!o.generation.empty()) {
            for (const auto& r : jsonl::read_file(o.generation))
                gen[r.at("query_id").get<std::string>()] = r.at("outcome").get<int>();
        } else {
            auto gw = make_gateway(c.cfg);
            auto corpus = load_corpus(c.cfg.corpus);
            auto queries = load_queries(c.cfg.queries);
            std::vector<json> recs;
            for (const auto& [qid, _] : runs.queries(o.system)) {
                auto query = queries.find(qid);
                if (!query)
                    throw DataError("run query " + qid + " not in query set");
                std::vector<std::string> ctx;
                for (const auto& cid : runs.top_k(o.system, qid, static_cast<std::size_t>(k))) {
                    auto ch = corpus.find(cid);
                    if (!ch)
                        throw DataError("run chunk " + cid + " not in corpus");
                    ctx.push_back(ch->text);
                }
                auto answer = generate_answer(*gw, c.cfg.rosters.generator.front(), query->text, ctx);
                auto verdict = judge_generation(*gw, c.cfg.rosters.judge.front(), query->text, query->answers, answer);
                if (!verdict) {
                    log()->warn("judge verdict undefined for query {}; excluded", qid);
                    continue;
                }
                gen[qid] = *verdict;
                recs.push_back({{"query_id", qid}, {"answer", answer}, {"outcome", *verdict}});
            }
            jsonl::write_file(c.ws.reports() / ("generation_" + o.system + ".jsonl"), recs);
            report_usage(*gw, recs.size(), c.ws.reports() / ("usage_generation_" + o.system + ".json"));
        }
        std::map<std::string, int> hit;
        std::map<std::string, double> ndcg;
        for (const auto& [qid, s] : per_query_scores(runs, o.system, q, RetrievalMetric::hit, k))
            if (gen.contains(qid))
                hit[qid] = static_cast<int>(s.value.value_or(0.0));
        for (const auto& [qid, s] : per_query_scores(runs, o.system, q, RetrievalMetric::ndcg, k))
            if (gen.contains(qid) && s.value)
                ndcg[qid] = *s.value;
        std::map<std::string, int> gen_ndcg;
        for (const auto& [qid, _] : ndcg)
            gen_ndcg[qid] = gen.at(qid);
        for (auto it = gen.begin(); it != gen.end();)
            it = hit.contains(it->first) ? std::next(it) : gen.erase(it);
        rows.push_back({"ragalign_binary", k, o.system, ds, rag_align_binary(hit, gen), hit.size(), 0, std::nullopt, {}});
        rows.push_back({"ragalign_pointbiserial_ndcg", k, o.system, ds, rag_align_pointbiserial(ndcg, gen_ndcg),
                        ndcg.size(), hit.size() - ndcg.size(), std::nullopt, {}});
    } else {
        throw ConfigError("unknown --metric '" + o.metric + "' (hit, ndcg, recall, hole, growth, mc, labeling, ragalign)");
    }
    emit(c, o.metric == "mc" ? "mc_" + o.mc_metric : o.metric, rows, o.out);
    return 0;
}

inline int cmd_report(const Options& o) {
    auto c = load_context(o);
    int k = c.cfg.k;
    override_with("k", o.k, k);
    const auto m = retrieval_metric_from_string(o.metric);
    const auto original = load_qrels(c.cfg.qrels);
    const auto aug = load_augmented(original, c.ws.augmented_qrels());
    auto runs = load_runs(c.cfg.runs);
    std::map<std::string, double> before, after;
    for (const auto& s : runs.system_names()) {
        before[s] = system_metric(runs, s, original, m, k).value.value_or(0.0);
        after[s] = system_metric(runs, s, aug, m, k).value.value_or(0.0);
    }
    auto shifts = rank_shift_report(before, after);
    std::vector<json> recs;
    std::size_t changed = 0;
    std::printf("%-24s %10s %10s %6s %6s %6s\n", "system", "original", "augmented", "rank_o", "rank_a", "delta");
    for (const auto& s : shifts) {
        recs.push_back({{"system", s.system},
                        {"metric", std::string(to_string(m)) + "@" + std::to_string(k)},
                        {"original", s.original},
                        {"augmented", s.augmented},
                        {"rank_original", s.rank_original},
                        {"rank_augmented", s.rank_augmented},
                        {"delta", s.delta}});
        changed += s.delta != 0 ? 1 : 0;
        std::printf("%-24s %10.4f %10.4f %6d %6d %+6d\n", s.system.c_str(), s.original, s.augmented, s.rank_original,
                    s.rank_augmented, s.delta);
    }
    std::printf("%zu of %zu systems change rank\n", changed, shifts.size());
    jsonl::write_file(o.out.empty() ? c.ws.reports() / "rank_shift.jsonl" : fs::path(o.out), recs);

    json summary = json::object();
    if (fs::exists(c.ws.pool()))
        summary["pooled"] = load_pool(c.ws.pool()).size();
    if (fs::exists(c.ws.filtered()))
        summary["after_filter"] = load_pool(c.ws.filtered()).size();
    auto outcomes = read_transcript_log(c.ws.transcripts()).completed;
    summary["debate"] = debate_summary(outcomes, c.cfg.debate.max_rounds);
    write_json(c.ws.reports() / "pipeline_summary.json", summary);
    std::cout << summary.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"Debate-based relevance assessment and benchmark refinement pipeline", "qdebate"};
    app.require_subcommand(1);
    Options o;
    app.add_option("-c,--config", o.config, "Pipeline config file (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("-w,--workspace", o.workspace, "Workspace directory (overrides config)");

    auto* pool = app.add_subcommand("pool", "Build the pooled candidate triplets from run files");
    pool->add_option("--runs", o.runs, "Run files or directories (override config)");
    pool->add_option("--k", o.k, "Pool depth")->check(CLI::PositiveNumber);
    pool->add_option("--out", o.out, "Output pool file");
    pool->add_flag("--sample", o.sample, "Keep one seeded random candidate per query");

    auto* filter = app.add_subcommand("filter", "Discard triplets every filter model rejects");
    filter->add_option("--pool", o.pool, "Input pool");
    filter->add_option("--out", o.out, "Output pool of kept triplets");
    filter->add_flag("--skip", o.skip, "Keep every triplet without calling models");
    filter->add_option("--workers", o.workers, "Concurrent triplets")->check(CLI::PositiveNumber);

    auto* debate = app.add_subcommand("debate", "Run the multi-round debate over the pool");
    debate->add_option("--pool", o.pool, "Input pool (default: filtered pool)");
    debate->add_flag("--resume", o.resume, "Continue an existing transcript log");
    debate->add_option("--max-rounds", o.max_rounds, "Maximum rounds R")->check(CLI::PositiveNumber);
    debate->add_option("--workers", o.workers, "Concurrent debates")->check(CLI::PositiveNumber);
    debate->add_option("--limit", o.limit, "Stop after this many new outcomes");

    auto* audit = app.add_subcommand("audit", "Stance-swap or consensus-persistence audit");
    audit->add_option("--kind", o.audit_kind, "swap or persistence")->check(CLI::IsMember({"swap", "persistence"}));
    audit->add_option("--rounds", o.audit_rounds, "Maximum round for the persistence audit");
    audit->add_option("--pool", o.pool, "Input pool");
    audit->add_option("--limit", o.limit, "Only the first N triplets");

    auto* serve = app.add_subcommand("serve", "Serve the adjudication API");
    serve->add_option("--host", o.host, "Bind address");
    serve->add_option("--port", o.port, "Port");
    serve->add_option("--static", o.static_dir, "Annotation console bundle directory");

    auto* adj = app.add_subcommand("adjudicate-llm", "Resolve open escalations with the LLM adjudicator");
    adj->add_option("--limit", o.limit, "At most N items");

    auto* exp = app.add_subcommand("export", "Write the augmented qrels and hole report");
    exp->add_flag("--partial", o.partial, "Allow unresolved escalations");
    exp->add_option("--out", o.out, "Output qrels file");

    auto* eval = app.add_subcommand("evaluate", "Compute metrics");
    eval->add_option("--metric", o.metric, "hit, ndcg, recall, hole, growth, mc, labeling, ragalign")
        ->check(CLI::IsMember({"hit", "ndcg", "recall", "hole", "growth", "mc", "labeling", "ragalign"}));
    eval->add_option("--k", o.k, "Cutoff")->check(CLI::PositiveNumber);
    eval->add_option("--mc-metric", o.mc_metric, "Metric inside marginal contribution")
        ->check(CLI::IsMember({"hit", "ndcg", "recall"}));
    eval->add_option("--qrels", o.qrels, "Evaluate against this qrels file only");
    eval->add_option("--truth", o.truth, "Ground-truth qrels for --metric labeling");
    eval->add_option("--system", o.system, "System for --metric ragalign");
    eval->add_option("--generation", o.generation, "Generation outcomes {query_id, outcome} for ragalign");
    eval->add_option("--orderings", o.orderings, "Random system orderings");
    eval->add_option("--seed", o.seed, "Ordering seed");
    eval->add_option("--out", o.out, "Output JSONL report");

    auto* report = app.add_subcommand("report", "Rank shifts between original and augmented qrels");
    report->add_option("--metric", o.metric, "hit, ndcg or recall")->check(CLI::IsMember({"hit", "ndcg", "recall"}));
    report->add_option("--k", o.k, "Cutoff")->check(CLI::PositiveNumber);
    report->add_option("--out", o.out, "Output JSONL");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ExitCode::config);
    }

    try {
        auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "pool")
            return cmd_pool(o);
        if (name == "filter")
            return cmd_filter(o);
        if (name == "debate")
            return cmd_debate(o);
        if (name == "audit")
            return cmd_audit(o);
        if (name == "serve")
            return cmd_serve(o);
        if (name == "adjudicate-llm")
            return cmd_adjudicate_llm(o);
        if (name == "export")
            return cmd_export(o);
        if (name == "evaluate")
            return cmd_evaluate(o);
        if (name == "report")
            return cmd_report(o);
    } catch (const Error& e) {
        log()->error("{}", e.what());
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        log()->error("{}", e.what());
        return static_cast<int>(ExitCode::failure);
    }
    return static_cast<int>(ExitCode::config);
}

} // namespace qdebate::cli
