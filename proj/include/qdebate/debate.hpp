#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "qdebate/data_model.hpp"
#include "qdebate/gateway.hpp"
#include "qdebate/jsonl.hpp"
#include "qdebate/templates.hpp"

namespace qdebate {

enum class Stance { relevance, irrelevance };

inline std::string_view to_string(Stance s) { return s == Stance::relevance ? "relevance" : "irrelevance"; }

inline Stance stance_from_string(std::string_view s) {
    if (s == "relevance")
        return Stance::relevance;
    if (s == "irrelevance")
        return Stance::irrelevance;
    throw DataError("unknown stance '" + std::string(s) + "'");
}

inline Stance opposite(Stance s) { return s == Stance::relevance ? Stance::irrelevance : Stance::relevance; }

/// The stance as an agent would state it.
inline std::string_view statement(Stance s) {
    return s == Stance::relevance ? "I think the chunk is relevant to the target query."
                                  : "I think the chunk is not relevant to the target query.";
}

/// The stance as it appears in a round-1 history block.
inline std::string_view history_line(Stance s) {
    return s == Stance::relevance ? prompts::kRelevantStanceLine : prompts::kIrrelevantStanceLine;
}

enum class StanceOrder { relevant_first, irrelevant_first };

inline StanceOrder stance_order_from_string(std::string_view s) {
    if (s == "relevant-first" || s == "relevant_first")
        return StanceOrder::relevant_first;
    if (s == "irrelevant-first" || s == "irrelevant_first")
        return StanceOrder::irrelevant_first;
    throw ConfigError("stance order must be relevant-first or irrelevant-first, got '" + std::string(s) + "'");
}

inline std::string_view to_string(StanceOrder o) {
    return o == StanceOrder::relevant_first ? "relevant-first" : "irrelevant-first";
}

struct DebateConfig {
    int max_rounds = 2;
    std::vector<AgentConfig> roster;
    StanceOrder first_stance = StanceOrder::relevant_first;
    bool continue_past_consensus = false;

    /// Round-robin stance assignment starting from the configured first stance.
    Stance stance_of(std::size_t agent_index) const {
        Stance first = first_stance == StanceOrder::relevant_first ? Stance::relevance : Stance::irrelevance;
        return agent_index % 2 == 0 ? first : opposite(first);
    }

    void validate() const {
        if (max_rounds < 1)
            throw ConfigError("debate max_rounds must be >= 1");
        if (roster.size() < 2)
            throw ConfigError("debate roster needs at least 2 agents");
        std::set<std::string> names;
        for (const auto& a : roster)
            if (!names.insert(a.name).second)
                throw ConfigError("duplicate agent name '" + a.name + "' in debate roster");
    }
};

struct DebateTurn {
    int round = 1;
    std::string agent;
    Stance stance = Stance::relevance;
    AgentReply reply;
    UsageRecord usage;
};

enum class DebateStatus { consensus, disagreement, malformed };

inline std::string_view to_string(DebateStatus s) {
    switch (s) {
    case DebateStatus::consensus: return "consensus";
    case DebateStatus::disagreement: return "disagreement";
    case DebateStatus::malformed: return "malformed";
    }
    return "";
}

inline DebateStatus debate_status_from_string(std::string_view s) {
    if (s == "consensus")
        return DebateStatus::consensus;
    if (s == "disagreement")
        return DebateStatus::disagreement;
    if (s == "malformed")
        return DebateStatus::malformed;
    throw DataError("unknown debate status '" + std::string(s) + "'");
}

struct RosterSeat {
    std::string agent;
    Stance stance;
};

struct DebateTranscript {
    PairKey key;
    std::vector<RosterSeat> roster;
    std::vector<DebateTurn> turns;
    DebateStatus status = DebateStatus::disagreement;
    /// First unanimous round and its label (consensus only).
    int consensus_round = 0;
    Label consensus_label = Label::irrelevant;
    std::string error;

    std::vector<const DebateTurn*> round(int j) const {
        std::vector<const DebateTurn*> out;
        for (const auto& t : turns)
            if (t.round == j)
                out.push_back(&t);
        return out;
    }

    int rounds_run() const {
        int r = 0;
        for (const auto& t : turns)
            r = std::max(r, t.round);
        return r;
    }

    /// Whether every seat answered in round j and all labels match.
    bool unanimous(int j) const {
        auto ts = round(j);
        if (ts.size() != roster.size() || ts.empty())
            return false;
        return std::all_of(ts.begin(), ts.end(), [&](auto* t) { return t->reply.label == ts.front()->reply.label; });
    }

    UsageRecord usage() const {
        UsageRecord u;
        for (const auto& t : turns)
            u += t.usage;
        return u;
    }
};

struct AssessmentOutcome {
    enum class Kind { auto_label, escalated };
    Kind kind = Kind::escalated;
    Label label = Label::irrelevant;
    int round = 0;
    DebateTranscript transcript;

    bool escalated() const { return kind == Kind::escalated; }
    const PairKey& key() const { return transcript.key; }
};

// ---------------------------------------------------------------------------
// Prompt assembly

namespace detail {

inline std::string seat_name(const std::vector<RosterSeat>& roster, std::size_t i, std::size_t self) {
    return i == self ? roster[i].agent + " (You)" : roster[i].agent;
}

inline std::string other_agents(const std::vector<RosterSeat>& roster, std::size_t self) {
    std::string out;
    for (std::size_t i = 0; i < roster.size(); ++i) {
        if (i == self)
            continue;
        if (!out.empty())
            out += ", ";
        out += roster[i].agent;
    }
    return out;
}

} // namespace detail

/// History block for round `j` as seen by seat `self`: stance lines for j = 1,
/// the previous round's reason and label per seat afterwards.
inline std::string render_history(const std::vector<RosterSeat>& roster, const std::vector<DebateTurn>& turns, int j,
                                  std::size_t self) {
    std::string out;
    for (std::size_t i = 0; i < roster.size(); ++i) {
        if (i)
            out += '\n';
        out += detail::seat_name(roster, i, self);
        out += ": ";
        if (j == 1) {
            out += history_line(roster[i].stance);
            continue;
        }
        auto it = std::find_if(turns.begin(), turns.end(),
                               [&](const DebateTurn& t) { return t.round == j - 1 && t.agent == roster[i].agent; });
        if (it == turns.end())
            throw Error("history for round " + std::to_string(j) + " lacks a turn from " + roster[i].agent);
        out += it->reply.reason;
        out += " (response: ";
        out += it->reply.label == Label::relevant ? "yes" : "no";
        out += ')';
    }
    return out;
}

inline RenderedPrompt render_debate_prompt(const Triplet& t, const std::vector<RosterSeat>& roster,
                                           const std::vector<DebateTurn>& turns, int j, std::size_t self) {
    Bindings b{{"agent1", roster[self].agent},
               {"agent2", detail::other_agents(roster, self)},
               {"query", t.query},
               {"answer", numbered_list(t.answers)},
               {"chunk", t.chunk},
               {"history", render_history(roster, turns, j, self)}};
    return render_template(j == 1 ? TemplateId::debate_first_round : TemplateId::debate_later_round, b);
}

inline std::vector<RosterSeat> seat_roster(const DebateConfig& cfg) {
    std::vector<RosterSeat> seats;
    for (std::size_t i = 0; i < cfg.roster.size(); ++i)
        seats.push_back({cfg.roster[i].name, cfg.stance_of(i)});
    return seats;
}

// ---------------------------------------------------------------------------
// Protocol

inline AssessmentOutcome run_debate(Gateway& gw, const Triplet& t, const DebateConfig& cfg) {
    if (t.answers.empty())
        throw DataError("triplet " + t.key().str() + " has no answers");
    DebateTranscript tr;
    tr.key = t.key();
    tr.roster = seat_roster(cfg);

    for (int j = 1; j <= cfg.max_rounds; ++j) {
        // every seat reads the same snapshot of the previous round
        const std::vector<DebateTurn> snapshot = tr.turns;
        for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
            auto prompt = render_debate_prompt(t, tr.roster, snapshot, j, i);
            DebateTurn turn{j, cfg.roster[i].name, tr.roster[i].stance, {}, {}};
            try {
                turn.reply = gw.complete_parsed(
                    cfg.roster[i], prompt.system, prompt.user, [](const std::string& raw) { return extract_reply(raw); },
                    &turn.usage);
            } catch (const MalformedReply& e) {
                tr.error = cfg.roster[i].name + " round " + std::to_string(j) + ": " + e.what();
                if (tr.consensus_round == 0)
                    tr.status = DebateStatus::malformed;
                break;
            }
            tr.turns.push_back(std::move(turn));
        }
        if (!tr.error.empty())
            break;
        if (tr.consensus_round == 0 && tr.unanimous(j)) {
            tr.status = DebateStatus::consensus;
            tr.consensus_round = j;
            tr.consensus_label = tr.round(j).front()->reply.label;
            if (!cfg.continue_past_consensus)
                break;
        }
    }

    AssessmentOutcome out;
    out.transcript = std::move(tr);
    if (out.transcript.status == DebateStatus::consensus) {
        out.kind = AssessmentOutcome::Kind::auto_label;
        out.label = out.transcript.consensus_label;
        out.round = out.transcript.consensus_round;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Transcript log

inline json turn_record(const PairKey& key, const DebateTurn& t) {
    return json{{"type", "turn"},
                {"key", key},
                {"round", t.round},
                {"agent", t.agent},
                {"stance", to_string(t.stance)},
                {"reason", t.reply.reason},
                {"label", to_int(t.reply.label)},
                {"references", t.reply.references},
                {"usage", t.usage}};
}

inline json terminal_record(const DebateTranscript& tr) {
    json seats = json::array();
    for (const auto& s : tr.roster)
        seats.push_back({{"agent", s.agent}, {"stance", to_string(s.stance)}});
    json j{{"type", "terminal"}, {"key", tr.key}, {"status", to_string(tr.status)}, {"roster", seats}};
    if (tr.status == DebateStatus::consensus) {
        j["round"] = tr.consensus_round;
        j["label"] = to_int(tr.consensus_label);
    }
    if (!tr.error.empty())
        j["error"] = tr.error;
    return j;
}

inline std::vector<json> transcript_records(const DebateTranscript& tr) {
    std::vector<json> out;
    for (const auto& t : tr.turns)
        out.push_back(turn_record(tr.key, t));
    out.push_back(terminal_record(tr));
    return out;
}

struct TranscriptLog {
    std::vector<AssessmentOutcome> completed;
    /// Records belonging to debates without a terminal record.
    std::size_t orphan_records = 0;
};

/// Rebuilds outcomes from a transcript log; a torn final line is tolerated.
inline TranscriptLog read_transcript_log(const std::filesystem::path& path) {
    TranscriptLog log;
    if (!std::filesystem::exists(path))
        return log;
    std::map<PairKey, std::vector<DebateTurn>> pending;
    for (const auto& r : jsonl::read_file(path, true)) {
        auto key = r.at("key").get<PairKey>();
        const auto type = r.at("type").get<std::string>();
        if (type == "turn") {
            DebateTurn t;
            t.round = r.at("round").get<int>();
            t.agent = r.at("agent").get<std::string>();
            t.stance = stance_from_string(r.at("stance").get<std::string>());
            t.reply.reason = r.value("reason", std::string{});
            t.reply.label = label_from_int(r.at("label").get<int>());
            t.reply.references = r.value("references", std::vector<std::string>{});
            if (r.contains("usage"))
                t.usage = r["usage"].get<UsageRecord>();
            pending[key].push_back(std::move(t));
        } else if (type == "terminal") {
            AssessmentOutcome o;
            auto& tr = o.transcript;
            tr.key = key;
            for (const auto& s : r.at("roster"))
                tr.roster.push_back({s.at("agent").get<std::string>(), stance_from_string(s.at("stance").get<std::string>())});
            tr.turns = std::move(pending[key]);
            pending.erase(key);
            tr.status = debate_status_from_string(r.at("status").get<std::string>());
            tr.error = r.value("error", std::string{});
            if (tr.status == DebateStatus::consensus) {
                tr.consensus_round = r.at("round").get<int>();
                tr.consensus_label = label_from_int(r.at("label").get<int>());
                o.kind = AssessmentOutcome::Kind::auto_label;
                o.label = tr.consensus_label;
                o.round = tr.consensus_round;
            }
            log.completed.push_back(std::move(o));
        } else {
            throw DataError("unknown transcript record type '" + type + "' in " + path.string());
        }
    }
    for (const auto& [_, turns] : pending)
        log.orphan_records += turns.size();
    return log;
}

// ---------------------------------------------------------------------------
// Batch execution

struct BatchOptions {
    std::filesystem::path log_path;
    bool resume = false;
    int workers = 4;
    /// Stop claiming new triplets after this many new outcomes (0 = no limit).
    std::size_t max_new_outcomes = 0;
    std::stop_token stop;
};

struct BatchResult {
    /// Outcomes for the whole pool that are complete, in pool order.
    std::vector<AssessmentOutcome> outcomes;
    std::size_t newly_debated = 0;
    std::size_t skipped = 0;
    bool interrupted = false;

    std::size_t escalated() const {
        return static_cast<std::size_t>(
            std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.escalated(); }));
    }
    double escalation_ratio() const {
        return outcomes.empty() ? 0.0 : static_cast<double>(escalated()) / static_cast<double>(outcomes.size());
    }
};

/// Debates every pool triplet without a terminal record in the log. Outcomes are
/// committed in pool order, so identical inputs produce byte-identical logs.
inline BatchResult run_batch(Gateway& gw, const std::vector<Triplet>& pool, const DebateConfig& cfg,
                             const BatchOptions& opt) {
    cfg.validate();
    if (pool.empty())
        throw DataError("debate pool is empty");
    if (opt.log_path.empty())
        throw ConfigError("run_batch needs a transcript log path");

    std::map<PairKey, AssessmentOutcome> done;
    if (std::filesystem::exists(opt.log_path) && std::filesystem::file_size(opt.log_path) > 0) {
        if (!opt.resume)
            throw ConfigError("transcript log " + opt.log_path.string() + " already exists; pass --resume");
        auto log = read_transcript_log(opt.log_path);
        for (auto& o : log.completed)
            done.emplace(o.key(), std::move(o));
        // compaction: drop partial debates and any torn tail
        std::vector<json> keep;
        for (const auto& [_, o] : done)
            for (auto& r : transcript_records(o.transcript))
                keep.push_back(std::move(r));
        auto tmp = opt.log_path;
        tmp += ".compact";
        jsonl::write_file(tmp, keep);
        std::filesystem::rename(tmp, opt.log_path);
    }

    std::vector<std::size_t> todo;
    BatchResult result;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (done.contains(pool[i].key()))
            ++result.skipped;
        else
            todo.push_back(i);
    }

    jsonl::Appender out(opt.log_path);
    std::mutex mu;
    std::condition_variable cv;
    std::map<std::size_t, AssessmentOutcome> ready; // slot in todo -> outcome
    std::size_t next_commit = 0;
    std::atomic<std::size_t> next_claim{0};
    std::atomic<bool> abort{false};
    std::exception_ptr failure;

    auto commit_ready = [&] {
        // caller holds mu
        while (true) {
            auto it = ready.find(next_commit);
            if (it == ready.end())
                break;
            out.append(transcript_records(it->second.transcript));
            done.emplace(it->second.key(), std::move(it->second));
            ready.erase(it);
            ++next_commit;
            ++result.newly_debated;
        }
    };

    auto worker = [&] {
        while (!abort.load()) {
            if (opt.stop.stop_requested())
                return;
            std::size_t slot = next_claim.fetch_add(1);
            if (slot >= todo.size() || (opt.max_new_outcomes && slot >= opt.max_new_outcomes))
                return;
            try {
                auto o = run_debate(gw, pool[todo[slot]], cfg);
                std::lock_guard lock(mu);
                ready.emplace(slot, std::move(o));
                commit_ready();
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure)
                    failure = std::current_exception();
                abort.store(true);
                return;
            }
        }
    };

    const int n = std::max(1, std::min<int>(opt.workers, static_cast<int>(todo.size())));
    {
        std::vector<std::jthread> threads;
        for (int i = 0; i < n; ++i)
            threads.emplace_back(worker);
    }
    if (failure)
        std::rethrow_exception(failure);

    result.interrupted = done.size() < pool.size();
    for (const auto& t : pool) {
        auto it = done.find(t.key());
        if (it != done.end())
            result.outcomes.push_back(std::move(it->second));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Audits

/// 2x2 contingency of final labels: rows relevant-first, columns irrelevant-first,
/// index 0 = irrelevant, 1 = relevant.
struct FlipMatrix {
    std::size_t counts[2][2] = {{0, 0}, {0, 0}};

    static FlipMatrix from_counts(std::size_t rf_irr_if_irr, std::size_t rf_irr_if_rel, std::size_t rf_rel_if_irr,
                                  std::size_t rf_rel_if_rel) {
        FlipMatrix m;
        m.counts[0][0] = rf_irr_if_irr;
        m.counts[0][1] = rf_irr_if_rel;
        m.counts[1][0] = rf_rel_if_irr;
        m.counts[1][1] = rf_rel_if_rel;
        return m;
    }

    std::size_t row_total(int r) const { return counts[r][0] + counts[r][1]; }
    std::size_t col_total(int c) const { return counts[0][c] + counts[1][c]; }
    std::size_t total() const { return row_total(0) + row_total(1); }
    std::size_t identical() const { return counts[0][0] + counts[1][1]; }
    std::size_t flips() const { return counts[0][1] + counts[1][0]; }
    std::size_t relevant_to_irrelevant() const { return counts[1][0]; }
    std::size_t irrelevant_to_relevant() const { return counts[0][1]; }
    double identity_rate() const {
        return total() ? static_cast<double>(identical()) / static_cast<double>(total()) : 0.0;
    }
    double flip_rate() const { return total() ? static_cast<double>(flips()) / static_cast<double>(total()) : 0.0; }
};

/// Debates the pool under both stance orders; cases reaching consensus under both
/// populate the matrix.
inline FlipMatrix stance_swap_audit(Gateway& gw, const std::vector<Triplet>& pool, DebateConfig cfg) {
    cfg.validate();
    FlipMatrix m;
    for (const auto& t : pool) {
        cfg.first_stance = StanceOrder::relevant_first;
        auto rf = run_debate(gw, t, cfg);
        cfg.first_stance = StanceOrder::irrelevant_first;
        auto inf = run_debate(gw, t, cfg);
        if (rf.escalated() || inf.escalated())
            continue;
        ++m.counts[to_int(rf.label)][to_int(inf.label)];
    }
    return m;
}

struct PersistencePoint {
    int round = 0;
    std::size_t persisted = 0;
    double ratio = 0.0;
};

struct PersistenceReport {
    std::size_t round1_consensus = 0;
    std::vector<PersistencePoint> points;
};

/// Ratio arithmetic: persisted[i] is the count still unanimous at round i + 2.
inline PersistenceReport persistence_from_counts(std::size_t round1_consensus, const std::vector<std::size_t>& persisted) {
    PersistenceReport rep{round1_consensus, {}};
    for (std::size_t i = 0; i < persisted.size(); ++i)
        rep.points.push_back({static_cast<int>(i) + 2, persisted[i],
                              round1_consensus ? static_cast<double>(persisted[i]) / static_cast<double>(round1_consensus)
                                               : 0.0});
    return rep;
}

/// For round-1 consensus cases, the fraction that stays unanimous through each
/// later round up to r_max.
inline PersistenceReport persistence_audit(Gateway& gw, const std::vector<Triplet>& pool, DebateConfig cfg, int r_max) {
    if (r_max < 2)
        return {};
    cfg.max_rounds = r_max;
    cfg.continue_past_consensus = true;
    cfg.validate();
    std::size_t base = 0;
    std::vector<std::size_t> kept(static_cast<std::size_t>(r_max - 1), 0);
    for (const auto& t : pool) {
        auto o = run_debate(gw, t, cfg);
        const auto& tr = o.transcript;
        if (!tr.unanimous(1))
            continue;
        ++base;
        for (int j = 2; j <= r_max; ++j) {
            if (!tr.unanimous(j) || tr.round(j).front()->reply.label != tr.consensus_label)
                break;
            ++kept[static_cast<std::size_t>(j - 2)];
        }
    }
    return persistence_from_counts(base, kept);
}

} // namespace qdebate
