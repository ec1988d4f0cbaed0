#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "qdebate/data_model.hpp"
#include "qdebate/debate.hpp"
#include "qdebate/gateway.hpp"
#include "qdebate/jsonl.hpp"
#include "qdebate/templates.hpp"

namespace qdebate {

struct HistoryEntry {
    std::string agent;
    Stance stance = Stance::relevance;
    std::string reason;
    Label label = Label::irrelevant;
    std::vector<std::string> references;
};

inline void to_json(json& j, const HistoryEntry& h) {
    j = json{{"agent", h.agent},
             {"stance", to_string(h.stance)},
             {"reason", h.reason},
             {"label", to_int(h.label)},
             {"references", h.references}};
}
inline void from_json(const json& j, HistoryEntry& h) {
    h.agent = j.at("agent").get<std::string>();
    h.stance = stance_from_string(j.at("stance").get<std::string>());
    h.reason = j.value("reason", std::string{});
    h.label = label_from_int(j.at("label").get<int>());
    h.references = j.value("references", std::vector<std::string>{});
}

/// The last round each seat spoke in, in roster order.
inline std::vector<HistoryEntry> final_round_history(const DebateTranscript& tr) {
    std::vector<HistoryEntry> out;
    for (const auto& seat : tr.roster) {
        const DebateTurn* last = nullptr;
        for (const auto& t : tr.turns)
            if (t.agent == seat.agent && (!last || t.round >= last->round))
                last = &t;
        if (last)
            out.push_back({seat.agent, seat.stance, last->reply.reason, last->reply.label, last->reply.references});
    }
    return out;
}

struct HumanJudgment {
    std::string annotator;
    Label label = Label::irrelevant;
    double timestamp = 0.0;
    bool attention_check = false;
};

enum class ItemStatus { open, in_progress, resolved };

inline std::string_view to_string(ItemStatus s) {
    switch (s) {
    case ItemStatus::open: return "open";
    case ItemStatus::in_progress: return "in-progress";
    case ItemStatus::resolved: return "resolved";
    }
    return "";
}

struct EscalationItem {
    std::string id;
    PairKey key;
    std::string query;
    std::vector<std::string> answers;
    std::string chunk;
    std::vector<HistoryEntry> history;
    bool attention_check = false;
    ItemStatus status = ItemStatus::open;
    std::vector<HumanJudgment> judgments;
    std::optional<Label> final_label;
    Provenance resolved_by = Provenance::human;
    std::string lease_holder;
    double lease_expires = 0.0;
};

inline json item_view(const EscalationItem& it) {
    json j{{"id", it.id},
           {"key", it.key},
           {"query", it.query},
           {"answers", it.answers},
           {"chunk", it.chunk},
           {"history", it.history},
           {"status", to_string(it.status)}};
    if (!it.lease_holder.empty()) {
        j["lease_holder"] = it.lease_holder;
        j["lease_expires"] = it.lease_expires;
    }
    if (it.final_label) {
        j["final_label"] = to_int(*it.final_label);
        j["resolved_by"] = to_string(it.resolved_by);
    }
    return j;
}

class QueueError : public Error {
public:
    enum class Kind { unknown_item, not_leased, duplicate, flagged, resolved };
    QueueError(Kind k, const std::string& what) : Error(what), kind_(k) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct AdjudicationConfig {
    int panel_size = 3;
    double attention_rate = 0.10;
    std::chrono::seconds lease_timeout{30 * 60};
    std::uint64_t seed = 0;

    void validate() const {
        if (panel_size < 1 || panel_size % 2 == 0)
            throw ConfigError("panel_size must be a positive odd number");
        if (attention_rate < 0.0 || attention_rate >= 1.0)
            throw ConfigError("attention_rate must be in [0, 1)");
        if (lease_timeout.count() <= 0)
            throw ConfigError("lease_timeout must be positive");
    }
};

struct SubmitResult {
    std::string item_id;
    ItemStatus status = ItemStatus::open;
    std::optional<Label> final_label;
    bool attention_check = false;
    bool attention_failed = false;
    /// Items reopened because the annotator was flagged.
    std::vector<std::string> requeued;
};

struct Progress {
    std::size_t open = 0;
    std::size_t in_progress = 0;
    std::size_t resolved = 0;
    std::optional<double> kappa;
    std::size_t flagged_annotators = 0;
};

/// Fleiss' kappa for two categories; `items[i]` holds the labels of item i.
inline double fleiss_kappa(const std::vector<std::vector<Label>>& items) {
    if (items.empty())
        throw DataError("fleiss_kappa needs at least one item");
    const std::size_t n = items.front().size();
    if (n < 2)
        throw DataError("fleiss_kappa needs at least 2 judgments per item");
    double p_bar = 0.0;
    double ones = 0.0;
    for (const auto& it : items) {
        if (it.size() != n)
            throw DataError("fleiss_kappa requires equal panel sizes");
        double n1 = static_cast<double>(std::count(it.begin(), it.end(), Label::relevant));
        double n0 = static_cast<double>(n) - n1;
        p_bar += (n1 * (n1 - 1) + n0 * (n0 - 1)) / (static_cast<double>(n) * static_cast<double>(n - 1));
        ones += n1;
    }
    const double N = static_cast<double>(items.size());
    p_bar /= N;
    const double p1 = ones / (N * static_cast<double>(n));
    const double pe = p1 * p1 + (1 - p1) * (1 - p1);
    if (pe == 1.0)
        return 1.0;
    return (p_bar - pe) / (1.0 - pe);
}

/// Shared queue of escalated cases. Every mutation goes through one mutex and is
/// appended to an event log, which is replayed on construction.
class AdjudicationStore {
public:
    using Clock = std::function<double()>;

    static double system_clock_seconds() {
        return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    }

    explicit AdjudicationStore(AdjudicationConfig cfg, std::filesystem::path log_path = {}, Clock clock = system_clock_seconds)
        : cfg_(cfg), clock_(std::move(clock)), rng_(cfg.seed) {
        cfg_.validate();
        if (!log_path.empty()) {
            if (std::filesystem::exists(log_path)) {
                replaying_ = true;
                for (const auto& e : jsonl::read_file(log_path, true))
                    apply(e);
                replaying_ = false;
            }
            log_ = std::make_unique<jsonl::Appender>(log_path);
        }
    }

    /// Gold pairings used to build attention checks.
    void set_attention_pool(std::vector<Triplet> gold) {
        std::lock_guard lock(mu_);
        gold_ = std::move(gold);
    }

    /// Opens one item per escalated outcome not already queued.
    std::size_t enqueue(const std::vector<AssessmentOutcome>& outcomes, const std::vector<Triplet>& pool) {
        std::map<PairKey, const Triplet*> by_key;
        for (const auto& t : pool)
            by_key[t.key()] = &t;
        std::lock_guard lock(mu_);
        std::size_t added = 0;
        for (const auto& o : outcomes) {
            if (!o.escalated() || by_pair_.contains(o.key()))
                continue;
            auto it = by_key.find(o.key());
            if (it == by_key.end())
                throw DataError("escalated pair " + o.key().str() + " is not in the pool");
            const Triplet& t = *it->second;
            char id[32];
            std::snprintf(id, sizeof id, "E%06zu", next_id_ + 1);
            json ev{{"event", "enqueue"},
                    {"id", id},
                    {"key", t.key()},
                    {"query", t.query},
                    {"answers", t.answers},
                    {"chunk", t.chunk},
                    {"history", final_round_history(o.transcript)}};
            commit(ev);
            ++added;
        }
        return added;
    }

    /// Leases the next item for the annotator, or nothing when the queue holds no
    /// open item they have not judged. A live lease is handed back unchanged.
    std::optional<EscalationItem> assign_next(const std::string& annotator) {
        if (annotator.empty())
            throw ConfigError("annotator id is empty");
        std::lock_guard lock(mu_);
        if (flagged_.contains(annotator))
            return std::nullopt;
        const double now = clock_();
        expire_leases(now);
        for (const auto& id : order_) {
            auto& it = items_.at(id);
            if (it.status == ItemStatus::in_progress && it.lease_holder == annotator)
                return it;
        }
        const EscalationItem* pick = nullptr;
        for (const auto& id : order_) {
            const auto& it = items_.at(id);
            if (it.attention_check || it.status != ItemStatus::open)
                continue;
            if (has_judged(it, annotator))
                continue;
            pick = &it;
            break;
        }
        if (!pick)
            return std::nullopt;
        const bool draw_attention = bernoulli();
        json ev{{"event", "lease"}, {"annotator", annotator}, {"expires", now + lease_seconds()}, {"attention_draw", draw_attention}};
        if (draw_attention && !gold_.empty()) {
            const auto& g = gold_[static_cast<std::size_t>(rng_() % gold_.size())];
            char id[32];
            std::snprintf(id, sizeof id, "E%06zu", next_id_ + 1);
            ev["id"] = id;
            ev["attention"] = json{{"key", g.key()},
                                   {"query", g.query},
                                   {"answers", g.answers},
                                   {"chunk", g.chunk},
                                   {"history", pick->history}};
        } else {
            ev["id"] = pick->id;
        }
        commit(ev);
        return items_.at(ev["id"].get<std::string>());
    }

    SubmitResult submit(const std::string& annotator, const std::string& item_id, Label label) {
        std::lock_guard lock(mu_);
        auto found = items_.find(item_id);
        if (found == items_.end())
            throw QueueError(QueueError::Kind::unknown_item, "unknown item " + item_id);
        const auto& it = found->second;
        if (flagged_.contains(annotator))
            throw QueueError(QueueError::Kind::flagged, "annotator " + annotator + " is flagged");
        if (has_judged(it, annotator))
            throw QueueError(QueueError::Kind::duplicate, annotator + " already judged " + item_id);
        if (it.status == ItemStatus::resolved)
            throw QueueError(QueueError::Kind::resolved, item_id + " is already resolved");
        const double now = clock_();
        if (it.status != ItemStatus::in_progress || it.lease_holder != annotator || it.lease_expires <= now)
            throw QueueError(QueueError::Kind::not_leased, item_id + " is not leased to " + annotator);
        json ev{{"event", "submit"}, {"annotator", annotator}, {"id", item_id}, {"label", to_int(label)}, {"time", now}};
        return commit(ev);
    }

    /// Resolves an open real item with an LLM adjudicator; a reply that stays
    /// malformed after the repair leaves the item open and returns nothing.
    std::optional<Label> adjudicate_llm(Gateway& gw, const std::string& item_id, const AgentConfig& agent) {
        EscalationItem snapshot;
        {
            std::lock_guard lock(mu_);
            auto found = items_.find(item_id);
            if (found == items_.end() || found->second.attention_check)
                throw QueueError(QueueError::Kind::unknown_item, "unknown item " + item_id);
            if (found->second.status == ItemStatus::resolved)
                throw QueueError(QueueError::Kind::resolved, item_id + " is already resolved");
            snapshot = found->second;
        }
        auto prompt = render_adjudicator_prompt(snapshot);
        AgentReply reply;
        try {
            reply = gw.complete_parsed(agent, prompt.system, prompt.user,
                                       [](const std::string& raw) { return extract_reply(raw); });
        } catch (const MalformedReply&) {
            return std::nullopt;
        }
        std::lock_guard lock(mu_);
        if (items_.at(item_id).status == ItemStatus::resolved)
            return items_.at(item_id).final_label;
        commit(json{{"event", "llm_label"}, {"id", item_id}, {"agent", agent.name}, {"label", to_int(reply.label)}});
        return reply.label;
    }

    static RenderedPrompt render_adjudicator_prompt(const EscalationItem& it) {
        std::string history;
        for (const auto& h : it.history) {
            if (!history.empty())
                history += '\n';
            history += h.agent + ": " + h.reason + " (response: " + (h.label == Label::relevant ? "yes" : "no") + ")";
        }
        return render_template(TemplateId::adjudicator, {{"query", it.query},
                                                         {"answer", numbered_list(it.answers)},
                                                         {"chunk", it.chunk},
                                                         {"history", history}});
    }

    Progress progress() const {
        std::lock_guard lock(mu_);
        Progress p;
        const double now = clock_();
        std::vector<std::vector<Label>> panels;
        for (const auto& id : order_) {
            const auto& it = items_.at(id);
            if (it.attention_check)
                continue;
            if (it.status == ItemStatus::resolved)
                ++p.resolved;
            else if (it.status == ItemStatus::in_progress && it.lease_expires > now)
                ++p.in_progress;
            else
                ++p.open;
            if (it.status == ItemStatus::resolved && it.resolved_by == Provenance::human &&
                it.judgments.size() == static_cast<std::size_t>(cfg_.panel_size)) {
                std::vector<Label> ls;
                for (const auto& j : it.judgments)
                    ls.push_back(j.label);
                panels.push_back(std::move(ls));
            }
        }
        if (!panels.empty() && cfg_.panel_size >= 2)
            p.kappa = fleiss_kappa(panels);
        p.flagged_annotators = flagged_.size();
        return p;
    }

    /// Real items in enqueue order.
    std::vector<EscalationItem> items() const {
        std::lock_guard lock(mu_);
        std::vector<EscalationItem> out;
        for (const auto& id : order_)
            if (!items_.at(id).attention_check)
                out.push_back(items_.at(id));
        return out;
    }

    std::optional<EscalationItem> item(const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = items_.find(id);
        if (it == items_.end())
            return std::nullopt;
        return it->second;
    }

    std::size_t attention_items() const {
        std::lock_guard lock(mu_);
        return attention_count_;
    }

    bool is_flagged(const std::string& annotator) const {
        std::lock_guard lock(mu_);
        return flagged_.contains(annotator);
    }

    const AdjudicationConfig& config() const { return cfg_; }

private:
    double lease_seconds() const { return static_cast<double>(cfg_.lease_timeout.count()); }

    bool bernoulli() {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        return u < cfg_.attention_rate;
    }

    static bool has_judged(const EscalationItem& it, const std::string& annotator) {
        return std::any_of(it.judgments.begin(), it.judgments.end(),
                           [&](const HumanJudgment& j) { return j.annotator == annotator; });
    }

    void expire_leases(double now) {
        for (auto& [_, it] : items_)
            if (it.status == ItemStatus::in_progress && it.lease_expires <= now) {
                it.status = ItemStatus::open;
                it.lease_holder.clear();
            }
    }

    SubmitResult commit(const json& ev) {
        if (log_)
            log_->append(ev);
        return apply(ev);
    }

    void add_item(EscalationItem it) {
        ++next_id_;
        order_.push_back(it.id);
        if (!it.attention_check)
            by_pair_[it.key] = it.id;
        items_.emplace(it.id, std::move(it));
    }

    void resolve(EscalationItem& it, Label label, Provenance by) {
        it.status = ItemStatus::resolved;
        it.final_label = label;
        it.resolved_by = by;
        it.lease_holder.clear();
    }

    SubmitResult apply(const json& ev) {
        const auto type = ev.at("event").get<std::string>();
        SubmitResult r;
        if (type == "enqueue") {
            EscalationItem it;
            it.id = ev.at("id").get<std::string>();
            it.key = ev.at("key").get<PairKey>();
            it.query = ev.at("query").get<std::string>();
            it.answers = ev.at("answers").get<std::vector<std::string>>();
            it.chunk = ev.at("chunk").get<std::string>();
            it.history = ev.at("history").get<std::vector<HistoryEntry>>();
            ++real_count_;
            add_item(std::move(it));
        } else if (type == "lease") {
            if (replaying_) {
                // keep the sampler aligned with the original run
                bernoulli();
                if (ev.contains("attention"))
                    rng_();
            }
            const auto id = ev.at("id").get<std::string>();
            if (ev.contains("attention")) {
                const auto& a = ev["attention"];
                EscalationItem it;
                it.id = id;
                it.key = a.at("key").get<PairKey>();
                it.query = a.at("query").get<std::string>();
                it.answers = a.at("answers").get<std::vector<std::string>>();
                it.chunk = a.at("chunk").get<std::string>();
                it.history = a.at("history").get<std::vector<HistoryEntry>>();
                it.attention_check = true;
                ++attention_count_;
                add_item(std::move(it));
            }
            auto& it = items_.at(id);
            it.status = ItemStatus::in_progress;
            it.lease_holder = ev.at("annotator").get<std::string>();
            it.lease_expires = ev.at("expires").get<double>();
        } else if (type == "submit") {
            const auto annotator = ev.at("annotator").get<std::string>();
            auto& it = items_.at(ev.at("id").get<std::string>());
            const Label label = label_from_int(ev.at("label").get<int>());
            it.judgments.push_back({annotator, label, ev.at("time").get<double>(), it.attention_check});
            it.lease_holder.clear();
            it.status = ItemStatus::open;
            r.item_id = it.id;
            r.attention_check = it.attention_check;
            if (it.attention_check) {
                it.status = ItemStatus::resolved;
                it.final_label = label;
                if (label != Label::relevant) {
                    r.attention_failed = true;
                    r.requeued = flag(annotator);
                }
            } else if (it.judgments.size() >= static_cast<std::size_t>(cfg_.panel_size)) {
                auto ones = std::count_if(it.judgments.begin(), it.judgments.end(),
                                          [](const HumanJudgment& j) { return j.label == Label::relevant; });
                resolve(it, 2 * ones > cfg_.panel_size ? Label::relevant : Label::irrelevant, Provenance::human);
            }
            r.status = it.status;
            r.final_label = it.status == ItemStatus::resolved ? it.final_label : std::nullopt;
        } else if (type == "llm_label") {
            auto& it = items_.at(ev.at("id").get<std::string>());
            resolve(it, label_from_int(ev.at("label").get<int>()), Provenance::automatic);
            r.item_id = it.id;
            r.status = it.status;
            r.final_label = it.final_label;
        } else {
            throw DataError("unknown adjudication event '" + type + "'");
        }
        return r;
    }

    /// Flags an annotator and voids their judgments on unresolved real items.
    std::vector<std::string> flag(const std::string& annotator) {
        flagged_.insert(annotator);
        std::vector<std::string> requeued;
        for (const auto& id : order_) {
            auto& it = items_.at(id);
            if (it.attention_check || it.status == ItemStatus::resolved)
                continue;
            auto before = it.judgments.size();
            std::erase_if(it.judgments, [&](const HumanJudgment& j) { return j.annotator == annotator; });
            bool touched = before != it.judgments.size();
            if (it.lease_holder == annotator) {
                it.lease_holder.clear();
                it.status = ItemStatus::open;
                touched = true;
            }
            if (touched)
                requeued.push_back(id);
        }
        return requeued;
    }

    AdjudicationConfig cfg_;
    Clock clock_;
    std::mt19937_64 rng_;
    mutable std::mutex mu_;
    std::unique_ptr<jsonl::Appender> log_;
    bool replaying_ = false;
    std::vector<std::string> order_;
    std::map<std::string, EscalationItem> items_;
    std::map<PairKey, std::string> by_pair_;
    std::set<std::string> flagged_;
    std::vector<Triplet> gold_;
    std::size_t real_count_ = 0;
    std::size_t attention_count_ = 0;
    std::size_t next_id_ = 0;
};

// ---------------------------------------------------------------------------
// Export

struct ExportConflict {
    PairKey key;
    int original_label = 0;
    int proposed_label = 0;
    Provenance provenance = Provenance::automatic;
};

struct Hole {
    PairKey key;
    Provenance provenance = Provenance::automatic;
};

struct ExportResult {
    QrelsSet augmented;
    std::vector<Hole> holes;
    std::vector<ExportConflict> conflicts;
    std::vector<PairKey> unresolved;
};

/// original ∪ auto labels ∪ adjudicated labels. Original entries are never
/// overwritten; disagreements with them are reported as conflicts. Escalated
/// pairs without a resolved item raise IncompleteAdjudication unless `partial`.
inline ExportResult export_qrels(const QrelsSet& original, const std::vector<AssessmentOutcome>& outcomes,
                                 const std::vector<EscalationItem>& items, bool partial = false) {
    ExportResult r;
    std::map<PairKey, const EscalationItem*> resolved;
    for (const auto& it : items)
        if (!it.attention_check && it.status == ItemStatus::resolved && it.final_label)
            resolved[it.key] = &it;
    for (const auto& o : outcomes)
        if (o.escalated() && !resolved.contains(o.key()))
            r.unresolved.push_back(o.key());
    for (const auto& it : items)
        if (!it.attention_check && it.status != ItemStatus::resolved &&
            std::find(r.unresolved.begin(), r.unresolved.end(), it.key) == r.unresolved.end())
            r.unresolved.push_back(it.key);
    std::sort(r.unresolved.begin(), r.unresolved.end());
    if (!r.unresolved.empty() && !partial)
        throw IncompleteAdjudication(std::to_string(r.unresolved.size()) +
                                     " escalated pairs are unresolved; resolve them or export with --partial");

    r.augmented = original;
    std::map<PairKey, std::pair<int, Provenance>> proposals;
    for (const auto& o : outcomes)
        if (!o.escalated())
            proposals[o.key()] = {to_int(o.label), Provenance::automatic};
    for (const auto& [key, it] : resolved) {
        auto cur = proposals.find(key);
        if (cur == proposals.end() || it->resolved_by == Provenance::human || cur->second.second != Provenance::human)
            proposals[key] = {to_int(*it->final_label), it->resolved_by};
    }
    for (const auto& [key, p] : proposals) {
        if (auto orig = original.find(key)) {
            if (orig->label != p.first)
                r.conflicts.push_back({key, orig->label, p.first, p.second});
            continue;
        }
        r.augmented.merge(key, p.first, p.second);
        if (p.first == 1)
            r.holes.push_back({key, r.augmented.find(key)->provenance});
    }
    return r;
}

inline void write_hole_report(const std::filesystem::path& path, const std::vector<Hole>& holes) {
    std::vector<json> recs;
    for (const auto& h : holes)
        recs.push_back({{"query_id", h.key.query_id}, {"chunk_id", h.key.chunk_id}, {"provenance", to_string(h.provenance)}});
    jsonl::write_file(path, recs);
}

} // namespace qdebate
