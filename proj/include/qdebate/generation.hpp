#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qdebate/gateway.hpp"
#include "qdebate/templates.hpp"

namespace qdebate {

/// Reads a bare True/False verdict. Surrounding whitespace, case, quotes and
/// trailing punctuation are tolerated; anything naming both or neither fails.
inline bool extract_true_false(std::string_view raw) {
    bool saw_true = false, saw_false = false;
    std::string word;
    auto flush = [&] {
        auto w = trim_lower(word);
        saw_true = saw_true || w == "true";
        saw_false = saw_false || w == "false";
        word.clear();
    };
    for (char c : raw) {
        if (std::isalpha(static_cast<unsigned char>(c)))
            word += c;
        else
            flush();
    }
    flush();
    if (saw_true == saw_false)
        throw MalformedReply("expected True or False", std::string(raw));
    return saw_true;
}

inline std::string render_judge_prompt(const std::string& query, const std::vector<std::string>& ground_truths,
                                       const std::string& prediction) {
    return render_template(TemplateId::generation_judge,
                           {{"query", query}, {"ground_truths", numbered_list(ground_truths)}, {"prediction", prediction}})
        .user;
}

/// 1 for True, 0 for False; nullopt when the verdict stays unreadable after the repair.
inline std::optional<int> judge_generation(Gateway& gw, const AgentConfig& judge, const std::string& query,
                                           const std::vector<std::string>& ground_truths, const std::string& prediction) {
    if (prediction.empty())
        throw DataError("prediction is empty");
    try {
        return gw.complete_parsed(judge, {}, render_judge_prompt(query, ground_truths, prediction),
                                  [](const std::string& raw) { return extract_true_false(raw); })
                   ? 1
                   : 0;
    } catch (const MalformedReply&) {
        return std::nullopt;
    }
}

/// Retrieved chunks in rank order, one per line, each tagged with its rank.
inline std::string render_contexts(const std::vector<std::string>& chunks) {
    std::string out;
    for (std::size_t i = 0; i < chunks.size(); ++i)
        out += "\n[" + std::to_string(i + 1) + "] " + chunks[i];
    return out;
}

inline std::string render_generation_prompt(const std::string& query, const std::vector<std::string>& chunks) {
    return render_template(TemplateId::answer_generation,
                           {{"query", query}, {"retrieved_documents", render_contexts(chunks)}})
        .user;
}

inline std::string extract_answer(std::string_view raw) {
    auto obj = find_json_object(raw);
    if (!obj)
        throw MalformedReply("no JSON object found", std::string(raw));
    auto it = obj->find("Answer");
    if (it == obj->end() || !it->is_string())
        throw MalformedReply("missing string field 'Answer'", std::string(raw));
    return it->get<std::string>();
}

/// The Answer field of a RAG completion; the no-information sentinel is returned verbatim.
inline std::string generate_answer(Gateway& gw, const AgentConfig& generator, const std::string& query,
                                   const std::vector<std::string>& chunks) {
    if (chunks.empty())
        throw DataError("generate_answer needs at least one retrieved chunk");
    return gw.complete_parsed(generator, {}, render_generation_prompt(query, chunks),
                              [](const std::string& raw) { return extract_answer(raw); });
}

} // namespace qdebate
