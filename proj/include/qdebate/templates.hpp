#pragma once

#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qdebate/error.hpp"

namespace qdebate {

enum class TemplateId {
    debate_first_round,
    debate_later_round,
    adjudicator,
    chunk_filter,
    generation_judge,
    answer_generation,
};

struct PromptTemplate {
    std::string_view system;
    std::string_view user;
};

class TemplateError : public ConfigError {
public:
    explicit TemplateError(const std::string& placeholder)
        : ConfigError("missing template binding {" + placeholder + "}"), placeholder_(placeholder) {}
    const std::string& placeholder() const noexcept { return placeholder_; }

private:
    std::string placeholder_;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

struct RenderedPrompt {
    std::string system;
    std::string user;
    bool operator==(const RenderedPrompt&) const = default;
};

namespace prompts {

inline constexpr std::string_view kDebateSystem =
    "You are {agent1}, and your task is to determine whether the given chunk FULLY answer to the query with AT LEAST "
    "ONE of the answers. There is also other agent, {agent2}, assigned the same task as you. You are provided query, "
    "its answers, and chunk in <query></query> tags, <ans></ans> tags, and <doc></doc> tags respectively. There can "
    "be multiple answers to the query, each listed with an ordered number. You can also access to the discussion "
    "history with {agent2} in <history></history> tags. You can refer your previous argument and {agent2} argument. "
    "There are also important guidelines to help your decision in <guide></guide> tags and keep that it mind for "
    "whole discussion process.";

inline constexpr std::string_view kDebateUser =
    "<query>\n"
    "{query}\n"
    "</query>\n"
    "\n"
    "<answer>\n"
    "{answer}\n"
    "</answer>\n"
    "\n"
    "<doc>\n"
    "{chunk}\n"
    "</doc>\n"
    "\n"
    "<history>\n"
    "{history}\n"
    "</history>\n"
    "\n"
    "You have to carefully read the query and its answers and fully understand the core content of each answer. "
    "Afterthat, read the given chunk and fully understand it. With your understanding of the chunk and answers, you "
    "have to analyze the discussion history and engage critically with the discussion. Then, you have to think "
    "critically whether the chunk can fully justify any of answers with all of the guidelines in <guide></guide>.\n"
    "<guide>\n"
    "1. The chunk has the same scope as the scope of the answer. The chunk with a specific example cannot justify a "
    "general definition, and vice versa.\n"
    "2. The chunk must contain the key contents of the answer, and present a consistent context without "
    "contradiction with the answer.\n"
    "3. The chunk must directly provide the answer, without implications, oppositional logic or common-sense "
    "reasoning.\n"
    "4. The chunk must express the same concept with the same intent, scope and practical instruction. A simple "
    "match on theme or terminology is not sufficient.\n"
    "5. Base your decision solely on whether the chunk provides complete information for the answers, regardless of "
    "any additional information.\n"
    "6. Do not mark the answer as supported based on surface-level similarity, for example both mention same word, "
    "without checking for matching intent and guidance.\n"
    "7. Do not assess answer correctness, relevance to query, or consistency between answers.\n"
    "8. Each answer must be evaluated independently.\n"
    "</guide>\n"
    "Explain your reasoning process step by step, including how you interpreted the chunk, and engaged with the other "
    "agent's position. If applicable, include a reference sentence from the chunk to support your reasoning. "
    "Conclude with a clear justification of your final decision. Determine whether the given chunk is fully "
    "supporting any of the answers in \"response\"\n"
    "- yes: The chunk contains complete information to construct at least one answer to the target query.\n"
    "- no: The chunk does not contain complete information for any answer to the target query.\n"
    "\n"
    "Provide your output as a properly formatted JSON object. No additional explanation.\n"
    "{\"reference\": [\"reference sentence 1 if exists\", ...], \"reason\": \"Explain your reasoning process step by "
    "step. Conclude with a clear justification of your final decision. (Max 100 words)\", \"response\": \"yes or "
    "no\"}";

inline constexpr std::string_view kAdjudicatorSystem =
    "You are an ADJUDICATOR tasked with making the final determination on chunk-answer-query alignment. You are given "
    "a query, answers, a chunk, and discussion history between two evaluator agents with opposing views. Determine "
    "whether the chunk contains sufficient information to fully substantiate AT LEAST ONE of the candidate answers to "
    "the given query.\n"
    "- The answers are proposed responses to the query.\n"
    "- The chunk should provide complete evidentiary support for constructing/validating at least one answer.\n"
    "- You are NOT evaluating answer quality, only answer-query grounding.";

inline constexpr std::string_view kAdjudicatorUser =
    "<query>\n"
    "{query}\n"
    "</query>\n"
    "\n"
    "<answer>\n"
    "{answer}\n"
    "</answer>\n"
    "\n"
    "<doc>\n"
    "{chunk}\n"
    "</doc>\n"
    "\n"
    "<history>\n"
    "{history}\n"
    "</history>\n"
    "\n"
    "You have to carefully read the query and its answers and fully understand the core content of each answer. "
    "Afterthat, read the given chunk and fully understand it. Summarize both agents' positions and evaluate their "
    "reasoning quality. Assess how well each agent followed the evaluation criteria below in <guide></guide>. Then, "
    "you have to think critically whether the chunk can fully justify any of the answers with all of the guidelines "
    "in <guide></guide>.\n"
    "<guide>\n"
    "You must stick to all of the guidelines below for your decision:\n"
    "1. The chunk has the same scope as the scope of the answer. The chunk with a specific example cannot justify a "
    "general definition, and vice versa.\n"
    "2. The chunk must contain the key contents of the answer, and present a consistent context without "
    "contradiction with the answer.\n"
    "3. The chunk must directly provide the answer, without implications, oppositional logic or common-sense "
    "reasoning.\n"
    "4. The chunk must express the same concept with the same intent, scope and practical instruction. A simple "
    "match on theme or terminology is not sufficient.\n"
    "5. Base your decision solely on whether the chunk provides complete information for the answers, regardless of "
    "any additional information.\n"
    "6. Do not mark the answer as grounded based on surface-level similarity, for example both mention the same word, "
    "without checking for matching intent and guidance.\n"
    "</guide>\n"
    "Explain your reasoning process step by step, including how you interpreted the chunk, engaged with both agents' "
    "arguments, and applied the evaluation guidelines. Conclude with a clear justification of your final decision. "
    "Determine whether the given chunk is fully substantiating any of the answers in \"response\".\n"
    "- yes: The chunk contains complete information to construct at least one answer to the target query.\n"
    "- no: The chunk does not contain complete information for any answer to the target query.\n"
    "\n"
    "Provide your output as a properly formatted JSON object. No additional explanation.\n"
    "{\"reference\": [\"reference sentence 1 if exists\", ...], \"reason\": \"Explain your reasoning process step by "
    "step. Conclude with a clear justification of your final decision. (Max 100 words)\", \"response\": \"yes or "
    "no\"}";

inline constexpr std::string_view kChunkFilter =
    "Determine if the DOCUMENT contains enough information to answer the QUERY with any of the ANSWERs.\n"
    "\n"
    "QUERY: {query}\n"
    "DOCUMENT: {chunk}\n"
    "ANSWERs:\n"
    "{answers}\n"
    "\n"
    "If any ANSWER is supported by the DOCUMENT, return true. If all ANSWERs are not supported, return false. Do not "
    "provide explanations or additional information.\n"
    "\n"
    "Respond strictly in this format:\n"
    "{\"is_supported\": true/false}";

inline constexpr std::string_view kGenerationJudge =
    "Your task is to evaluate the correctness of the PREDICTED ANSWER based on the GT ANSWERs.\n"
    "\n"
    "### Instructions:\n"
    "- Read the QUERY and then compare the GT ANSWERs and the PREDICTED ANSWER.\n"
    "- Check if the PREDICTED ANSWER includes any of the core content of the GT ANSWERs.\n"
    "- If there are multiple GT ANSWERS and the PREDICTED ANSWER includes the core content of at least one of them, "
    "output \"True\".\n"
    "\n"
    "### QUERY:\n"
    "{query}\n"
    "\n"
    "### GT ANSWERs:\n"
    "{ground_truths}\n"
    "\n"
    "### PREDICTED ANSWER:\n"
    "{prediction}\n"
    "\n"
    "### Strictly output True or False";

inline constexpr std::string_view kAnswerGeneration =
    "Answer the given QUERY only using the information provided in the Multiple CONTEXTs. Do not include any "
    "assumptions, general knowledge, or information not found in the Multiple CONTEXTs.\n"
    "\n"
    "QUERY: {query}\n"
    "Multiple CONTEXTs: {retrieved_documents}\n"
    "\n"
    "Do not provide any explanation or additional text.\n"
    "\n"
    "Respond strictly in the following JSON format:\n"
    "\n"
    "- If **no relevant information** is found in CONTEXTs:\n"
    "  {\"Answer\": \"No relevant information found.\"}\n"
    "\n"
    "- If **relevant information** exists in CONTEXTs, answer in short form:\n"
    "  {\"Answer\": \"your answer\"}";

inline constexpr std::string_view kNoInformationSentinel = "No relevant information found.";

/// Opening history lines for the two stances.
inline constexpr std::string_view kRelevantStanceLine =
    "Yes. The chunk contains complete information to construct at least one answer to the target query.";
inline constexpr std::string_view kIrrelevantStanceLine =
    "No. The chunk does not contain complete information for any answer to the target query.";

} // namespace prompts

inline PromptTemplate prompt_template(TemplateId id) {
    using namespace prompts;
    switch (id) {
    case TemplateId::debate_first_round:
    case TemplateId::debate_later_round: return {kDebateSystem, kDebateUser};
    case TemplateId::adjudicator: return {kAdjudicatorSystem, kAdjudicatorUser};
    case TemplateId::chunk_filter: return {{}, kChunkFilter};
    case TemplateId::generation_judge: return {{}, kGenerationJudge};
    case TemplateId::answer_generation: return {{}, kAnswerGeneration};
    }
    return {};
}

namespace detail {

inline bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

/// Substitutes `{identifier}` placeholders; any other brace is literal text.
inline std::string substitute(std::string_view text, const Bindings& bindings) {
    std::string out;
    out.reserve(text.size() + 256);
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{' && i + 1 < text.size() && is_ident_start(text[i + 1])) {
            std::size_t j = i + 1;
            while (j < text.size() && is_ident(text[j]))
                ++j;
            if (j < text.size() && text[j] == '}') {
                auto name = text.substr(i + 1, j - i - 1);
                auto it = bindings.find(name);
                if (it == bindings.end())
                    throw TemplateError(std::string(name));
                out += it->second;
                i = j + 1;
                continue;
            }
        }
        out += text[i++];
    }
    return out;
}

} // namespace detail

inline RenderedPrompt render_template(TemplateId id, const Bindings& bindings) {
    auto t = prompt_template(id);
    return {detail::substitute(t.system, bindings), detail::substitute(t.user, bindings)};
}

/// Answers as an ordered numbered list: "1. a\n2. b".
inline std::string numbered_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i)
            out += '\n';
        out += std::to_string(i + 1) + ". " + items[i];
    }
    return out;
}

} // namespace qdebate
