#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/text/vocab.hpp"

namespace fidrank {

inline constexpr std::size_t kDefaultBudget = 150;
inline constexpr std::size_t kLongBudget = 300;

/// Tokenized prompt for one passage. Tokens before passage_start are scaffolding.
struct PromptSpan {
    std::vector<TokenId> tokens;
    std::size_t passage_start = 0;
    std::optional<int> passage_id;
};

namespace detail {

// Longest prefix of `passage` whose byte-level tokenization fits in `room` tokens
// without splitting a UTF-8 sequence.
inline std::vector<TokenId> fit_passage(const Vocab& vocab, std::string_view passage, std::size_t room)
{
    std::vector<TokenId> ids = vocab.tokenize(passage);
    if (ids.size() <= room) {
        return ids;
    }
    if (vocab.is_byte_level()) {
        std::size_t cut = room;
        while (cut > 0 && (static_cast<unsigned char>(passage[cut]) & 0xC0) == 0x80) {
            --cut;
        }
        ids.resize(cut);
    } else {
        ids.resize(room);
    }
    return ids;
}

inline PromptSpan assemble(const Vocab& vocab, const std::string& prefix, std::string_view passage,
                           const std::string& suffix, std::size_t budget)
{
    std::vector<TokenId> head = vocab.tokenize(prefix);
    std::vector<TokenId> tail = vocab.tokenize(suffix);
    const std::size_t scaffolding = head.size() + tail.size();
    if (budget < scaffolding + 1) {
        throw BudgetError("token budget " + std::to_string(budget) + " cannot hold " +
                          std::to_string(scaffolding) + " scaffolding tokens plus passage text");
    }
    std::vector<TokenId> body = fit_passage(vocab, passage, budget - scaffolding);
    PromptSpan span;
    span.passage_start = head.size();
    span.tokens = std::move(head);
    span.tokens.insert(span.tokens.end(), body.begin(), body.end());
    span.tokens.insert(span.tokens.end(), tail.begin(), tail.end());
    return span;
}

}  // namespace detail

/// "Search Query: {query} Passage: [{id}] {passage} Relevance Ranking:", passage truncated to fit.
inline PromptSpan build_distill_prompt(const Vocab& vocab, std::string_view query, std::string_view passage, int id,
                                       std::size_t budget = kDefaultBudget)
{
    if (id < 1) {
        throw ContractError("passage identifier must be positive, got " + std::to_string(id));
    }
    const std::string prefix =
        "Search Query: " + std::string(query) + " Passage: [" + std::to_string(id) + "] ";
    PromptSpan span = detail::assemble(vocab, prefix, passage, " Relevance Ranking:", budget);
    span.passage_id = id;
    return span;
}

/// "question: {query} context: {passage}", passage truncated to fit.
inline PromptSpan build_score_prompt(const Vocab& vocab, std::string_view query, std::string_view passage,
                                     std::size_t budget = kDefaultBudget)
{
    const std::string prefix = "question: " + std::string(query) + " context: ";
    return detail::assemble(vocab, prefix, passage, "", budget);
}

}  // namespace fidrank
