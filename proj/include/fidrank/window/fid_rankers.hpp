#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fidrank/model/fid_model.hpp"
#include "fidrank/scoring/scorer.hpp"
#include "fidrank/text/prompt.hpp"
#include "fidrank/text/ranking.hpp"
#include "fidrank/window/engine.hpp"

namespace fidrank {

/// Decoding cap for a ranking over m identifiers: 5 tokens per identifier, raised to
/// the token length of the longest well-formed ranking plus eos when that is larger
/// (byte-level ids of two digits need 7 tokens each).
inline std::size_t ranking_decode_limit(const Vocab& vocab, std::size_t m)
{
    std::vector<int> ids(m);
    for (std::size_t i = 0; i < m; ++i) {
        ids[i] = static_cast<int>(m - i);
    }
    const std::size_t full = m == 0 ? 0 : vocab.tokenize(format_ranking(ids)).size() + 1;
    return std::max(5 * m, full);
}

inline FidBatch distill_batch(const Vocab& vocab, const std::string& query, std::span<const Candidate> passages,
                              std::size_t budget)
{
    FidBatch batch;
    for (std::size_t i = 0; i < passages.size(); ++i) {
        batch.passages.push_back(
            build_distill_prompt(vocab, query, passages[i].text, static_cast<int>(i) + 1, budget));
    }
    return batch;
}

inline FidBatch score_batch(const Vocab& vocab, const std::string& query, std::span<const Candidate> passages,
                            std::size_t budget)
{
    FidBatch batch;
    for (const auto& p : passages) {
        batch.passages.push_back(build_score_prompt(vocab, query, p.text, budget));
    }
    return batch;
}

/// Generates a ranking string and repairs it into a permutation.
template <typename T>
class FidDistillRanker : public ListwiseRanker {
public:
    FidDistillRanker(const FidModel<T>& model, const Vocab& vocab, std::size_t budget = kDefaultBudget)
      : model_(model), vocab_(vocab), budget_(budget)
    {}

    /// Raw generated text for the window, before repair.
    std::string generate(const std::string& query, std::span<const Candidate> passages) const
    {
        const FidBatch batch = distill_batch(vocab_, query, passages, budget_);
        const auto memory = model_.encode_passages(batch);
        const auto result = model_.decode_greedy(memory, ranking_decode_limit(vocab_, passages.size()));
        return vocab_.detokenize(result.tokens);
    }

    std::vector<std::size_t> rank(const std::string& query, std::span<const Candidate> passages) const override
    {
        const auto ids = parse_and_repair(generate(query, passages), static_cast<int>(passages.size()));
        std::vector<std::size_t> out;
        out.reserve(ids.size());
        for (int id : ids) {
            out.push_back(static_cast<std::size_t>(id - 1));
        }
        return out;
    }

private:
    const FidModel<T>& model_;
    const Vocab& vocab_;
    std::size_t budget_;
};

struct ScoredGeneration {
    FidBatch batch;
    std::vector<MemorySpan> offsets;
    DecodeResult decode;
};

/// Generates an answer over all passages and scores them from the captured cross-attention.
template <typename T>
class FidScoreRanker : public PassageScorer {
public:
    FidScoreRanker(const FidModel<T>& model, const Vocab& vocab, std::size_t budget = kDefaultBudget,
                   std::size_t max_answer_tokens = 16, AggregationConfig agg = {})
      : model_(model), vocab_(vocab), budget_(budget), max_answer_tokens_(max_answer_tokens), agg_(agg)
    {}

    std::size_t capacity() const override { return model_.config().max_passages; }

    ScoredGeneration run(const std::string& query, std::span<const Candidate> passages) const
    {
        ScoredGeneration g;
        g.batch = score_batch(vocab_, query, passages, budget_);
        const auto memory = model_.encode_passages(g.batch);
        g.offsets = memory.offsets;
        g.decode = model_.decode_greedy(memory, max_answer_tokens_);
        return g;
    }

    std::vector<double> score(const std::string& query, std::span<const Candidate> passages) const override
    {
        const auto g = run(query, passages);
        std::vector<double> out;
        for (const auto& ps : aggregate_scores(g.decode.trace, g.offsets, g.batch, agg_)) {
            out.push_back(ps.score);
        }
        return out;
    }

    const AggregationConfig& aggregation() const noexcept { return agg_; }

private:
    const FidModel<T>& model_;
    const Vocab& vocab_;
    std::size_t budget_;
    std::size_t max_answer_tokens_;
    AggregationConfig agg_;
};

}  // namespace fidrank
