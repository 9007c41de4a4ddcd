#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fidrank/errors.hpp"
#include "fidrank/model/fid_model.hpp"
#include "fidrank/model/trace.hpp"
#include "fidrank/text/vocab.hpp"

namespace fidrank {

enum class StepPolicy { all_steps, first_step };

struct AggregationConfig {
    StepPolicy steps = StepPolicy::all_steps;
    bool zero_prefix = true;
    /// Scores closer than this count as tied in rank_by_score.
    double tie_epsilon = 0.0;

    void validate() const
    {
        if (!(tie_epsilon >= 0.0)) {
            throw ContractError("tie tolerance must be >= 0");
        }
    }
};

struct PassageScore {
    std::size_t passage = 0;
    double score = 0.0;
    std::size_t tokens = 0;
};

namespace detail {

inline void check_trace_layout(const AttentionTrace& trace, std::span<const MemorySpan> offsets,
                               const AggregationConfig& cfg)
{
    cfg.validate();
    std::size_t at = 0;
    for (std::size_t p = 0; p < offsets.size(); ++p) {
        if (offsets[p].start != at) {
            throw ConsistencyError("passage " + std::to_string(p) + " starts at source token " +
                                   std::to_string(offsets[p].start) + ", expected " + std::to_string(at));
        }
        at += offsets[p].length;
    }
    if (at != trace.tokens()) {
        throw ConsistencyError("passage spans cover " + std::to_string(at) + " source tokens, trace has " +
                               std::to_string(trace.tokens()));
    }
    if (trace.steps() == 0) {
        throw ConsistencyError("trace has no decoding steps");
    }
}

inline std::size_t included_steps(const AttentionTrace& trace, const AggregationConfig& cfg)
{
    return cfg.steps == StepPolicy::first_step ? 1 : trace.steps();
}

}  // namespace detail

/// Mean over layers, heads and included steps of alpha * ||v|| for every source token.
/// Prefix zeroing is not applied here; see aggregate_scores.
inline std::vector<double> token_scores(const AttentionTrace& trace, std::span<const MemorySpan> offsets,
                                        const AggregationConfig& cfg = {})
{
    detail::check_trace_layout(trace, offsets, cfg);
    const std::size_t n = trace.tokens();
    const std::size_t steps = detail::included_steps(trace, cfg);
    std::vector<double> out(n, 0.0);
    for (std::size_t s = 0; s < steps; ++s) {
        for (std::size_t l = 0; l < trace.layers(); ++l) {
            for (std::size_t h = 0; h < trace.heads(); ++h) {
                const double* alpha = trace.alpha_row(l, h, s);
                const double* norm = trace.value_norm_row(l, h);
                for (std::size_t t = 0; t < n; ++t) {
                    out[t] += alpha[t] * norm[t];
                }
            }
        }
    }
    const double denom = static_cast<double>(steps * trace.layers() * trace.heads());
    for (double& v : out) {
        v /= denom;
    }
    return out;
}

/// `passage_starts[p]` is the offset of passage text inside passage p's prompt.
/// With zeroing on, tokens before it are dropped from both sum and count.
inline std::vector<PassageScore> aggregate_scores(const AttentionTrace& trace, std::span<const MemorySpan> offsets,
                                                  std::span<const std::size_t> passage_starts,
                                                  const AggregationConfig& cfg = {})
{
    if (passage_starts.size() != offsets.size()) {
        throw ConsistencyError(std::to_string(passage_starts.size()) + " passage starts for " +
                               std::to_string(offsets.size()) + " passages");
    }
    for (std::size_t p = 0; p < offsets.size(); ++p) {
        if (passage_starts[p] > offsets[p].length) {
            throw ConsistencyError("passage " + std::to_string(p) + " text starts at " +
                                   std::to_string(passage_starts[p]) + " past its " +
                                   std::to_string(offsets[p].length) + " tokens");
        }
    }
    const std::vector<double> per_token = token_scores(trace, offsets, cfg);
    std::vector<PassageScore> out;
    out.reserve(offsets.size());
    for (std::size_t p = 0; p < offsets.size(); ++p) {
        const std::size_t skip = cfg.zero_prefix ? passage_starts[p] : 0;
        PassageScore ps{p, 0.0, offsets[p].length - skip};
        double sum = 0.0;
        for (std::size_t t = offsets[p].start + skip; t < offsets[p].start + offsets[p].length; ++t) {
            sum += per_token[t];
        }
        ps.score = ps.tokens ? sum / static_cast<double>(ps.tokens) : 0.0;
        out.push_back(ps);
    }
    return out;
}

inline std::vector<PassageScore> aggregate_scores(const AttentionTrace& trace, std::span<const MemorySpan> offsets,
                                                  const FidBatch& batch, const AggregationConfig& cfg = {})
{
    std::vector<std::size_t> starts;
    for (const auto& p : batch.passages) {
        starts.push_back(p.passage_start);
    }
    return aggregate_scores(trace, offsets, std::span<const std::size_t>(starts), cfg);
}

/// 1-based passage ids by descending score; ties within epsilon keep input order.
inline std::vector<int> rank_by_score(std::span<const PassageScore> scores, double tie_epsilon = 0.0)
{
    if (scores.empty()) {
        throw ContractError("rank_by_score: no scores");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a].score > scores[b].score + tie_epsilon;
    });
    std::vector<int> ids;
    ids.reserve(order.size());
    for (std::size_t i : order) {
        ids.push_back(static_cast<int>(scores[i].passage) + 1);
    }
    return ids;
}

inline std::vector<int> rank_by_score(const std::vector<PassageScore>& scores, double tie_epsilon = 0.0)
{
    return rank_by_score(std::span<const PassageScore>(scores), tie_epsilon);
}

/// One JSON object per source token: passage_index, token_index, token_text, score.
inline void write_heatmap(std::ostream& out, std::span<const double> scores, const FidBatch& batch, const Vocab& vocab)
{
    std::size_t at = 0;
    for (std::size_t p = 0; p < batch.passages.size(); ++p) {
        const auto& tokens = batch.passages[p].tokens;
        for (std::size_t t = 0; t < tokens.size(); ++t, ++at) {
            if (at >= scores.size()) {
                throw ConsistencyError("heatmap: fewer scores than batch tokens");
            }
            nlohmann::ordered_json rec;
            rec["passage_index"] = p;
            rec["token_index"] = t;
            rec["token_text"] = vocab.piece(tokens[t]);
            rec["score"] = scores[at];
            out << rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
        }
    }
    if (at != scores.size()) {
        throw ConsistencyError("heatmap: more scores than batch tokens");
    }
}

}  // namespace fidrank
