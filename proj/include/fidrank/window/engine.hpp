#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/scoring/scorer.hpp"

namespace fidrank {

struct Candidate {
    std::string docid;
    std::string text;
    double score = 0.0;

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// One query with its candidates in first-stage order.
struct CandidateList {
    std::string query_id;
    std::string query;
    std::vector<Candidate> entries;

    std::size_t size() const noexcept { return entries.size(); }

    void validate() const
    {
        std::unordered_set<std::string> seen;
        for (const auto& c : entries) {
            if (!seen.insert(c.docid).second) {
                throw ContractError("query " + query_id + ": duplicate docid " + c.docid);
            }
        }
    }

    /// Replaces scores with n - rank + 1 so the list order survives run-file tooling.
    void assign_rank_scores()
    {
        const std::size_t n = entries.size();
        for (std::size_t i = 0; i < n; ++i) {
            entries[i].score = static_cast<double>(n - i);
        }
    }

    friend bool operator==(const CandidateList&, const CandidateList&) = default;
};

struct WindowSpec {
    std::size_t window = 20;
    std::size_t stride = 10;
    std::size_t passes = 1;

    void validate() const
    {
        if (stride < 1 || stride > window) {
            throw ContractError("window spec needs 1 <= stride <= window, got stride " + std::to_string(stride) +
                                " and window " + std::to_string(window));
        }
        if (passes < 1) {
            throw ContractError("window spec needs at least one pass");
        }
    }
};

/// Orders a small set of passages for a query. Returns 0-based indices into
/// `passages`, best first; must be a permutation of 0..passages.size()-1.
class ListwiseRanker {
public:
    virtual ~ListwiseRanker() = default;
    virtual std::vector<std::size_t> rank(const std::string& query, std::span<const Candidate> passages) const = 0;
};

/// Scores every passage of a list in one call; higher is better.
class PassageScorer {
public:
    virtual ~PassageScorer() = default;
    virtual std::size_t capacity() const = 0;
    virtual std::vector<double> score(const std::string& query, std::span<const Candidate> passages) const = 0;
};

struct WindowRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const WindowRange&, const WindowRange&) = default;
};

/// Windows from the tail toward the head; the last one always starts at 0.
inline std::vector<WindowRange> plan_windows(std::size_t n, const WindowSpec& spec)
{
    spec.validate();
    if (n < 1) {
        throw ContractError("plan_windows: empty list");
    }
    const std::size_t w = std::min(spec.window, n);
    std::vector<WindowRange> out;
    std::size_t start = n - w;
    for (;;) {
        out.push_back({start, start + w});
        if (start == 0) {
            break;
        }
        start = start > spec.stride ? start - spec.stride : 0;
    }
    return out;
}

namespace detail {

inline void check_permutation(std::span<const std::size_t> perm, std::size_t m, const WindowRange& win,
                              const std::string& query_id)
{
    const auto where = [&] {
        return "query " + query_id + ", window [" + std::to_string(win.begin) + ", " + std::to_string(win.end) + ")";
    };
    if (perm.size() != m) {
        throw ContractError("ranker returned " + std::to_string(perm.size()) + " indices for " + std::to_string(m) +
                            " passages in " + where());
    }
    std::vector<bool> seen(m, false);
    for (std::size_t i : perm) {
        if (i >= m || seen[i]) {
            throw ContractError("ranker output is not a permutation in " + where());
        }
        seen[i] = true;
    }
}

}  // namespace detail

inline CandidateList rerank_sliding(const CandidateList& cands, const ListwiseRanker& ranker, const WindowSpec& spec)
{
    spec.validate();
    CandidateList out = cands;
    if (out.entries.empty()) {
        return out;
    }
    const auto plan = plan_windows(out.size(), spec);
    for (std::size_t pass = 0; pass < spec.passes; ++pass) {
        for (const auto& win : plan) {
            const std::size_t m = win.end - win.begin;
            std::span<const Candidate> view(out.entries.data() + win.begin, m);
            const auto perm = ranker.rank(out.query, view);
            detail::check_permutation(perm, m, win, out.query_id);
            std::vector<Candidate> reordered;
            reordered.reserve(m);
            for (std::size_t i : perm) {
                reordered.push_back(view[i]);
            }
            std::move(reordered.begin(), reordered.end(), out.entries.begin() + static_cast<std::ptrdiff_t>(win.begin));
        }
    }
    return out;
}

/// Single call over the whole list, ordered by descending score (stable on ties).
inline CandidateList rerank_by_scores(const CandidateList& cands, const PassageScorer& scorer, double tie_epsilon = 0.0)
{
    if (cands.size() > scorer.capacity()) {
        throw CapacityError("query " + cands.query_id + " has " + std::to_string(cands.size()) +
                            " candidates, scorer takes at most " + std::to_string(scorer.capacity()));
    }
    CandidateList out = cands;
    if (out.entries.empty()) {
        return out;
    }
    const auto scores = scorer.score(out.query, out.entries);
    if (scores.size() != out.size()) {
        throw ContractError("scorer returned " + std::to_string(scores.size()) + " scores for " +
                            std::to_string(out.size()) + " passages");
    }
    std::vector<PassageScore> ps;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ps.push_back({i, scores[i], 1});
    }
    const auto order = rank_by_score(ps, tie_epsilon);
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.entries[i] = cands.entries[static_cast<std::size_t>(order[i] - 1)];
    }
    return out;
}

/// Sorts by a hidden relevance value (higher first, stable). Perfect within-window ranker for simulation.
class OracleRanker : public ListwiseRanker {
public:
    /// `relevance` is looked up by docid.
    explicit OracleRanker(std::function<double(const std::string&)> relevance) : relevance_(std::move(relevance)) {}

    std::vector<std::size_t> rank(const std::string&, std::span<const Candidate> passages) const override
    {
        std::vector<double> rel;
        rel.reserve(passages.size());
        for (const auto& c : passages) {
            rel.push_back(relevance_(c.docid));
        }
        std::vector<std::size_t> idx(passages.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rel[a] > rel[b]; });
        return idx;
    }

private:
    std::function<double(const std::string&)> relevance_;
};

class IdentityRanker : public ListwiseRanker {
public:
    std::vector<std::size_t> rank(const std::string&, std::span<const Candidate> passages) const override
    {
        std::vector<std::size_t> idx(passages.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
};

class ReversingRanker : public ListwiseRanker {
public:
    std::vector<std::size_t> rank(const std::string&, std::span<const Candidate> passages) const override
    {
        std::vector<std::size_t> idx(passages.size());
        std::iota(idx.rbegin(), idx.rend(), std::size_t{0});
        return idx;
    }
};

}  // namespace fidrank
