#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/eval/trec.hpp"

namespace fidrank::eval {

struct QueryNdcg {
    std::string qid;
    double value = 0.0;
    /// No judged document has relevance > 0, so the value is 0 by convention.
    bool no_relevant = false;
};

struct NdcgReport {
    std::size_t k = 10;
    /// Queries present in both run and qrels, in run order.
    std::vector<QueryNdcg> per_query;
    double mean = 0.0;
    /// Run queries absent from the qrels; excluded from the mean.
    std::vector<std::string> unjudged;

    std::size_t zero_relevance_count() const
    {
        return static_cast<std::size_t>(
            std::count_if(per_query.begin(), per_query.end(), [](const QueryNdcg& q) { return q.no_relevant; }));
    }
};

/// Linear gain rel / log2(rank + 1); ideal DCG from all judged documents of the query.
inline double ndcg_single(std::span<const std::string> ranking, const std::unordered_map<std::string, int>& judged,
                          std::size_t k)
{
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
        const auto it = judged.find(ranking[i]);
        if (it != judged.end() && it->second > 0) {
            dcg += it->second / std::log2(static_cast<double>(i) + 2.0);
        }
    }
    std::vector<int> ideal;
    for (const auto& [doc, rel] : judged) {
        if (rel > 0) {
            ideal.push_back(rel);
        }
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
        idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

inline NdcgReport ndcg_at_k(const Run& run, const Qrels& qrels, std::size_t k = 10)
{
    if (k < 1) {
        throw ContractError("ndcg_at_k: k must be >= 1");
    }
    NdcgReport report;
    report.k = k;
    const auto rankings = run.rankings();
    double total = 0.0;
    for (const auto& qid : run.query_ids()) {
        const auto judged = qrels.judgments.find(qid);
        if (judged == qrels.judgments.end()) {
            report.unjudged.push_back(qid);
            continue;
        }
        QueryNdcg q{qid, 0.0, true};
        for (const auto& [doc, rel] : judged->second) {
            if (rel > 0) {
                q.no_relevant = false;
                break;
            }
        }
        q.value = ndcg_single(rankings.at(qid), judged->second, k);
        total += q.value;
        report.per_query.push_back(q);
    }
    report.mean = report.per_query.empty() ? 0.0 : total / static_cast<double>(report.per_query.size());
    return report;
}

namespace detail {

// Inversions of v by merge sort; v is left sorted.
inline std::uint64_t count_inversions(std::vector<std::size_t>& v, std::vector<std::size_t>& buf, std::size_t lo,
                                      std::size_t hi)
{
    if (hi - lo < 2) {
        return 0;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
    std::size_t i = lo, j = mid, o = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            inv += mid - i;
            buf[o++] = v[j++];
        } else {
            buf[o++] = v[i++];
        }
    }
    while (i < mid) {
        buf[o++] = v[i++];
    }
    while (j < hi) {
        buf[o++] = v[j++];
    }
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return inv;
}

}  // namespace detail

/// (concordant - discordant) / C(n, 2) for two orderings of the same items.
/// Lists of fewer than two items count as perfectly concordant.
template <typename Item>
double kendall_tau(std::span<const Item> a, std::span<const Item> b)
{
    if (a.size() != b.size()) {
        throw ContractError("kendall_tau: orderings have different lengths");
    }
    std::unordered_map<Item, std::size_t> pos;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (!pos.emplace(b[i], i).second) {
            throw ContractError("kendall_tau: repeated item in second ordering");
        }
    }
    std::vector<std::size_t> seq;
    seq.reserve(a.size());
    std::vector<bool> used(b.size(), false);
    for (const auto& item : a) {
        const auto it = pos.find(item);
        if (it == pos.end()) {
            throw ContractError("kendall_tau: orderings cover different items");
        }
        if (used[it->second]) {
            throw ContractError("kendall_tau: repeated item in first ordering");
        }
        used[it->second] = true;
        seq.push_back(it->second);
    }
    const std::size_t n = seq.size();
    if (n < 2) {
        return 1.0;
    }
    std::vector<std::size_t> buf(n);
    const std::uint64_t inv = detail::count_inversions(seq, buf, 0, n);
    const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    return (pairs - 2.0 * static_cast<double>(inv)) / pairs;
}

template <typename Item>
double kendall_tau(const std::vector<Item>& a, const std::vector<Item>& b)
{
    return kendall_tau(std::span<const Item>(a), std::span<const Item>(b));
}

}  // namespace fidrank::eval
