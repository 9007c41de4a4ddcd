#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "fidrank/errors.hpp"

namespace fidrank {

/// Why a ranking string is not a permutation of {1..n}. Several flags may be set.
struct RankingDefects {
    bool bad_grammar = false;
    bool out_of_range = false;
    bool duplicate = false;
    bool missing = false;

    bool any() const noexcept { return bad_grammar || out_of_range || duplicate || missing; }
    friend bool operator==(const RankingDefects&, const RankingDefects&) = default;
};

/// Outcome of parse_ranking. When well_formed, `salvage` is the full permutation.
struct ParsedRanking {
    bool well_formed = false;
    RankingDefects defects;
    /// In-range identifiers in order of first occurrence.
    std::vector<int> salvage;

    const std::vector<int>& permutation() const
    {
        if (!well_formed) {
            throw ContractError("permutation() on a malformed ranking");
        }
        return salvage;
    }
};

/// "[a] > [b] > ... > [z]"
inline std::string format_ranking(std::span<const int> perm)
{
    if (perm.empty()) {
        throw ContractError("format_ranking: empty permutation");
    }
    std::unordered_set<int> seen;
    std::string out;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] < 1) {
            throw ContractError("format_ranking: identifier " + std::to_string(perm[i]) + " is not positive");
        }
        if (!seen.insert(perm[i]).second) {
            throw ContractError("format_ranking: duplicate identifier " + std::to_string(perm[i]));
        }
        if (i) {
            out += " > ";
        }
        out += '[' + std::to_string(perm[i]) + ']';
    }
    return out;
}

inline std::string format_ranking(const std::vector<int>& perm) { return format_ranking(std::span<const int>(perm)); }

namespace detail {

// Value of a bracketed decimal; saturates far above any valid identifier.
inline long long parse_digits(std::string_view s)
{
    long long v = 0;
    for (char c : s) {
        v = std::min<long long>(v * 10 + (c - '0'), 1'000'000'000LL);
    }
    return v;
}

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Strict grammar: ws* ID (ws* ">" ws* ID)* ws*, ID = "[" digit+ "]".
inline bool matches_grammar(std::string_view text, std::vector<long long>& ids)
{
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < text.size() && is_space(text[pos])) {
            ++pos;
        }
    };
    auto read_id = [&]() -> bool {
        if (pos >= text.size() || text[pos] != '[') {
            return false;
        }
        const std::size_t begin = ++pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            ++pos;
        }
        if (pos == begin || pos >= text.size() || text[pos] != ']') {
            return false;
        }
        ids.push_back(parse_digits(text.substr(begin, pos - begin)));
        ++pos;
        return true;
    };
    skip_ws();
    if (!read_id()) {
        return false;
    }
    for (;;) {
        skip_ws();
        if (pos == text.size()) {
            return true;
        }
        if (text[pos] != '>') {
            return false;
        }
        ++pos;
        skip_ws();
        if (!read_id()) {
            return false;
        }
    }
}

// Every "[digits]" occurrence, used when the strict grammar fails.
inline std::vector<long long> scan_bracketed(std::string_view text)
{
    std::vector<long long> ids;
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        if (text[pos] != '[') {
            continue;
        }
        std::size_t end = pos + 1;
        while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) {
            ++end;
        }
        if (end > pos + 1 && end < text.size() && text[end] == ']') {
            ids.push_back(parse_digits(text.substr(pos + 1, end - pos - 1)));
            pos = end;
        }
    }
    return ids;
}

}  // namespace detail

/// Parses a ranking string over identifiers 1..n. Malformation is reported, never thrown.
inline ParsedRanking parse_ranking(std::string_view text, int n)
{
    if (n < 1) {
        throw ContractError("parse_ranking: expected count must be >= 1");
    }
    ParsedRanking result;
    std::vector<long long> ids;
    if (!detail::matches_grammar(text, ids)) {
        result.defects.bad_grammar = true;
        ids = detail::scan_bracketed(text);
    }
    std::vector<bool> seen(static_cast<std::size_t>(n) + 1, false);
    for (long long id : ids) {
        if (id < 1 || id > n) {
            result.defects.out_of_range = true;
            continue;
        }
        if (seen[static_cast<std::size_t>(id)]) {
            result.defects.duplicate = true;
            continue;
        }
        seen[static_cast<std::size_t>(id)] = true;
        result.salvage.push_back(static_cast<int>(id));
    }
    result.defects.missing = result.salvage.size() != static_cast<std::size_t>(n);
    result.well_formed = !result.defects.any();
    return result;
}

/// Keeps the salvage order and appends missing identifiers ascending.
inline std::vector<int> repair_ranking(std::span<const int> salvage, int n)
{
    std::vector<bool> seen(static_cast<std::size_t>(std::max(n, 0)) + 1, false);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    for (int id : salvage) {
        if (id >= 1 && id <= n && !seen[static_cast<std::size_t>(id)]) {
            seen[static_cast<std::size_t>(id)] = true;
            out.push_back(id);
        }
    }
    for (int id = 1; id <= n; ++id) {
        if (!seen[static_cast<std::size_t>(id)]) {
            out.push_back(id);
        }
    }
    return out;
}

inline std::vector<int> repair_ranking(const std::vector<int>& salvage, int n)
{
    return repair_ranking(std::span<const int>(salvage), n);
}

/// Parse, then repair whatever was salvageable.
inline std::vector<int> parse_and_repair(std::string_view text, int n)
{
    return repair_ranking(parse_ranking(text, n).salvage, n);
}

}  // namespace fidrank
