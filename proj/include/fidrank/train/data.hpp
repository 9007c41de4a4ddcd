#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <iterator>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fidrank/errors.hpp"
#include "fidrank/text/ranking.hpp"

namespace fidrank::train {

/// One synthetic query. Distill examples carry a teacher ranking string, QA
/// examples an answer that occurs in exactly one passage.
struct SyntheticExample {
    std::string query;
    std::vector<std::string> passages;
    std::string teacher;
    std::string answer;

    bool is_distill() const noexcept { return !teacher.empty(); }

    /// Index of the only passage containing the answer, if exactly one does.
    std::optional<std::size_t> answer_passage() const
    {
        std::optional<std::size_t> found;
        for (std::size_t i = 0; i < passages.size(); ++i) {
            if (passages[i].find(answer) != std::string::npos) {
                if (found) {
                    return std::nullopt;
                }
                found = i;
            }
        }
        return found;
    }

    friend bool operator==(const SyntheticExample&, const SyntheticExample&) = default;
};

using Dataset = std::vector<SyntheticExample>;

inline constexpr std::size_t kQueryLetters = 3;
inline constexpr std::size_t kPassageLetters = 9;

/// Space-separated single letters.
inline std::string join_letters(const std::vector<char>& letters)
{
    std::string out;
    for (std::size_t i = 0; i < letters.size(); ++i) {
        if (i) {
            out += ' ';
        }
        out += letters[i];
    }
    return out;
}

/// Passage tokens that occur among the query tokens.
inline std::size_t overlap_count(const std::string& query, const std::string& passage)
{
    std::size_t n = 0;
    for (char c : passage) {
        if (c != ' ' && query.find(c) != std::string::npos) {
            ++n;
        }
    }
    return n;
}

/// 1-based passage ids by descending overlap, ties by index.
inline std::vector<int> overlap_order(const SyntheticExample& ex)
{
    std::vector<std::size_t> level;
    for (const auto& p : ex.passages) {
        level.push_back(overlap_count(ex.query, p));
    }
    std::vector<int> ids(ex.passages.size());
    std::iota(ids.begin(), ids.end(), 1);
    std::stable_sort(ids.begin(), ids.end(),
                     [&](int a, int b) { return level[static_cast<std::size_t>(a - 1)] > level[static_cast<std::size_t>(b - 1)]; });
    return ids;
}

/// Queries are 3 distinct letters from a..m; each passage is 9 letters of which a
/// chosen number come from the query and the rest from n..z. Levels are distinct
/// while they fit in 0..9.
inline Dataset gen_distill_data(std::size_t n_examples, std::size_t passages_per_example, std::uint64_t seed)
{
    if (passages_per_example < 2 || passages_per_example > 20) {
        throw ContractError("gen_distill_data: passages per example must lie in [2, 20]");
    }
    std::mt19937_64 rng(seed);
    Dataset out;
    out.reserve(n_examples);
    constexpr std::size_t kQueryHalf = 13;
    std::vector<char> alphabet(26);
    std::iota(alphabet.begin(), alphabet.end(), 'a');
    for (std::size_t e = 0; e < n_examples; ++e) {
        std::shuffle(alphabet.begin(), alphabet.begin() + kQueryHalf, rng);
        const std::vector<char> query(alphabet.begin(), alphabet.begin() + kQueryLetters);
        const std::vector<char> others(alphabet.begin() + kQueryHalf, alphabet.end());

        std::vector<std::size_t> levels(kPassageLetters + 1);
        std::iota(levels.begin(), levels.end(), std::size_t{0});
        std::shuffle(levels.begin(), levels.end(), rng);
        std::uniform_int_distribution<std::size_t> any_level(0, kPassageLetters);
        while (levels.size() < passages_per_example) {
            levels.push_back(any_level(rng));
        }
        levels.resize(passages_per_example);

        SyntheticExample ex;
        ex.query = join_letters(query);
        std::uniform_int_distribution<std::size_t> pick_query(0, query.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_other(0, others.size() - 1);
        for (std::size_t level : levels) {
            std::vector<char> letters;
            for (std::size_t i = 0; i < kPassageLetters; ++i) {
                letters.push_back(i < level ? query[pick_query(rng)] : others[pick_other(rng)]);
            }
            std::shuffle(letters.begin(), letters.end(), rng);
            ex.passages.push_back(join_letters(letters));
        }
        ex.teacher = format_ranking(overlap_order(ex));
        out.push_back(std::move(ex));
    }
    return out;
}

/// Passages read "{key} is {answer}" with 2-letter keys and 2-digit answers. The
/// query is the relevant passage's key, drawn from a..m; distractor keys are distinct
/// and drawn from n..z, and no distractor carries the answer.
inline Dataset gen_qa_data(std::size_t n_examples, std::size_t passages_per_example, std::uint64_t seed)
{
    if (passages_per_example < 1 || passages_per_example > 100) {
        throw ContractError("gen_qa_data: passages per example must lie in [1, 100]");
    }
    std::mt19937_64 rng(seed);
    auto word = [&](char first, char last) {
        std::uniform_int_distribution<int> pick(first, last);
        std::string w;
        w += static_cast<char>(pick(rng));
        w += static_cast<char>(pick(rng));
        return w;
    };
    Dataset out;
    out.reserve(n_examples);
    std::uniform_int_distribution<std::size_t> pick(0, passages_per_example - 1);
    for (std::size_t e = 0; e < n_examples; ++e) {
        SyntheticExample ex;
        const std::size_t relevant = pick(rng);
        ex.query = word('a', 'm');
        ex.answer = word('0', '9');
        std::vector<std::string> keys;
        while (keys.size() + 1 < passages_per_example) {
            const std::string k = word('n', 'z');
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
                keys.push_back(k);
            }
        }
        for (std::size_t i = 0, d = 0; i < passages_per_example; ++i) {
            if (i == relevant) {
                ex.passages.push_back(ex.query + " is " + ex.answer);
                continue;
            }
            std::string answer = word('0', '9');
            while (answer == ex.answer) {
                answer = word('0', '9');
            }
            ex.passages.push_back(keys[d++] + " is " + answer);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

struct FilterReport {
    Dataset kept;
    std::size_t removed = 0;
};

/// Drops distill entries whose teacher string does not parse as a permutation of the passages.
inline FilterReport filter_malformed(const Dataset& data)
{
    FilterReport report;
    for (const auto& ex : data) {
        if (!ex.passages.empty() && parse_ranking(ex.teacher, static_cast<int>(ex.passages.size())).well_formed) {
            report.kept.push_back(ex);
        } else {
            ++report.removed;
        }
    }
    return report;
}

/// Restricts a teacher order to `subset` (ascending original indices) and renumbers 1..p.
inline std::vector<int> restrict_permutation(std::span<const int> perm, std::span<const std::size_t> subset)
{
    std::vector<int> new_id(perm.size() + 1, 0);
    for (std::size_t j = 0; j < subset.size(); ++j) {
        new_id[subset[j] + 1] = static_cast<int>(j) + 1;
    }
    std::vector<int> out;
    for (int id : perm) {
        if (new_id[static_cast<std::size_t>(id)] != 0) {
            out.push_back(new_id[static_cast<std::size_t>(id)]);
        }
    }
    return out;
}

/// `count` examples over uniformly drawn subsets of size p in [2, p_max], passages
/// kept in their original relative order.
inline Dataset sample_subsets(const SyntheticExample& ex, std::size_t p_max, std::size_t count, std::mt19937_64& rng)
{
    const std::size_t n = ex.passages.size();
    if (p_max < 2 || p_max > n) {
        throw ContractError("sample_subsets: need 2 <= p_max <= " + std::to_string(n) + ", got " +
                            std::to_string(p_max));
    }
    const auto teacher = parse_ranking(ex.teacher, static_cast<int>(n)).permutation();
    Dataset out;
    std::uniform_int_distribution<std::size_t> size_dist(2, p_max);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t c = 0; c < count; ++c) {
        const std::size_t p = size_dist(rng);
        std::vector<std::size_t> subset;
        std::sample(all.begin(), all.end(), std::back_inserter(subset), p, rng);
        SyntheticExample sub;
        sub.query = ex.query;
        for (std::size_t i : subset) {
            sub.passages.push_back(ex.passages[i]);
        }
        sub.teacher = format_ranking(restrict_permutation(teacher, subset));
        out.push_back(std::move(sub));
    }
    return out;
}

inline Dataset sample_subsets(const SyntheticExample& ex, std::size_t p_max, std::size_t count, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sample_subsets(ex, p_max, count, rng);
}

/// JSON lines {query, passages[], teacher} or {query, passages[], answer}.
inline void write_dataset(std::ostream& out, const Dataset& data)
{
    for (const auto& ex : data) {
        nlohmann::ordered_json rec;
        rec["query"] = ex.query;
        rec["passages"] = ex.passages;
        if (ex.is_distill()) {
            rec["teacher"] = ex.teacher;
        } else {
            rec["answer"] = ex.answer;
        }
        out << rec.dump() << '\n';
    }
}

inline void write_dataset(const std::string& path, const Dataset& data)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write dataset '" + path + "'");
    }
    write_dataset(out, data);
}

inline Dataset read_dataset(std::istream& in)
{
    Dataset data;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(std::string("malformed JSON: ") + e.what(), line_no);
        }
        try {
            SyntheticExample ex;
            ex.query = rec.at("query").get<std::string>();
            ex.passages = rec.at("passages").get<std::vector<std::string>>();
            const bool has_teacher = rec.contains("teacher");
            const bool has_answer = rec.contains("answer");
            if (has_teacher == has_answer) {
                throw DataError("record needs exactly one of teacher and answer", line_no);
            }
            if (has_teacher) {
                ex.teacher = rec["teacher"].get<std::string>();
                if (ex.teacher.empty()) {
                    throw DataError("empty teacher string", line_no);
                }
            } else {
                ex.answer = rec["answer"].get<std::string>();
            }
            data.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("bad record: ") + e.what(), line_no);
        }
    }
    return data;
}

inline Dataset read_dataset(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open dataset '" + path + "'");
    }
    return read_dataset(in);
}

}  // namespace fidrank::train
