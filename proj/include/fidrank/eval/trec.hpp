#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "fidrank/errors.hpp"

namespace fidrank::eval {

struct RunEntry {
    std::string qid;
    std::string docid;
    std::size_t rank = 0;
    double score = 0.0;
    std::string tag;

    friend bool operator==(const RunEntry&, const RunEntry&) = default;
};

/// Entries in file order. Per query: ranks 1, 2, ... in sequence, unique docids,
/// scores non-increasing.
struct Run {
    std::vector<RunEntry> entries;

    /// Query ids in order of first appearance.
    std::vector<std::string> query_ids() const
    {
        std::vector<std::string> out;
        std::unordered_set<std::string> seen;
        for (const auto& e : entries) {
            if (seen.insert(e.qid).second) {
                out.push_back(e.qid);
            }
        }
        return out;
    }

    /// Docids of one query in rank order.
    std::unordered_map<std::string, std::vector<std::string>> rankings() const
    {
        std::unordered_map<std::string, std::vector<std::string>> out;
        for (const auto& e : entries) {
            out[e.qid].push_back(e.docid);
        }
        return out;
    }

    friend bool operator==(const Run&, const Run&) = default;
};

/// (qid, docid) -> graded relevance >= 0.
struct Qrels {
    std::unordered_map<std::string, std::unordered_map<std::string, int>> judgments;

    bool has_query(const std::string& qid) const { return judgments.count(qid) != 0; }

    int relevance(const std::string& qid, const std::string& docid) const
    {
        const auto q = judgments.find(qid);
        if (q == judgments.end()) {
            return 0;
        }
        const auto d = q->second.find(docid);
        return d == q->second.end() ? 0 : d->second;
    }
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) {
            ++pos;
        }
        const std::size_t begin = pos;
        while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t' && line[pos] != '\r') {
            ++pos;
        }
        if (pos > begin) {
            out.push_back(line.substr(begin, pos - begin));
        }
    }
    return out;
}

template <typename N>
N parse_number(std::string_view s, const char* what, std::size_t line)
{
    N value{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw DataError(std::string("bad ") + what + " '" + std::string(s) + "'", line);
    }
    return value;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline std::ifstream open_in(const std::string& path, const char* what)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(std::string("cannot open ") + what + " '" + path + "'");
    }
    return in;
}

inline std::ofstream open_out(const std::string& path, const char* what)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError(std::string("cannot write ") + what + " '" + path + "'");
    }
    return out;
}

inline bool blank(std::string_view line)
{
    return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace detail

/// Parses "qid Q0 docid rank score tag" lines; blank lines are skipped.
inline Run read_run(std::istream& in)
{
    struct QueryState {
        std::size_t count = 0;
        double last_score = 0.0;
        std::unordered_set<std::string> docids;
    };
    Run run;
    std::unordered_map<std::string, QueryState> state;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (detail::blank(line)) {
            continue;
        }
        const auto f = detail::split_ws(line);
        if (f.size() != 6) {
            throw DataError("expected 6 columns, found " + std::to_string(f.size()), line_no);
        }
        if (f[1] != "Q0") {
            throw DataError("second column must be Q0, found '" + std::string(f[1]) + "'", line_no);
        }
        RunEntry e;
        e.qid = std::string(f[0]);
        e.docid = std::string(f[2]);
        e.rank = detail::parse_number<std::size_t>(f[3], "rank", line_no);
        e.score = detail::parse_number<double>(f[4], "score", line_no);
        e.tag = std::string(f[5]);
        if (!std::isfinite(e.score)) {
            throw DataError("non-finite score", line_no);
        }
        auto& q = state[e.qid];
        if (e.rank != q.count + 1) {
            throw DataError("query " + e.qid + ": rank " + std::to_string(e.rank) + " where " +
                                std::to_string(q.count + 1) + " was expected",
                            line_no);
        }
        if (!q.docids.insert(e.docid).second) {
            throw DataError("query " + e.qid + ": duplicate docid " + e.docid, line_no);
        }
        if (q.count > 0 && e.score > q.last_score) {
            throw DataError("query " + e.qid + ": score rises at rank " + std::to_string(e.rank), line_no);
        }
        q.count += 1;
        q.last_score = e.score;
        run.entries.push_back(std::move(e));
    }
    return run;
}

inline Run read_run(const std::string& path)
{
    auto in = detail::open_in(path, "run");
    return read_run(in);
}

inline void write_run(std::ostream& out, const Run& run)
{
    for (const auto& e : run.entries) {
        out << e.qid << " Q0 " << e.docid << ' ' << e.rank << ' ' << detail::format_double(e.score) << ' ' << e.tag
            << '\n';
    }
}

inline void write_run(const std::string& path, const Run& run)
{
    auto out = detail::open_out(path, "run");
    write_run(out, run);
}

/// Parses "qid 0 docid rel" lines.
inline Qrels read_qrels(std::istream& in)
{
    Qrels qrels;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (detail::blank(line)) {
            continue;
        }
        const auto f = detail::split_ws(line);
        if (f.size() != 4) {
            throw DataError("expected 4 columns, found " + std::to_string(f.size()), line_no);
        }
        const int rel = detail::parse_number<int>(f[3], "relevance", line_no);
        if (rel < 0) {
            throw DataError("negative relevance " + std::string(f[3]), line_no);
        }
        auto& q = qrels.judgments[std::string(f[0])];
        if (!q.emplace(std::string(f[2]), rel).second) {
            throw DataError("duplicate judgment for " + std::string(f[0]) + " " + std::string(f[2]), line_no);
        }
    }
    return qrels;
}

inline Qrels read_qrels(const std::string& path)
{
    auto in = detail::open_in(path, "qrels");
    return read_qrels(in);
}

/// Sorted by qid then docid so output is stable.
inline void write_qrels(std::ostream& out, const Qrels& qrels)
{
    std::map<std::string, std::map<std::string, int>> sorted;
    for (const auto& [q, docs] : qrels.judgments) {
        sorted[q].insert(docs.begin(), docs.end());
    }
    for (const auto& [q, docs] : sorted) {
        for (const auto& [d, rel] : docs) {
            out << q << " 0 " << d << ' ' << rel << '\n';
        }
    }
}

/// id -> text records kept in file order.
class TextTable {
public:
    struct Record {
        std::string id;
        std::string text;

        friend bool operator==(const Record&, const Record&) = default;
    };

    /// `line` is used only for the duplicate-id message.
    void add(std::string id, std::string text, std::size_t line = 0)
    {
        if (index_.count(id)) {
            throw DataError("duplicate id '" + id + "'", line);
        }
        index_.emplace(id, records_.size());
        records_.push_back({std::move(id), std::move(text)});
    }

    std::size_t size() const noexcept { return records_.size(); }
    const std::vector<Record>& records() const noexcept { return records_; }
    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    const std::string& text(const std::string& id) const
    {
        const auto it = index_.find(id);
        if (it == index_.end()) {
            throw DataError("unknown id '" + id + "'");
        }
        return records_[it->second].text;
    }

    friend bool operator==(const TextTable& a, const TextTable& b) { return a.records_ == b.records_; }

private:
    std::vector<Record> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// JSON lines {"docid": str, "text": str}.
inline TextTable read_corpus(std::istream& in)
{
    TextTable corpus;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (detail::blank(line)) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(std::string("malformed JSON: ") + e.what(), line_no);
        }
        if (!rec.is_object() || !rec.contains("docid") || !rec.contains("text") || !rec["docid"].is_string() ||
            !rec["text"].is_string()) {
            throw DataError("record needs string fields docid and text", line_no);
        }
        corpus.add(rec["docid"].get<std::string>(), rec["text"].get<std::string>(), line_no);
    }
    return corpus;
}

inline TextTable read_corpus(const std::string& path)
{
    auto in = detail::open_in(path, "corpus");
    return read_corpus(in);
}

inline void write_corpus(std::ostream& out, const TextTable& corpus)
{
    for (const auto& r : corpus.records()) {
        nlohmann::ordered_json rec;
        rec["docid"] = r.id;
        rec["text"] = r.text;
        out << rec.dump() << '\n';
    }
}

inline void write_corpus(const std::string& path, const TextTable& corpus)
{
    auto out = detail::open_out(path, "corpus");
    write_corpus(out, corpus);
}

/// Tab-separated "qid<TAB>text".
inline TextTable read_queries(std::istream& in)
{
    TextTable queries;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (detail::blank(line)) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw DataError("expected 'qid<TAB>text'", line_no);
        }
        if (line.find('\t', tab + 1) != std::string::npos) {
            throw DataError("query text contains a tab", line_no);
        }
        queries.add(line.substr(0, tab), line.substr(tab + 1), line_no);
    }
    return queries;
}

inline TextTable read_queries(const std::string& path)
{
    auto in = detail::open_in(path, "queries");
    return read_queries(in);
}

inline void write_queries(std::ostream& out, const TextTable& queries)
{
    for (const auto& r : queries.records()) {
        if (r.text.find_first_of("\t\n\r") != std::string::npos || r.id.find_first_of("\t\n\r") != std::string::npos) {
            throw ContractError("query " + r.id + " cannot be written as TSV");
        }
        out << r.id << '\t' << r.text << '\n';
    }
}

inline void write_queries(const std::string& path, const TextTable& queries)
{
    auto out = detail::open_out(path, "queries");
    write_queries(out, queries);
}

}  // namespace fidrank::eval
