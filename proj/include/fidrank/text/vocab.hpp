#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fidrank/errors.hpp"

namespace fidrank {

using TokenId = std::int32_t;

/// Token table with three leading specials. The byte-level backend maps byte b to
/// id 3 + b and round-trips any byte string; the file backend segments by longest match.
class Vocab {
public:
    static constexpr TokenId pad_id = 0;
    static constexpr TokenId eos_id = 1;
    static constexpr TokenId unk_id = 2;
    static constexpr TokenId num_specials = 3;

    static Vocab byte_level()
    {
        Vocab v;
        v.byte_level_ = true;
        v.add_specials();
        for (int b = 0; b < 256; ++b) {
            v.pieces_.emplace_back(1, static_cast<char>(b));
        }
        return v;
    }

    /// Word-level pieces for the synthetic tasks: prompt scaffolding, "[1]".."[20]",
    /// " > ", space-prefixed letters, and every printable ASCII character as a fallback.
    static Vocab toy()
    {
        std::vector<std::string> lines = {"Search Query: ", " Passage: ", " Relevance Ranking:", "question: ",
                                          " context: ", " is ", " > "};
        for (int i = 1; i <= 20; ++i) {
            lines.push_back("[" + std::to_string(i) + "]");
        }
        for (char c = 'a'; c <= 'z'; ++c) {
            lines.push_back(std::string(" ") + c);
        }
        for (char c = ' '; c <= '~'; ++c) {
            lines.emplace_back(1, c);
        }
        return from_lines(lines);
    }

    /// One token string per line; line i (0-based) becomes id num_specials + i.
    static Vocab from_lines(const std::vector<std::string>& lines)
    {
        Vocab v;
        v.add_specials();
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const std::string& piece = lines[i];
            if (piece.empty()) {
                throw DataError("empty vocabulary entry", i + 1);
            }
            if (!v.lookup_.emplace(piece, static_cast<TokenId>(v.pieces_.size())).second) {
                throw DataError("duplicate vocabulary entry '" + piece + "'", i + 1);
            }
            v.max_piece_ = std::max(v.max_piece_, piece.size());
            v.pieces_.push_back(piece);
        }
        return v;
    }

    static Vocab from_file(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw DataError("cannot open vocabulary '" + path + "'");
        }
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);) {
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            lines.push_back(line);
        }
        return from_lines(lines);
    }

    std::size_t size() const noexcept { return pieces_.size(); }
    bool is_byte_level() const noexcept { return byte_level_; }

    const std::string& piece(TokenId id) const
    {
        check_id(id);
        return pieces_[static_cast<std::size_t>(id)];
    }

    std::vector<TokenId> tokenize(std::string_view text) const
    {
        std::vector<TokenId> ids;
        ids.reserve(text.size());
        if (byte_level_) {
            for (unsigned char c : text) {
                ids.push_back(num_specials + static_cast<TokenId>(c));
            }
            return ids;
        }
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t len = std::min(max_piece_, text.size() - pos);
            bool matched = false;
            for (; len > 0; --len) {
                auto it = lookup_.find(std::string(text.substr(pos, len)));
                if (it != lookup_.end()) {
                    ids.push_back(it->second);
                    pos += len;
                    matched = true;
                    break;
                }
            }
            if (!matched) {
                ids.push_back(unk_id);
                pos += utf8_length(static_cast<unsigned char>(text[pos]));
            }
        }
        return ids;
    }

    /// Pad and eos render as nothing; unk renders as U+FFFD.
    std::string detokenize(std::span<const TokenId> ids) const
    {
        std::string out;
        for (TokenId id : ids) {
            check_id(id);
            if (id == pad_id || id == eos_id) {
                continue;
            }
            out += id == unk_id ? std::string("\xEF\xBF\xBD") : pieces_[static_cast<std::size_t>(id)];
        }
        return out;
    }

    std::string detokenize(const std::vector<TokenId>& ids) const { return detokenize(std::span<const TokenId>(ids)); }

private:
    Vocab() = default;

    void add_specials()
    {
        pieces_ = {"<pad>", "</s>", "<unk>"};
    }

    void check_id(TokenId id) const
    {
        if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(pieces_.size()));
        }
    }

    static std::size_t utf8_length(unsigned char lead)
    {
        if (lead >= 0xF0) return 4;
        if (lead >= 0xE0) return 3;
        if (lead >= 0xC0) return 2;
        return 1;
    }

    bool byte_level_ = false;
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, TokenId> lookup_;
    std::size_t max_piece_ = 0;
};

}  // namespace fidrank
