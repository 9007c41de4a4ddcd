#pragma once

#include <cstddef>
#include <sstream>
#include <string>

#include "fidrank/errors.hpp"

namespace fidrank {

/// Shape of a T5-style encoder-decoder. Defaults are the desk-scale configuration.
struct ModelConfig {
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
    std::size_t vocab_size = 259;
    std::size_t rel_buckets = 32;
    std::size_t rel_max_distance = 128;
    std::size_t max_passages = 100;
    double dropout = 0.10;
    double norm_eps = 1e-6;
    /// "byte", "toy" (built-in word pieces) or "file" (vocabulary supplied separately).
    std::string tokenizer = "byte";

    std::size_t head_dim() const { return d_model / heads; }

    void validate() const
    {
        auto positive = [](std::size_t v, const char* name) {
            if (v < 1) {
                throw ContractError(std::string("model config: ") + name + " must be >= 1");
            }
        };
        positive(encoder_layers, "encoder_layers");
        positive(decoder_layers, "decoder_layers");
        positive(d_model, "d_model");
        positive(heads, "heads");
        positive(d_ff, "d_ff");
        positive(vocab_size, "vocab_size");
        positive(max_passages, "max_passages");
        if (rel_buckets < 4) {
            throw ContractError("model config: rel_buckets must be >= 4");
        }
        if (rel_max_distance < rel_buckets / 2) {
            throw ContractError("model config: rel_max_distance must be >= rel_buckets / 2");
        }
        if (d_model % heads != 0) {
            throw ContractError("model config: d_model must be divisible by heads");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw ContractError("model config: dropout must lie in [0, 1)");
        }
        if (tokenizer != "byte" && tokenizer != "toy" && tokenizer != "file") {
            throw ContractError("model config: unknown tokenizer '" + tokenizer + "'");
        }
        if (!(norm_eps >= 0.0)) {
            throw ContractError("model config: norm_eps must be non-negative");
        }
    }

    /// key=value lines, the checkpoint header.
    std::string to_text() const
    {
        std::ostringstream out;
        out.precision(17);
        out << "encoder_layers=" << encoder_layers << '\n'
            << "decoder_layers=" << decoder_layers << '\n'
            << "d_model=" << d_model << '\n'
            << "heads=" << heads << '\n'
            << "d_ff=" << d_ff << '\n'
            << "vocab_size=" << vocab_size << '\n'
            << "rel_buckets=" << rel_buckets << '\n'
            << "rel_max_distance=" << rel_max_distance << '\n'
            << "max_passages=" << max_passages << '\n'
            << "dropout=" << dropout << '\n'
            << "norm_eps=" << norm_eps << '\n'
            << "tokenizer=" << tokenizer << '\n';
        return out.str();
    }

    static ModelConfig from_text(const std::string& text)
    {
        ModelConfig cfg;
        std::istringstream in(text);
        std::size_t line_no = 0;
        for (std::string line; std::getline(in, line);) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw DataError("model config: expected key=value", line_no);
            }
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            try {
                if (key == "encoder_layers") cfg.encoder_layers = std::stoul(value);
                else if (key == "decoder_layers") cfg.decoder_layers = std::stoul(value);
                else if (key == "d_model") cfg.d_model = std::stoul(value);
                else if (key == "heads") cfg.heads = std::stoul(value);
                else if (key == "d_ff") cfg.d_ff = std::stoul(value);
                else if (key == "vocab_size") cfg.vocab_size = std::stoul(value);
                else if (key == "rel_buckets") cfg.rel_buckets = std::stoul(value);
                else if (key == "rel_max_distance") cfg.rel_max_distance = std::stoul(value);
                else if (key == "max_passages") cfg.max_passages = std::stoul(value);
                else if (key == "dropout") cfg.dropout = std::stod(value);
                else if (key == "norm_eps") cfg.norm_eps = std::stod(value);
                else if (key == "tokenizer") cfg.tokenizer = value;
                else throw DataError("model config: unknown key '" + key + "'", line_no);
            } catch (const std::logic_error&) {
                throw DataError("model config: bad value for '" + key + "'", line_no);
            }
        }
        cfg.validate();
        return cfg;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace fidrank
