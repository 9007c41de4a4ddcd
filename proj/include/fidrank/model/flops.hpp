#pragma once

#include <cstddef>
#include <cstdint>

#include "fidrank/errors.hpp"
#include "fidrank/model/config.hpp"

namespace fidrank {

/// Multiply-add counts for one teacher-forced reranking forward.
struct FlopCount {
    std::uint64_t encoder = 0;
    std::uint64_t decoder = 0;

    std::uint64_t total() const noexcept { return encoder + decoder; }
};

/// Analytic MACs of the matrix products in one forward over n_passages prompts of
/// tokens_per_passage tokens, decoding output_len positions. The encoder term is
/// linear in passages; the cross-attention term is linear in total source tokens.
inline FlopCount count_flops(const ModelConfig& cfg, std::size_t n_passages, std::size_t tokens_per_passage,
                             std::size_t output_len)
{
    if (n_passages < 1 || tokens_per_passage < 1 || output_len < 1) {
        throw ContractError("count_flops: all sizes must be >= 1");
    }
    const std::uint64_t d = cfg.d_model;
    const std::uint64_t ff = cfg.d_ff;
    const std::uint64_t len = tokens_per_passage;
    const std::uint64_t out = output_len;
    const std::uint64_t src = static_cast<std::uint64_t>(n_passages) * len;

    // q,k,v,o projections + scores + weighted values + two feed-forward products
    const std::uint64_t enc_layer = 4 * len * d * d + 2 * len * len * d + 2 * len * d * ff;

    const std::uint64_t self_attn = 4 * out * d * d + 2 * out * out * d;
    const std::uint64_t cross_attn = 2 * out * d * d + 2 * src * d * d + 2 * out * src * d;
    const std::uint64_t dec_ff = 2 * out * d * ff;

    FlopCount count;
    count.encoder = static_cast<std::uint64_t>(n_passages) * cfg.encoder_layers * enc_layer;
    count.decoder = cfg.decoder_layers * (self_attn + cross_attn + dec_ff) + out * d * cfg.vocab_size;
    return count;
}

}  // namespace fidrank
