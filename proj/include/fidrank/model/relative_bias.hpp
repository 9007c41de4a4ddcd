#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fidrank/model/config.hpp"
#include "fidrank/numerics/ops.hpp"
#include "fidrank/numerics/tensor.hpp"

namespace fidrank {

enum class AttentionKind { encoder_self, decoder_self, decoder_cross };

/// T5 bucketing of (key position - query position). Small distances get exact
/// buckets, larger ones share log-spaced buckets up to max_distance.
inline std::size_t relative_position_bucket(long relative_position, bool bidirectional, std::size_t num_buckets,
                                            std::size_t max_distance)
{
    std::size_t bucket = 0;
    long n = -relative_position;
    if (bidirectional) {
        num_buckets /= 2;
        if (n < 0) {
            bucket += num_buckets;
        }
        n = std::abs(n);
    } else {
        n = std::max(n, 0L);
    }
    const auto max_exact = static_cast<long>(num_buckets / 2);
    if (n < max_exact) {
        return bucket + static_cast<std::size_t>(n);
    }
    // The epsilon keeps exact powers of the log base in their own bucket.
    const double scaled = std::log(static_cast<double>(n) / static_cast<double>(max_exact)) /
                              std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact)) *
                              static_cast<double>(static_cast<long>(num_buckets) - max_exact) +
                          1e-9;
    const long large = max_exact + static_cast<long>(std::floor(scaled));
    return bucket + static_cast<std::size_t>(std::min(large, static_cast<long>(num_buckets) - 1));
}

/// Row-major [q_len x k_len] bucket grid; query i sits at absolute position q_offset + i.
inline std::vector<std::size_t> bucket_grid(std::size_t q_len, std::size_t k_len, bool bidirectional,
                                            const ModelConfig& cfg, std::size_t q_offset = 0)
{
    std::vector<std::size_t> grid(q_len * k_len);
    for (std::size_t i = 0; i < q_len; ++i) {
        for (std::size_t j = 0; j < k_len; ++j) {
            const long rel = static_cast<long>(j) - static_cast<long>(q_offset + i);
            grid[i * k_len + j] = relative_position_bucket(rel, bidirectional, cfg.rel_buckets, cfg.rel_max_distance);
        }
    }
    return grid;
}

/// Traced bias [heads x q_len x k_len] from a [buckets x heads] table.
template <typename T>
Var<T> relative_bias(const Var<T>& table, std::size_t q_len, std::size_t k_len, AttentionKind kind,
                     const ModelConfig& cfg, std::size_t q_offset = 0)
{
    if (kind == AttentionKind::decoder_cross) {
        return Var<T>::constant(Tensor<T>({cfg.heads, q_len, k_len}, T{0}));
    }
    const auto grid = bucket_grid(q_len, k_len, kind == AttentionKind::encoder_self, cfg, q_offset);
    return ops::gather_bias(table, std::span<const std::size_t>(grid), q_len, k_len);
}

template <typename T>
Tensor<T> relative_bias(const Tensor<T>& table, std::size_t q_len, std::size_t k_len, AttentionKind kind,
                        const ModelConfig& cfg)
{
    NoGradGuard guard;
    return relative_bias(Var<T>::constant(table), q_len, k_len, kind, cfg).value();
}

}  // namespace fidrank
