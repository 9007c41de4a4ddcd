#pragma once

#include <cstddef>
#include <vector>

#include "fidrank/errors.hpp"

namespace fidrank {

/// Half-open run of rows in the fused memory belonging to one passage.
struct MemorySpan {
    std::size_t start = 0;
    std::size_t length = 0;

    friend bool operator==(const MemorySpan&, const MemorySpan&) = default;
};

/// Cross-attention weights per (layer, head, step, source token) and value-vector
/// norms per (layer, head, source token), captured during decoding.
class AttentionTrace {
public:
    AttentionTrace() = default;
    AttentionTrace(std::size_t layers, std::size_t heads, std::size_t tokens)
      : layers_(layers), heads_(heads), tokens_(tokens), value_norms_(layers * heads * tokens, 0.0)
    {}

    std::size_t layers() const noexcept { return layers_; }
    std::size_t heads() const noexcept { return heads_; }
    std::size_t tokens() const noexcept { return tokens_; }
    std::size_t steps() const noexcept { return steps_; }

    /// Opens a new decoding step with all weights zero.
    void add_step()
    {
        alpha_.resize(alpha_.size() + layers_ * heads_ * tokens_, 0.0);
        ++steps_;
    }

    double& alpha(std::size_t layer, std::size_t head, std::size_t step, std::size_t token)
    {
        return alpha_[index(layer, head, step, token)];
    }
    double alpha(std::size_t layer, std::size_t head, std::size_t step, std::size_t token) const
    {
        return alpha_[index(layer, head, step, token)];
    }

    double& value_norm(std::size_t layer, std::size_t head, std::size_t token)
    {
        return value_norms_[(layer * heads_ + head) * tokens_ + token];
    }
    double value_norm(std::size_t layer, std::size_t head, std::size_t token) const
    {
        return value_norms_[(layer * heads_ + head) * tokens_ + token];
    }

    /// Contiguous weights over source tokens for one (layer, head, step).
    const double* alpha_row(std::size_t layer, std::size_t head, std::size_t step) const
    {
        return alpha_.data() + index(layer, head, step, 0);
    }
    const double* value_norm_row(std::size_t layer, std::size_t head) const
    {
        return value_norms_.data() + (layer * heads_ + head) * tokens_;
    }

private:
    std::size_t index(std::size_t layer, std::size_t head, std::size_t step, std::size_t token) const
    {
        return ((step * layers_ + layer) * heads_ + head) * tokens_ + token;
    }

    std::size_t layers_ = 0;
    std::size_t heads_ = 0;
    std::size_t tokens_ = 0;
    std::size_t steps_ = 0;
    std::vector<double> alpha_;
    std::vector<double> value_norms_;
};

}  // namespace fidrank
