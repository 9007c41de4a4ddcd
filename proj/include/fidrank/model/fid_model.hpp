#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/model/config.hpp"
#include "fidrank/model/relative_bias.hpp"
#include "fidrank/model/trace.hpp"
#include "fidrank/numerics/checkpoint.hpp"
#include "fidrank/numerics/ops.hpp"
#include "fidrank/numerics/parameters.hpp"
#include "fidrank/text/prompt.hpp"
#include "fidrank/text/vocab.hpp"

namespace fidrank {

/// One query's per-passage prompts, each encoded on its own.
struct FidBatch {
    std::vector<PromptSpan> passages;

    void validate(const ModelConfig& cfg) const
    {
        if (passages.empty()) {
            throw ContractError("FiD batch has no passages");
        }
        if (passages.size() > cfg.max_passages) {
            throw CapacityError("FiD batch has " + std::to_string(passages.size()) + " passages, model takes at most " +
                                std::to_string(cfg.max_passages));
        }
        for (std::size_t p = 0; p < passages.size(); ++p) {
            const auto& span = passages[p];
            if (span.tokens.empty()) {
                throw ContractError("passage " + std::to_string(p) + " has no tokens");
            }
            for (TokenId id : span.tokens) {
                if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
                    throw IndexError("token id " + std::to_string(id) + " in passage " + std::to_string(p) +
                                     " outside vocabulary of size " + std::to_string(cfg.vocab_size));
                }
            }
        }
    }
};

/// Encoder states of every passage stacked in batch order.
template <typename T>
struct FusedMemory {
    Tensor<T> states;
    std::vector<MemorySpan> offsets;

    std::size_t total_tokens() const { return states.rows(); }
};

struct DecodeResult {
    /// Generated ids without the terminating eos.
    std::vector<TokenId> tokens;
    AttentionTrace trace;
    /// Logits at every executed step (including the one that produced eos).
    std::vector<std::vector<double>> step_logits;
    bool stopped_on_eos = false;
};

/// Dropout switch for traced passes; a null rng means evaluation mode.
struct DropoutContext {
    double rate = 0.0;
    std::mt19937_64* rng = nullptr;

    bool active() const noexcept { return rng != nullptr && rate > 0.0; }
};

/// T5-style encoder-decoder with Fusion-in-Decoder packing: passages are encoded
/// independently with shared weights, the decoder cross-attends over all of them.
template <typename T>
class FidModel {
public:
    using Bound = BoundParameters<T>;

    FidModel(ModelConfig cfg, ParameterSet<T> params) : cfg_(std::move(cfg)), params_(std::move(params))
    {
        cfg_.validate();
        check_parameters();
    }

    /// Fresh weights with T5-style fan-in scaled normal initialization.
    static FidModel initialize(const ModelConfig& cfg, std::uint64_t seed)
    {
        cfg.validate();
        std::mt19937_64 rng(seed);
        ParameterSet<T> params;
        for (auto& [name, shape, stddev] : layout(cfg)) {
            Tensor<T> t(shape, T{1});
            if (stddev > 0.0) {
                std::normal_distribution<double> normal(0.0, stddev);
                for (auto& v : t.data()) {
                    v = static_cast<T>(normal(rng));
                }
            }
            params.add(name, std::move(t));
        }
        return FidModel(cfg, std::move(params));
    }

    static FidModel load(const std::string& path)
    {
        auto loaded = checkpoint::load<T>(path);
        return FidModel(ModelConfig::from_text(loaded.header), std::move(loaded.params));
    }

    void save(const std::string& path) const { checkpoint::save(path, cfg_.to_text(), params_); }

    const ModelConfig& config() const noexcept { return cfg_; }
    const ParameterSet<T>& parameters() const noexcept { return params_; }
    ParameterSet<T>& parameters() noexcept { return params_; }

    // ---- traced passes -------------------------------------------------------

    /// Encoder stack over one prompt: [tokens x d_model].
    Var<T> encode_passage(const Bound& w, std::span<const TokenId> tokens, const DropoutContext& drop = {}) const
    {
        Var<T> x = maybe_dropout(ops::embedding(w["shared.embedding"], tokens), drop);
        const std::size_t len = tokens.size();
        const Var<T> bias = relative_bias(w["encoder.rel_bias"], len, len, AttentionKind::encoder_self, cfg_);
        for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
            const std::string p = "encoder." + std::to_string(l);
            x = residual_attention(w, p + ".self", x, nullptr, &bias, nullptr, drop, nullptr);
            x = residual_ff(w, p + ".ff", x, drop);
        }
        return maybe_dropout(norm(w, "encoder.final_norm", x), drop);
    }

    /// Concatenated encoder states of every passage, in batch order.
    Var<T> encode(const Bound& w, const FidBatch& batch, const DropoutContext& drop = {}) const
    {
        batch.validate(cfg_);
        std::vector<Var<T>> parts;
        parts.reserve(batch.passages.size());
        for (const auto& span : batch.passages) {
            parts.push_back(encode_passage(w, span.tokens, drop));
        }
        return parts.size() == 1 ? parts.front() : ops::concat_rows(parts);
    }

    /// Teacher-forced decoder logits [targets x vocab]. Position t sees targets < t only.
    Var<T> decoder_logits(const Bound& w, const Var<T>& memory, std::span<const TokenId> targets,
                          const DropoutContext& drop = {}) const
    {
        if (targets.empty()) {
            throw ContractError("decoder_logits: target sequence is empty");
        }
        std::vector<TokenId> inputs;
        inputs.reserve(targets.size());
        inputs.push_back(Vocab::pad_id);
        inputs.insert(inputs.end(), targets.begin(), targets.end() - 1);
        const std::size_t len = inputs.size();
        Var<T> x = maybe_dropout(ops::embedding(w["shared.embedding"], std::span<const TokenId>(inputs)), drop);
        const Var<T> bias = relative_bias(w["decoder.rel_bias"], len, len, AttentionKind::decoder_self, cfg_);
        const Var<T> mask = Var<T>::constant(causal_mask(len));
        for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
            const std::string p = "decoder." + std::to_string(l);
            x = residual_attention(w, p + ".self", x, nullptr, &bias, &mask, drop, nullptr);
            x = residual_attention(w, p + ".cross", x, &memory, nullptr, nullptr, drop, nullptr);
            x = residual_ff(w, p + ".ff", x, drop);
        }
        x = maybe_dropout(norm(w, "decoder.final_norm", x), drop);
        return ops::matmul(x, w["lm_head"]);
    }

    /// Mean token cross-entropy of `targets` given the batch.
    Var<T> loss(const Bound& w, const FidBatch& batch, std::span<const TokenId> targets,
                const DropoutContext& drop = {}) const
    {
        check_targets(targets);
        const Var<T> memory = encode(w, batch, drop);
        return ops::cross_entropy(decoder_logits(w, memory, targets, drop), targets);
    }

    // ---- inference -------------------------------------------------------------

    FusedMemory<T> encode_passages(const FidBatch& batch) const
    {
        NoGradGuard guard;
        const Bound w(params_, false);
        batch.validate(cfg_);
        FusedMemory<T> memory;
        std::vector<Var<T>> parts;
        std::size_t at = 0;
        for (const auto& span : batch.passages) {
            parts.push_back(encode_passage(w, span.tokens));
            memory.offsets.push_back({at, span.tokens.size()});
            at += span.tokens.size();
        }
        memory.states = parts.size() == 1 ? parts.front().value() : ops::concat_rows(parts).value();
        return memory;
    }

    Tensor<T> forward_logits(const FidBatch& batch, std::span<const TokenId> targets) const
    {
        check_targets(targets);
        NoGradGuard guard;
        const Bound w(params_, false);
        return decoder_logits(w, encode(w, batch), targets).value();
    }

    Tensor<T> forward_logits(const FusedMemory<T>& memory, std::span<const TokenId> targets) const
    {
        check_targets(targets);
        NoGradGuard guard;
        const Bound w(params_, false);
        return decoder_logits(w, Var<T>::constant(memory.states), targets).value();
    }

    /// Greedy argmax decoding (lowest id wins ties) with cross-attention capture.
    DecodeResult decode_greedy(const FusedMemory<T>& memory, std::size_t max_steps) const
    {
        if (max_steps < 1) {
            throw ContractError("decode_greedy: max_steps must be >= 1");
        }
        NoGradGuard guard;
        const Bound w(params_, false);
        const std::size_t layers = cfg_.decoder_layers;
        const std::size_t heads = cfg_.heads;
        const std::size_t dh = cfg_.head_dim();
        const std::size_t n_src = memory.total_tokens();
        const Var<T> mem = Var<T>::constant(memory.states);

        DecodeResult result;
        result.trace = AttentionTrace(layers, heads, n_src);

        std::vector<Var<T>> cross_k(layers), cross_v(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            const std::string p = "decoder." + std::to_string(l) + ".cross";
            cross_k[l] = ops::split_heads(ops::matmul(mem, w[p + ".k"]), heads);
            cross_v[l] = ops::split_heads(ops::matmul(mem, w[p + ".v"]), heads);
            const auto& v = cross_v[l].value();
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t n = 0; n < n_src; ++n) {
                    double ss = 0.0;
                    for (std::size_t j = 0; j < dh; ++j) {
                        const double e = static_cast<double>(v[(h * n_src + n) * dh + j]);
                        ss += e * e;
                    }
                    result.trace.value_norm(l, h, n) = std::sqrt(ss);
                }
            }
        }

        std::vector<std::vector<Var<T>>> self_k(layers), self_v(layers);
        TokenId previous = Vocab::pad_id;
        for (std::size_t step = 0; step < max_steps; ++step) {
            result.trace.add_step();
            const TokenId ids[1] = {previous};
            Var<T> x = ops::embedding(w["shared.embedding"], std::span<const TokenId>(ids));
            for (std::size_t l = 0; l < layers; ++l) {
                const std::string p = "decoder." + std::to_string(l);
                // Self-attention over the cached prefix plus this position.
                {
                    const Var<T> h = norm(w, p + ".self.norm", x);
                    self_k[l].push_back(ops::matmul(h, w[p + ".self.k"]));
                    self_v[l].push_back(ops::matmul(h, w[p + ".self.v"]));
                    const Var<T> k = ops::split_heads(stack(self_k[l]), heads);
                    const Var<T> v = ops::split_heads(stack(self_v[l]), heads);
                    const Var<T> q = ops::split_heads(ops::matmul(h, w[p + ".self.q"]), heads);
                    const Var<T> bias = relative_bias(w["decoder.rel_bias"], 1, step + 1, AttentionKind::decoder_self,
                                                      cfg_, step);
                    x = ops::add(x, attend(w, p + ".self", q, k, v, &bias, nullptr, nullptr));
                }
                {
                    const Var<T> h = norm(w, p + ".cross.norm", x);
                    const Var<T> q = ops::split_heads(ops::matmul(h, w[p + ".cross.q"]), heads);
                    Tensor<T> probs;
                    x = ops::add(x, attend(w, p + ".cross", q, cross_k[l], cross_v[l], nullptr, nullptr, &probs));
                    for (std::size_t hd = 0; hd < heads; ++hd) {
                        for (std::size_t n = 0; n < n_src; ++n) {
                            result.trace.alpha(l, hd, step, n) = static_cast<double>(probs[hd * n_src + n]);
                        }
                    }
                }
                x = residual_ff(w, p + ".ff", x, {});
            }
            const Tensor<T> logits = ops::matmul(norm(w, "decoder.final_norm", x), w["lm_head"]).value();
            std::vector<double> row(logits.size());
            std::size_t best = 0;
            for (std::size_t j = 0; j < logits.size(); ++j) {
                row[j] = static_cast<double>(logits[j]);
                if (logits[j] > logits[best]) {
                    best = j;
                }
            }
            result.step_logits.push_back(std::move(row));
            const auto token = static_cast<TokenId>(best);
            if (token == Vocab::eos_id) {
                result.stopped_on_eos = true;
                break;
            }
            result.tokens.push_back(token);
            previous = token;
        }
        return result;
    }

private:
    struct Slot {
        std::string name;
        Shape shape;
        double stddev;  // 0 means constant ones
    };

    // Attention logits are unscaled, so positional preferences need biases of several
    // units; at fan-in scale they take thousands of small Adam steps to appear.
    static constexpr double kRelBiasInitStd = 3.0;

    static std::vector<Slot> layout(const ModelConfig& cfg)
    {
        const double d = static_cast<double>(cfg.d_model);
        const double dh = static_cast<double>(cfg.head_dim());
        const double ff = static_cast<double>(cfg.d_ff);
        const std::size_t dm = cfg.d_model;
        std::vector<Slot> slots;
        slots.push_back({"shared.embedding", {cfg.vocab_size, dm}, 1.0});
        auto attention = [&](const std::string& p) {
            slots.push_back({p + ".norm", {dm}, 0.0});
            slots.push_back({p + ".q", {dm, dm}, 1.0 / std::sqrt(d * dh)});
            slots.push_back({p + ".k", {dm, dm}, 1.0 / std::sqrt(d)});
            slots.push_back({p + ".v", {dm, dm}, 1.0 / std::sqrt(d)});
            slots.push_back({p + ".o", {dm, dm}, 1.0 / std::sqrt(d)});
        };
        auto feed_forward = [&](const std::string& p) {
            slots.push_back({p + ".norm", {dm}, 0.0});
            slots.push_back({p + ".wi", {dm, cfg.d_ff}, 1.0 / std::sqrt(d)});
            slots.push_back({p + ".wo", {cfg.d_ff, dm}, 1.0 / std::sqrt(ff)});
        };
        slots.push_back({"encoder.rel_bias", {cfg.rel_buckets, cfg.heads}, kRelBiasInitStd});
        for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
            attention("encoder." + std::to_string(l) + ".self");
            feed_forward("encoder." + std::to_string(l) + ".ff");
        }
        slots.push_back({"encoder.final_norm", {dm}, 0.0});
        slots.push_back({"decoder.rel_bias", {cfg.rel_buckets, cfg.heads}, kRelBiasInitStd});
        for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
            attention("decoder." + std::to_string(l) + ".self");
            attention("decoder." + std::to_string(l) + ".cross");
            feed_forward("decoder." + std::to_string(l) + ".ff");
        }
        slots.push_back({"decoder.final_norm", {dm}, 0.0});
        // Small output projection so an untrained model predicts near-uniformly.
        slots.push_back({"lm_head", {dm, cfg.vocab_size}, 0.1 / std::sqrt(d)});
        return slots;
    }

    void check_parameters() const
    {
        for (const auto& slot : layout(cfg_)) {
            if (!params_.contains(slot.name)) {
                throw DataError("missing parameter '" + slot.name + "'");
            }
            if (params_[slot.name].shape() != slot.shape) {
                throw DimensionError("parameter '" + slot.name + "' has shape " +
                                     shape_str(params_[slot.name].shape()) + ", expected " + shape_str(slot.shape));
            }
        }
        if (params_.size() != layout(cfg_).size()) {
            throw DataError("unexpected extra parameters in model");
        }
    }

    void check_targets(std::span<const TokenId> targets) const
    {
        if (targets.empty()) {
            throw ContractError("target sequence is empty");
        }
        for (TokenId id : targets) {
            if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
                throw IndexError("target id " + std::to_string(id) + " outside vocabulary");
            }
        }
    }

    static Tensor<T> causal_mask(std::size_t len)
    {
        Tensor<T> mask({len, len}, T{0});
        for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t j = i + 1; j < len; ++j) {
                mask.at(i, j) = static_cast<T>(-1e9);
            }
        }
        return mask;
    }

    static Var<T> stack(const std::vector<Var<T>>& rows)
    {
        return rows.size() == 1 ? rows.front() : ops::concat_rows(rows);
    }

    Var<T> maybe_dropout(const Var<T>& x, const DropoutContext& drop) const
    {
        return drop.active() ? ops::dropout(x, drop.rate, *drop.rng) : x;
    }

    Var<T> norm(const Bound& w, const std::string& name, const Var<T>& x) const
    {
        return ops::rms_norm(x, w[name], static_cast<T>(cfg_.norm_eps));
    }

    // softmax(q k^T + bias + mask) v, heads merged and projected by `.o`.
    // `probs_out`, when given, receives the attention weights [heads x q x k].
    Var<T> attend(const Bound& w, const std::string& p, const Var<T>& q, const Var<T>& k, const Var<T>& v,
                  const Var<T>* bias, const Var<T>* mask, Tensor<T>* probs_out) const
    {
        Var<T> scores = ops::matmul_nt(q, k);
        if (bias) {
            scores = ops::add(scores, *bias);
        }
        if (mask) {
            scores = ops::add(scores, broadcast_heads(*mask));
        }
        const Var<T> probs = ops::softmax_last(scores);
        if (probs_out) {
            *probs_out = probs.value();
        }
        return ops::matmul(ops::merge_heads(ops::matmul(probs, v)), w[p + ".o"]);
    }

    Var<T> broadcast_heads(const Var<T>& mask) const
    {
        const auto& m = mask.value();
        Tensor<T> out({cfg_.heads, m.dim(0), m.dim(1)});
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            std::copy(m.data().begin(), m.data().end(), out.data().begin() + h * m.size());
        }
        return Var<T>::constant(std::move(out));
    }

    // x + dropout(attention(norm(x), source)) where source defaults to norm(x).
    Var<T> residual_attention(const Bound& w, const std::string& p, const Var<T>& x, const Var<T>* memory,
                              const Var<T>* bias, const Var<T>* mask, const DropoutContext& drop,
                              Tensor<T>* probs_out) const
    {
        const Var<T> h = norm(w, p + ".norm", x);
        const Var<T>& source = memory ? *memory : h;
        const Var<T> q = ops::split_heads(ops::matmul(h, w[p + ".q"]), cfg_.heads);
        const Var<T> k = ops::split_heads(ops::matmul(source, w[p + ".k"]), cfg_.heads);
        const Var<T> v = ops::split_heads(ops::matmul(source, w[p + ".v"]), cfg_.heads);
        return ops::add(x, maybe_dropout(attend(w, p, q, k, v, bias, mask, probs_out), drop));
    }

    Var<T> residual_ff(const Bound& w, const std::string& p, const Var<T>& x, const DropoutContext& drop) const
    {
        const Var<T> h = norm(w, p + ".norm", x);
        const Var<T> hidden = maybe_dropout(ops::relu(ops::matmul(h, w[p + ".wi"])), drop);
        return ops::add(x, maybe_dropout(ops::matmul(hidden, w[p + ".wo"]), drop));
    }

    ModelConfig cfg_;
    ParameterSet<T> params_;
};

}  // namespace fidrank
