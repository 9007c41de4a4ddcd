#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/eval/metrics.hpp"
#include "fidrank/model/fid_model.hpp"
#include "fidrank/scoring/scorer.hpp"
#include "fidrank/text/prompt.hpp"
#include "fidrank/text/ranking.hpp"
#include "fidrank/train/data.hpp"
#include "fidrank/window/fid_rankers.hpp"

namespace fidrank::train {

struct TrainConfig {
    std::size_t batch_size = 64;
    double dropout = 0.10;
    double peak_lr = 5e-5;
    std::size_t warmup_steps = 100;
    std::size_t epochs = 1;
    /// Stage-2 augmentation: subsets drawn per example and their largest size.
    std::size_t subset_count = 3;
    std::size_t subset_max = 10;
    /// Window size of the ranker being trained; subsets never exceed it.
    std::size_t window = 20;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t budget = kDefaultBudget;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (batch_size < 1) {
            throw ContractError("train config: batch size must be >= 1");
        }
        if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) {
            throw ContractError("train config: learning rate must be > 0");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw ContractError("train config: dropout must lie in [0, 1)");
        }
        if (subset_max > window) {
            throw ContractError("train config: subset size " + std::to_string(subset_max) + " exceeds window " +
                                std::to_string(window));
        }
        if (subset_count > 0 && subset_max < 2) {
            throw ContractError("train config: subset size must be >= 2");
        }
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
            throw ContractError("train config: betas must lie in [0, 1)");
        }
    }
};

/// Desk-scale schedule for the synthetic tasks. At 64 examples per step and 5e-5 the
/// toy model sees too few updates to leave the uniform-ranking plateau within 20 epochs.
inline TrainConfig toy_train_config()
{
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.peak_lr = 3e-4;
    cfg.dropout = 0.0;
    return cfg;
}

/// Default toy model: desk-scale shape over the built-in word-piece vocabulary.
inline ModelConfig toy_model_config()
{
    ModelConfig cfg;
    cfg.tokenizer = "toy";
    cfg.vocab_size = Vocab::toy().size();
    return cfg;
}

/// Linear warmup to the peak over `warmup_steps`, constant afterwards. Steps are 1-based.
inline double learning_rate(const TrainConfig& cfg, std::size_t step)
{
    if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) {
        return cfg.peak_lr;
    }
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

struct LossPoint {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

/// CSV with header "step,lr,loss".
inline void write_loss_curve(std::ostream& out, std::span<const LossPoint> curve)
{
    out << "step,lr,loss\n";
    for (const auto& p : curve) {
        out << p.step << ',' << eval::detail::format_double(p.lr) << ',' << eval::detail::format_double(p.loss)
            << '\n';
    }
}

inline void write_loss_curve(const std::string& path, std::span<const LossPoint> curve)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write loss curve '" + path + "'");
    }
    write_loss_curve(out, curve);
}

/// Tokenized prompts and target ids (ending in eos) for one example.
struct TrainingExample {
    FidBatch batch;
    std::vector<TokenId> targets;
};

inline TrainingExample make_training_example(const Vocab& vocab, const SyntheticExample& ex,
                                             std::size_t budget = kDefaultBudget)
{
    TrainingExample out;
    if (ex.is_distill()) {
        for (std::size_t i = 0; i < ex.passages.size(); ++i) {
            out.batch.passages.push_back(
                build_distill_prompt(vocab, ex.query, ex.passages[i], static_cast<int>(i) + 1, budget));
        }
        out.targets = vocab.tokenize(ex.teacher);
    } else {
        for (const auto& p : ex.passages) {
            out.batch.passages.push_back(build_score_prompt(vocab, ex.query, p, budget));
        }
        out.targets = vocab.tokenize(ex.answer);
    }
    out.targets.push_back(Vocab::eos_id);
    return out;
}

inline std::vector<TrainingExample> make_training_examples(const Vocab& vocab, const Dataset& data,
                                                           std::size_t budget = kDefaultBudget)
{
    std::vector<TrainingExample> out;
    out.reserve(data.size());
    for (const auto& ex : data) {
        out.push_back(make_training_example(vocab, ex, budget));
    }
    return out;
}

/// Stage 1 trains on the data as given. Stage 2 adds `subset_count` sampled subsets
/// of each distill example; subset sampling is seeded from the config seed.
inline Dataset stage_dataset(const Dataset& data, const TrainConfig& cfg, int stage)
{
    if (stage != 1 && stage != 2) {
        throw ContractError("training stage must be 1 or 2");
    }
    Dataset out = data;
    if (stage == 2) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 2u};
        std::mt19937_64 gen(seq);
        for (const auto& ex : data) {
            if (!ex.is_distill()) {
                continue;
            }
            const std::size_t p_max = std::min(cfg.subset_max, ex.passages.size());
            if (p_max < 2) {
                continue;
            }
            auto subs = sample_subsets(ex, p_max, cfg.subset_count, gen);
            out.insert(out.end(), std::make_move_iterator(subs.begin()), std::make_move_iterator(subs.end()));
        }
    }
    return out;
}

/// Decoupled weight decay Adam.
template <typename T>
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(const ParameterSet<T>& params)
    {
        for (const auto& t : params.tensors()) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }

    std::size_t steps() const noexcept { return t_; }

    /// grads[i] is the gradient of params[i] in parameter order.
    void step(ParameterSet<T>& params, std::span<const Tensor<T>> grads, double lr, const TrainConfig& cfg)
    {
        if (m_.size() != params.size() || grads.size() != params.size()) {
            throw ContractError("AdamW: parameter count changed");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i].data();
            const auto g = grads[i].data();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
                const double pj = static_cast<double>(p[j]);
                p[j] = static_cast<T>(pj - lr * (update + cfg.weight_decay * pj));
            }
        }
    }

private:
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

/// Called after every optimizer step with (step, epoch, loss).
using StepCallback = std::function<void(const LossPoint&, std::size_t epoch)>;

/// Minibatch AdamW on mean token cross-entropy. Example order is reshuffled each
/// epoch; per-example gradients are summed in batch order, so a fixed seed gives
/// identical parameters.
template <typename T>
std::vector<LossPoint> train(FidModel<T>& model, std::span<const TrainingExample> examples, const TrainConfig& cfg,
                             AdamW<T>& opt, const StepCallback& on_step = {})
{
    cfg.validate();
    if (examples.empty()) {
        throw ContractError("train: dataset is empty");
    }
    for (const auto& ex : examples) {
        ex.batch.validate(model.config());
    }
    std::vector<LossPoint> curve;
    std::vector<std::size_t> order(examples.size());
    std::size_t step = opt.steps();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::seed_seq shuffle_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                                  static_cast<std::uint32_t>(epoch), 1u};
        std::mt19937_64 shuffle_rng(shuffle_seq);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            ++step;
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const double lr = learning_rate(cfg, step);
            const BoundParameters<T> w(model.parameters(), true);
            double total = 0.0;
            for (std::size_t b = begin; b < end; ++b) {
                const auto& ex = examples[order[b]];
                std::seed_seq drop_seq{static_cast<std::uint32_t>(cfg.seed),
                                       static_cast<std::uint32_t>(cfg.seed >> 32),
                                       static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(b - begin), 3u};
                std::mt19937_64 drop_rng(drop_seq);
                const DropoutContext drop{cfg.dropout, &drop_rng};
                const Var<T> loss = model.loss(w, ex.batch, ex.targets, drop);
                const double value = static_cast<double>(loss.value().item());
                if (!std::isfinite(value)) {
                    throw DivergenceError(step);
                }
                total += value;
                backward(loss);
            }
            const T inv = T{1} / static_cast<T>(end - begin);
            std::vector<Tensor<T>> grads;
            grads.reserve(w.vars().size());
            for (const auto& v : w.vars()) {
                Tensor<T> g = v.grad();
                for (auto& x : g.data()) {
                    x *= inv;
                }
                grads.push_back(std::move(g));
            }
            opt.step(model.parameters(), grads, lr, cfg);
            curve.push_back({step, lr, total / static_cast<double>(end - begin)});
            if (on_step) {
                on_step(curve.back(), epoch);
            }
        }
    }
    return curve;
}

template <typename T>
std::vector<LossPoint> train(FidModel<T>& model, std::span<const TrainingExample> examples, const TrainConfig& cfg,
                             const StepCallback& on_step = {})
{
    AdamW<T> opt(model.parameters());
    return train(model, examples, cfg, opt, on_step);
}

/// Greedy ranking of one distill example, repaired into a permutation (1-based ids).
template <typename T>
std::vector<int> predict_ranking(const FidModel<T>& model, const Vocab& vocab, const SyntheticExample& ex,
                                 std::size_t budget = kDefaultBudget)
{
    const auto te = make_training_example(vocab, ex, budget);
    const auto memory = model.encode_passages(te.batch);
    const auto result = model.decode_greedy(memory, ranking_decode_limit(vocab, ex.passages.size()));
    return parse_and_repair(vocab.detokenize(result.tokens), static_cast<int>(ex.passages.size()));
}

/// Mean Kendall tau between predicted and teacher rankings.
template <typename T>
double evaluate_distill(const FidModel<T>& model, const Vocab& vocab, const Dataset& data,
                        std::size_t budget = kDefaultBudget)
{
    if (data.empty()) {
        throw ContractError("evaluate_distill: no examples");
    }
    double total = 0.0;
    for (const auto& ex : data) {
        const auto teacher = parse_ranking(ex.teacher, static_cast<int>(ex.passages.size())).permutation();
        total += eval::kendall_tau(predict_ranking(model, vocab, ex, budget), teacher);
    }
    return total / static_cast<double>(data.size());
}

/// Fraction of QA examples whose answer passage is among the top `k` by cross-attention score.
template <typename T>
double evaluate_answer_recall(const FidModel<T>& model, const Vocab& vocab, const Dataset& data, std::size_t k,
                              std::size_t budget = kDefaultBudget, const AggregationConfig& agg = {},
                              std::size_t max_answer_tokens = 8)
{
    if (data.empty()) {
        throw ContractError("evaluate_answer_recall: no examples");
    }
    std::size_t hits = 0;
    for (const auto& ex : data) {
        const auto relevant = ex.answer_passage();
        if (!relevant) {
            throw ContractError("evaluate_answer_recall: example lacks a unique answer passage");
        }
        const auto te = make_training_example(vocab, ex, budget);
        const auto memory = model.encode_passages(te.batch);
        const auto result = model.decode_greedy(memory, max_answer_tokens);
        const auto order = rank_by_score(aggregate_scores(result.trace, memory.offsets, te.batch, agg));
        const auto top = std::min(k, order.size());
        for (std::size_t i = 0; i < top; ++i) {
            if (static_cast<std::size_t>(order[i] - 1) == *relevant) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace fidrank::train
