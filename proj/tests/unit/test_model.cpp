#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fidrank/model/fid_model.hpp"
#include "fidrank/model/flops.hpp"

using namespace fidrank;

namespace {

ModelConfig tiny_config()
{
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 24;
    cfg.vocab_size = 40;
    cfg.rel_buckets = 8;
    cfg.rel_max_distance = 20;
    return cfg;
}

PromptSpan span_of(std::vector<TokenId> tokens, std::size_t start = 0)
{
    PromptSpan s;
    s.tokens = std::move(tokens);
    s.passage_start = start;
    return s;
}

FidBatch random_batch(std::mt19937_64& rng, std::size_t passages, std::size_t vocab, std::size_t min_len = 3,
                      std::size_t max_len = 9)
{
    std::uniform_int_distribution<std::size_t> len(min_len, max_len);
    std::uniform_int_distribution<TokenId> tok(3, static_cast<TokenId>(vocab) - 1);
    FidBatch batch;
    for (std::size_t p = 0; p < passages; ++p) {
        std::vector<TokenId> ids(len(rng));
        for (auto& t : ids) {
            t = tok(rng);
        }
        batch.passages.push_back(span_of(std::move(ids), 1));
    }
    return batch;
}

// Bucket oracle from thresholds: the log-spaced bucket b (b >= max_exact) starts at
// distance max_exact * (max_distance / max_exact)^((b - max_exact) / (buckets - max_exact)).
std::size_t oracle_bucket(long rel, bool bidirectional, std::size_t buckets, std::size_t max_distance)
{
    std::size_t offset = 0;
    long n = -rel;
    if (bidirectional) {
        buckets /= 2;
        if (n < 0) {
            offset = buckets;
        }
        n = std::labs(n);
    } else if (n < 0) {
        n = 0;
    }
    const long exact = static_cast<long>(buckets / 2);
    if (n < exact) {
        return offset + static_cast<std::size_t>(n);
    }
    std::size_t b = static_cast<std::size_t>(exact);
    for (std::size_t next = b + 1; next < buckets; ++next) {
        const long double start =
            exact * std::pow(static_cast<long double>(max_distance) / exact,
                             static_cast<long double>(next - static_cast<std::size_t>(exact)) /
                                 static_cast<long double>(buckets - static_cast<std::size_t>(exact)));
        if (static_cast<long double>(n) + 1e-9L >= start) {
            b = next;
        }
    }
    return offset + b;
}

}  // namespace

TEST(ModelConfigTest, ValidationAndTextRoundTrip)
{
    ModelConfig cfg = tiny_config();
    cfg.tokenizer = "toy";
    EXPECT_EQ(ModelConfig::from_text(cfg.to_text()), cfg);
    ModelConfig bad = cfg;
    bad.heads = 3;
    EXPECT_THROW(bad.validate(), ContractError);
    bad = cfg;
    bad.tokenizer = "sentencepiece";
    EXPECT_THROW(bad.validate(), ContractError);
    EXPECT_THROW(ModelConfig::from_text("d_model=x\n"), DataError);
    EXPECT_THROW(ModelConfig::from_text("colour=blue\n"), DataError);
}

TEST(RelativeBias, SingleCellUsesBucketZero)
{
    const auto cfg = tiny_config();
    Tensor<double> table({cfg.rel_buckets, cfg.heads});
    std::iota(table.data().begin(), table.data().end(), 1.0);
    const auto bias = relative_bias(table, 1, 1, AttentionKind::encoder_self, cfg);
    ASSERT_EQ(bias.shape(), (Shape{cfg.heads, 1, 1}));
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        EXPECT_EQ(bias[h], table.at(0, h));
    }
}

TEST(RelativeBias, DiagonalIsTranslationInvariant)
{
    const auto cfg = tiny_config();
    for (bool bidirectional : {true, false}) {
        const auto grid = bucket_grid(12, 12, bidirectional, cfg);
        for (std::size_t i = 0; i < 12; ++i) {
            EXPECT_EQ(grid[i * 12 + i], grid[0]);
            if (i + 3 < 12) {
                EXPECT_EQ(grid[i * 12 + i + 3], grid[3]);
            }
        }
    }
}

TEST(RelativeBias, BucketsMatchThresholdOracle)
{
    for (std::size_t buckets : {8u, 16u, 32u}) {
        for (std::size_t max_distance : {20u, 64u, 128u}) {
            for (long rel = -64; rel <= 64; ++rel) {
                for (bool bidirectional : {true, false}) {
                    ASSERT_EQ(relative_position_bucket(rel, bidirectional, buckets, max_distance),
                              oracle_bucket(rel, bidirectional, buckets, max_distance))
                        << "rel " << rel << " buckets " << buckets << " max " << max_distance << " bi "
                        << bidirectional;
                }
            }
        }
    }
}

TEST(RelativeBias, CrossAttentionHasNoBias)
{
    const auto cfg = tiny_config();
    Tensor<double> table({cfg.rel_buckets, cfg.heads}, 5.0);
    const auto bias = relative_bias(table, 3, 7, AttentionKind::decoder_cross, cfg);
    for (double v : bias.data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(FidModelTest, InitializationIsSeedDeterministic)
{
    const auto a = FidModel<double>::initialize(tiny_config(), 3);
    const auto b = FidModel<double>::initialize(tiny_config(), 3);
    const auto c = FidModel<double>::initialize(tiny_config(), 4);
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_FALSE(a.parameters() == c.parameters());
}

TEST(FidModelTest, SinglePassageSpan)
{
    const auto model = FidModel<double>::initialize(tiny_config(), 1);
    FidBatch batch;
    batch.passages.push_back(span_of({5, 6, 7, 8}));
    const auto memory = model.encode_passages(batch);
    ASSERT_EQ(memory.offsets.size(), 1u);
    EXPECT_EQ(memory.offsets[0], (MemorySpan{0, 4}));
    EXPECT_EQ(memory.states.shape(), (Shape{4, 16}));
}

TEST(FidModelTest, PassagesAreEncodedIndependently)
{
    const auto model = FidModel<double>::initialize(tiny_config(), 2);
    std::mt19937_64 rng(2);
    const auto batch = random_batch(rng, 4, 40);
    const auto memory = model.encode_passages(batch);

    FidBatch reversed;
    reversed.passages.assign(batch.passages.rbegin(), batch.passages.rend());
    const auto rmem = model.encode_passages(reversed);
    for (std::size_t p = 0; p < 4; ++p) {
        const auto& a = memory.offsets[p];
        const auto& b = rmem.offsets[3 - p];
        ASSERT_EQ(a.length, b.length);
        for (std::size_t r = 0; r < a.length; ++r) {
            const auto x = memory.states.row(a.start + r);
            const auto y = rmem.states.row(b.start + r);
            ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
        }
    }

    // Mutating another passage leaves passage 0 bit-identical.
    FidBatch mutated = batch;
    for (auto& t : mutated.passages[2].tokens) {
        t = 4;
    }
    const auto mmem = model.encode_passages(mutated);
    for (std::size_t r = 0; r < memory.offsets[0].length; ++r) {
        const auto x = memory.states.row(r);
        const auto y = mmem.states.row(r);
        ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    }
}

TEST(FidModelTest, SeparateEncodingDiffersFromJointEncoding)
{
    const auto model = FidModel<double>::initialize(tiny_config(), 3);
    std::mt19937_64 rng(3);
    const auto batch = random_batch(rng, 3, 40);
    const auto memory = model.encode_passages(batch);
    std::vector<TokenId> joined;
    for (const auto& s : batch.passages) {
        joined.insert(joined.end(), s.tokens.begin(), s.tokens.end());
    }
    NoGradGuard guard;
    const BoundParameters<double> w(model.parameters(), false);
    const auto joint = model.encode_passage(w, joined).value();
    ASSERT_EQ(joint.shape(), memory.states.shape());
    for (std::size_t p = 0; p < 3; ++p) {
        double diff = 0.0;
        for (std::size_t r = 0; r < memory.offsets[p].length; ++r) {
            for (std::size_t c = 0; c < 16; ++c) {
                diff = std::max(diff, std::abs(joint.at(memory.offsets[p].start + r, c) -
                                               memory.states.at(memory.offsets[p].start + r, c)));
            }
        }
        EXPECT_GT(diff, 1e-6) << "passage " << p;
    }
}

TEST(FidModelTest, BatchValidation)
{
    auto cfg = tiny_config();
    cfg.max_passages = 2;
    const auto model = FidModel<double>::initialize(cfg, 4);
    std::mt19937_64 rng(4);
    EXPECT_THROW(model.encode_passages(FidBatch{}), ContractError);
    EXPECT_THROW(model.encode_passages(random_batch(rng, 3, 40)), CapacityError);
    FidBatch bad;
    bad.passages.push_back(span_of({3, 40}));
    EXPECT_THROW(model.encode_passages(bad), IndexError);
}

TEST(FidModelTest, TeacherForcingIsCausal)
{
    const auto model = FidModel<double>::initialize(tiny_config(), 5);
    std::mt19937_64 rng(5);
    const auto batch = random_batch(rng, 3, 40);
    std::vector<TokenId> targets{7, 9, 11, 13, 15, 1};
    const auto base = model.forward_logits(batch, std::span<const TokenId>(targets));
    ASSERT_EQ(base.shape(), (Shape{6, 40}));
    for (std::size_t t = 0; t < targets.size(); ++t) {
        auto changed = targets;
        changed[t] = 20;
        const auto logits = model.forward_logits(batch, std::span<const TokenId>(changed));
        for (std::size_t row = 0; row <= t; ++row) {
            for (std::size_t c = 0; c < 40; ++c) {
                ASSERT_EQ(logits.at(row, c), base.at(row, c)) << "row " << row << " after changing " << t;
            }
        }
        if (t + 1 < targets.size()) {
            EXPECT_GT(std::abs(logits.at(t + 1, 0) - base.at(t + 1, 0)), 0.0);
        }
    }
}

TEST(FidModelTest, GreedyDecodeMatchesRecomputeOracle)
{
    auto model = FidModel<double>::initialize(tiny_config(), 6);
    // Larger output weights make the argmax path non-trivial.
    for (auto& v : model.parameters()["lm_head"].data()) {
        v *= 30.0;
    }
    std::mt19937_64 rng(6);
    const auto batch = random_batch(rng, 4, 40);
    const auto memory = model.encode_passages(batch);
    const auto result = model.decode_greedy(memory, 8);

    std::vector<TokenId> prefix;
    for (std::size_t step = 0; step < result.step_logits.size(); ++step) {
        auto inputs = prefix;
        inputs.push_back(0);
        const auto logits = model.forward_logits(batch, std::span<const TokenId>(inputs));
        const auto row = logits.row(step);
        for (std::size_t c = 0; c < row.size(); ++c) {
            ASSERT_NEAR(row[c], result.step_logits[step][c], 1e-9);
        }
        const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == Vocab::eos_id) {
            EXPECT_TRUE(result.stopped_on_eos);
            EXPECT_EQ(step + 1, result.step_logits.size());
            break;
        }
        ASSERT_LT(step, result.tokens.size());
        ASSERT_EQ(result.tokens[step], best);
        prefix.push_back(best);
    }
    EXPECT_EQ(result.trace.steps(), result.step_logits.size());

    // Teacher forcing on the greedy output reproduces the decode-path logits.
    auto targets = result.tokens;
    if (result.stopped_on_eos) {
        targets.push_back(Vocab::eos_id);
    }
    const auto forced = model.forward_logits(memory, std::span<const TokenId>(targets));
    for (std::size_t step = 0; step < targets.size(); ++step) {
        for (std::size_t c = 0; c < 40; ++c) {
            ASSERT_NEAR(forced.at(step, c), result.step_logits[step][c], 1e-9);
        }
    }
}

TEST(FidModelTest, RiggedEosStopsImmediately)
{
    auto model = FidModel<double>::initialize(tiny_config(), 7);
    auto& params = model.parameters();
    for (const auto& name : params.names()) {
        const bool projection_out = name.ends_with(".o") || name.ends_with(".wo");
        if (projection_out || name == "lm_head") {
            for (auto& v : params[name].data()) {
                v = 0.0;
            }
        }
    }
    // With every residual branch silenced, the final state is the normalized pad embedding.
    const auto& emb = params["shared.embedding"];
    Tensor<double> pad({1, 16});
    std::copy(emb.row(0).begin(), emb.row(0).end(), pad.data().begin());
    const auto normed = ops::rms_norm(pad, params["decoder.final_norm"], 1e-6);
    for (std::size_t c = 0; c < 16; ++c) {
        params["lm_head"].at(c, Vocab::eos_id) = normed[c];
    }
    std::mt19937_64 rng(7);
    const auto memory = model.encode_passages(random_batch(rng, 2, 40));
    const auto result = model.decode_greedy(memory, 10);
    EXPECT_TRUE(result.tokens.empty());
    EXPECT_TRUE(result.stopped_on_eos);
    EXPECT_EQ(result.trace.steps(), 1u);
}

TEST(FidModelTest, ArgmaxTiesGoToLowestId)
{
    auto model = FidModel<double>::initialize(tiny_config(), 8);
    for (auto& v : model.parameters()["lm_head"].data()) {
        v = 0.0;
    }
    std::mt19937_64 rng(8);
    const auto result = model.decode_greedy(model.encode_passages(random_batch(rng, 2, 40)), 3);
    EXPECT_EQ(result.tokens, (std::vector<TokenId>{0, 0, 0}));
}

TEST(FidModelTest, TraceIsNormalizedAndDeterministic)
{
    const auto model = FidModel<double>::initialize(tiny_config(), 9);
    std::mt19937_64 rng(9);
    const auto memory = model.encode_passages(random_batch(rng, 5, 40));
    const auto a = model.decode_greedy(memory, 6);
    const auto b = model.decode_greedy(memory, 6);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.step_logits, b.step_logits);
    const auto& tr = a.trace;
    EXPECT_EQ(tr.tokens(), memory.total_tokens());
    for (std::size_t s = 0; s < tr.steps(); ++s) {
        for (std::size_t l = 0; l < tr.layers(); ++l) {
            for (std::size_t h = 0; h < tr.heads(); ++h) {
                double total = 0.0;
                for (std::size_t n = 0; n < tr.tokens(); ++n) {
                    ASSERT_GE(tr.alpha(l, h, s, n), 0.0);
                    ASSERT_EQ(tr.alpha(l, h, s, n), b.trace.alpha(l, h, s, n));
                    total += tr.alpha(l, h, s, n);
                }
                ASSERT_NEAR(total, 1.0, 1e-6);
            }
        }
    }
    for (std::size_t l = 0; l < tr.layers(); ++l) {
        for (std::size_t h = 0; h < tr.heads(); ++h) {
            for (std::size_t n = 0; n < tr.tokens(); ++n) {
                ASSERT_GE(tr.value_norm(l, h, n), 0.0);
            }
        }
    }
}

TEST(FidModelTest, ValueNormsMatchDirectComputation)
{
    const auto model = FidModel<double>::initialize(tiny_config(), 10);
    std::mt19937_64 rng(10);
    const auto memory = model.encode_passages(random_batch(rng, 2, 40));
    const auto trace = model.decode_greedy(memory, 2).trace;
    const auto& params = model.parameters();
    for (std::size_t l = 0; l < 2; ++l) {
        const auto v = ops::matmul(memory.states, params["decoder." + std::to_string(l) + ".cross.v"]);
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t n = 0; n < memory.total_tokens(); ++n) {
                double ss = 0.0;
                for (std::size_t j = 0; j < 8; ++j) {
                    ss += v.at(n, h * 8 + j) * v.at(n, h * 8 + j);
                }
                ASSERT_NEAR(trace.value_norm(l, h, n), std::sqrt(ss), 1e-12);
            }
        }
    }
}

TEST(FidModelTest, SaveLoadRoundTrip)
{
    auto cfg = tiny_config();
    cfg.tokenizer = "toy";
    const auto model = FidModel<double>::initialize(cfg, 11);
    const std::string path = ::testing::TempDir() + "fidrank_model_roundtrip.bin";
    model.save(path);
    const auto loaded = FidModel<double>::load(path);
    EXPECT_EQ(loaded.config(), cfg);
    EXPECT_EQ(loaded.parameters(), model.parameters());
    const auto as_float = FidModel<float>::load(path);
    EXPECT_EQ(as_float.parameters()["lm_head"][0], static_cast<float>(model.parameters()["lm_head"][0]));
}

TEST(FidModelTest, FloatAndDoubleAgreeOnLogits)
{
    const auto model = FidModel<double>::initialize(tiny_config(), 12);
    const FidModel<float> fmodel(model.config(), model.parameters().cast<float>());
    std::mt19937_64 rng(12);
    const auto batch = random_batch(rng, 3, 40);
    const std::vector<TokenId> targets{4, 5, 6};
    const auto a = model.forward_logits(batch, std::span<const TokenId>(targets));
    const auto b = fmodel.forward_logits(batch, std::span<const TokenId>(targets)).cast<double>();
    EXPECT_LT(max_abs_diff(a, b), 1e-4);
}

TEST(Flops, LinearInPassagesAndBaseCase)
{
    const ModelConfig cfg;
    const auto one = count_flops(cfg, 1, 150, 100);
    const auto two = count_flops(cfg, 2, 150, 100);
    const auto base = count_flops(cfg, 1, 150, 100);
    EXPECT_EQ(one.total(), base.total());
    EXPECT_EQ(two.encoder, 2 * one.encoder);
    const auto big = count_flops(cfg, 50, 150, 100);
    const auto big2 = count_flops(cfg, 100, 150, 100);
    const double ratio = static_cast<double>(big2.total()) / static_cast<double>(big.total());
    EXPECT_GT(ratio, 1.95);
    EXPECT_LT(ratio, 2.05);
    EXPECT_THROW(count_flops(cfg, 0, 1, 1), ContractError);
}

TEST(Flops, MatchesInstrumentedCounter)
{
    const auto cfg = tiny_config();
    const auto model = FidModel<double>::initialize(cfg, 13);
    for (std::size_t n : {1u, 3u, 6u}) {
        std::mt19937_64 rng(n);
        const auto batch = random_batch(rng, n, 40, 12, 12);
        const std::vector<TokenId> targets(5, 7);
        kernels::MacCounter counter;
        model.forward_logits(batch, std::span<const TokenId>(targets));
        const double measured = static_cast<double>(counter.count());
        const double predicted = static_cast<double>(count_flops(cfg, n, 12, 5).total());
        EXPECT_NEAR(measured / predicted, 1.0, 0.05) << n << " passages";
    }
}
