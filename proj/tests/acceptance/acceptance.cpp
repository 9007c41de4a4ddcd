// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Criterion numbers follow the project's acceptance list.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fidrank/eval/metrics.hpp"
#include "fidrank/model/fid_model.hpp"
#include "fidrank/model/flops.hpp"
#include "fidrank/numerics/grad_check.hpp"
#include "fidrank/scoring/scorer.hpp"
#include "fidrank/text/ranking.hpp"
#include "fidrank/train/trainer.hpp"
#include "fidrank/window/engine.hpp"

using namespace fidrank;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 6)
{
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

// ---- 1: FiD cost is linear in passages ---------------------------------------

Outcome linear_scaling()
{
    const ModelConfig cfg = train::toy_model_config();
    const auto model = FidModel<float>::initialize(cfg, 1);
    constexpr std::size_t kLen = 40;
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<TokenId> tok(3, static_cast<TokenId>(cfg.vocab_size) - 1);
    std::vector<double> xs, ys;
    double worst_ratio = 0.0;
    for (std::size_t n = 1; n <= 32; ++n) {
        FidBatch batch;
        for (std::size_t p = 0; p < n; ++p) {
            PromptSpan span;
            for (std::size_t t = 0; t < kLen; ++t) {
                span.tokens.push_back(tok(rng));
            }
            batch.passages.push_back(std::move(span));
        }
        kernels::MacCounter counter;
        model.encode_passages(batch);
        const double measured = static_cast<double>(counter.count());
        xs.push_back(static_cast<double>(n));
        ys.push_back(measured);
        const double predicted = static_cast<double>(count_flops(cfg, n, kLen, 1).encoder);
        worst_ratio = std::max(worst_ratio, std::abs(measured / predicted - 1.0));
        if (n % 8 == 0) {
            const std::vector<TokenId> targets(12, 5);
            kernels::MacCounter full;
            model.forward_logits(batch, std::span<const TokenId>(targets));
            const double whole = static_cast<double>(count_flops(cfg, n, kLen, targets.size()).total());
            worst_ratio = std::max(worst_ratio, std::abs(static_cast<double>(full.count()) / whole - 1.0));
        }
    }
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    const double slope = sxy / sxx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double fit = my + slope * (xs[i] - mx);
        ss_res += (ys[i] - fit) * (ys[i] - fit);
    }
    const double r2 = 1.0 - ss_res / syy;
    return {r2 > 0.999 && worst_ratio <= 0.05, "R^2 " + fmt(r2, 10) + ", worst count_flops deviation " + fmt(worst_ratio)};
}

// ---- 2, 3: cross-attention scores -------------------------------------------

struct TraceFixture {
    AttentionTrace trace;
    std::vector<MemorySpan> offsets;
    std::vector<std::size_t> starts;
};

TraceFixture random_trace(std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::size_t> small(1, 4), steps_d(1, 8), passages_d(1, 4);
    const std::size_t layers = small(rng), heads = small(rng), steps = steps_d(rng), passages = passages_d(rng);
    std::uniform_int_distribution<std::size_t> len_d(1, 64 / passages);
    TraceFixture f;
    std::size_t total = 0;
    for (std::size_t p = 0; p < passages; ++p) {
        const std::size_t len = len_d(rng);
        f.offsets.push_back({total, len});
        f.starts.push_back(std::uniform_int_distribution<std::size_t>(0, len)(rng));
        total += len;
    }
    f.trace = AttentionTrace(layers, heads, total);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t s = 0; s < steps; ++s) {
        f.trace.add_step();
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t h = 0; h < heads; ++h) {
                double z = 0.0;
                for (std::size_t n = 0; n < total; ++n) {
                    z += f.trace.alpha(l, h, s, n) = unit(rng);
                }
                for (std::size_t n = 0; n < total; ++n) {
                    f.trace.alpha(l, h, s, n) /= z;
                }
            }
        }
    }
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t n = 0; n < total; ++n) {
                f.trace.value_norm(l, h, n) = 5.0 * unit(rng);
            }
        }
    }
    return f;
}

std::vector<double> brute_scores(const TraceFixture& f, bool zero_prefix)
{
    std::vector<double> out;
    for (std::size_t p = 0; p < f.offsets.size(); ++p) {
        const std::size_t first = f.offsets[p].start + (zero_prefix ? f.starts[p] : 0);
        const std::size_t last = f.offsets[p].start + f.offsets[p].length;
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t l = 0; l < f.trace.layers(); ++l) {
            for (std::size_t h = 0; h < f.trace.heads(); ++h) {
                for (std::size_t s = 0; s < f.trace.steps(); ++s) {
                    for (std::size_t n = first; n < last; ++n) {
                        sum += f.trace.alpha(l, h, s, n) * f.trace.value_norm(l, h, n);
                        ++count;
                    }
                }
            }
        }
        out.push_back(count ? sum / static_cast<double>(count) : 0.0);
    }
    return out;
}

Outcome score_oracle()
{
    std::mt19937_64 rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto f = random_trace(rng);
        for (bool zero : {false, true}) {
            AggregationConfig cfg;
            cfg.zero_prefix = zero;
            const auto got = aggregate_scores(f.trace, f.offsets, f.starts, cfg);
            const auto want = brute_scores(f, zero);
            for (std::size_t p = 0; p < want.size(); ++p) {
                worst = std::max(worst, std::abs(got[p].score - want[p]));
            }
        }
    }
    return {worst <= 1e-12, "max |difference| " + fmt(worst)};
}

Outcome zeroing_soundness()
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 10.0);
    std::size_t mutated = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto f = random_trace(rng);
        const auto before = aggregate_scores(f.trace, f.offsets, f.starts);
        for (std::size_t p = 0; p < f.offsets.size(); ++p) {
            for (std::size_t n = f.offsets[p].start; n < f.offsets[p].start + f.starts[p]; ++n) {
                for (std::size_t l = 0; l < f.trace.layers(); ++l) {
                    for (std::size_t h = 0; h < f.trace.heads(); ++h) {
                        f.trace.value_norm(l, h, n) = unit(rng);
                        for (std::size_t s = 0; s < f.trace.steps(); ++s) {
                            f.trace.alpha(l, h, s, n) = unit(rng);
                        }
                        ++mutated;
                    }
                }
            }
        }
        const auto after = aggregate_scores(f.trace, f.offsets, f.starts);
        for (std::size_t p = 0; p < before.size(); ++p) {
            if (before[p].score != after[p].score) {
                return {false, "trial " + std::to_string(trial) + " passage " + std::to_string(p) + " changed"};
            }
        }
    }
    return {mutated > 0, std::to_string(mutated) + " prefix entries mutated, scores unchanged"};
}

// ---- 4: ranking strings -----------------------------------------------------

Outcome ranking_codec()
{
    std::size_t checked = 0;
    for (int n = 1; n <= 5; ++n) {
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 1);
        do {
            const auto parsed = parse_ranking(format_ranking(perm), n);
            if (!parsed.well_formed || parsed.permutation() != perm) {
                return {false, "round trip failed for " + format_ranking(perm)};
            }
            ++checked;
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<int> perm(static_cast<std::size_t>(std::uniform_int_distribution<int>(6, 20)(rng)));
        std::iota(perm.begin(), perm.end(), 1);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto parsed = parse_ranking(format_ranking(perm), static_cast<int>(perm.size()));
        if (!parsed.well_formed || parsed.permutation() != perm) {
            return {false, "round trip failed for " + format_ranking(perm)};
        }
        ++checked;
    }
    const std::string junk = "[]> 0123456789x ";
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = std::uniform_int_distribution<int>(1, 20)(rng);
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 1);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::string text = format_ranking(perm);
        const int edits = std::uniform_int_distribution<int>(1, 6)(rng);
        for (int e = 0; e < edits; ++e) {
            const std::size_t at = std::uniform_int_distribution<std::size_t>(0, text.size())(rng);
            const char c = junk[std::uniform_int_distribution<std::size_t>(0, junk.size() - 1)(rng)];
            switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
            case 0:
                text.insert(text.begin() + static_cast<std::ptrdiff_t>(at), c);
                break;
            case 1:
                if (at < text.size()) {
                    text.erase(at, 1);
                }
                break;
            default:
                if (at < text.size()) {
                    text[at] = c;
                }
                break;
            }
        }
        const auto fixed = parse_and_repair(text, n);
        auto sorted = fixed;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> identity(static_cast<std::size_t>(n));
        std::iota(identity.begin(), identity.end(), 1);
        if (sorted != identity) {
            return {false, "repair of '" + text + "' is not a permutation"};
        }
        if (parse_and_repair(format_ranking(fixed), n) != fixed ||
            repair_ranking(parse_ranking(text, n).salvage, n) != fixed) {
            return {false, "repair of '" + text + "' is not idempotent"};
        }
    }
    return {true, std::to_string(checked) + " round trips, 1000 repairs"};
}

// ---- 5: sliding window ----------------------------------------------------------

Outcome window_oracle()
{
    std::mt19937_64 rng(5);
    CandidateList list;
    list.query_id = "q";
    for (int i = 0; i < 100; ++i) {
        list.entries.push_back({"d" + std::to_string(i), "", 0.0});
    }
    std::size_t exact = 0;
    bool monotone = true;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> rel(100);
        std::iota(rel.begin(), rel.end(), 0.0);
        std::shuffle(rel.begin(), rel.end(), rng);
        std::map<std::string, double> lookup;
        for (std::size_t i = 0; i < 100; ++i) {
            lookup[list.entries[i].docid] = rel[i];
        }
        std::vector<std::string> truth;
        for (const auto& c : list.entries) {
            truth.push_back(c.docid);
        }
        std::sort(truth.begin(), truth.end(), [&](const auto& a, const auto& b) { return lookup[a] > lookup[b]; });
        const OracleRanker oracle([&](const std::string& id) { return lookup.at(id); });
        double previous = -2.0;
        for (std::size_t passes = 1; passes <= 3; ++passes) {
            const auto out = rerank_sliding(list, oracle, {20, 10, passes});
            std::vector<std::string> ids;
            for (const auto& c : out.entries) {
                ids.push_back(c.docid);
            }
            if (passes == 1 && std::equal(truth.begin(), truth.begin() + 10, ids.begin())) {
                ++exact;
            }
            const double tau = eval::kendall_tau(ids, truth);
            monotone = monotone && tau >= previous;
            previous = tau;
        }
    }
    return {exact == 1000 && monotone,
            std::to_string(exact) + "/1000 exact top-10, tau monotone over passes: " + (monotone ? "yes" : "no")};
}

// ---- 6: nDCG ---------------------------------------------------------------------

double naive_ndcg(const std::vector<std::string>& ranking, const std::map<std::string, int>& judged, std::size_t k)
{
    auto discount = [](std::size_t i) { return std::log(static_cast<double>(i) + 1.0) / std::log(2.0); };
    double dcg = 0.0;
    for (std::size_t i = 1; i <= std::min(k, ranking.size()); ++i) {
        const auto it = judged.find(ranking[i - 1]);
        dcg += (it == judged.end() ? 0 : it->second) / discount(i);
    }
    std::vector<int> gains;
    for (const auto& [d, g] : judged) {
        gains.push_back(g);
    }
    std::sort(gains.rbegin(), gains.rend());
    double idcg = 0.0;
    for (std::size_t i = 1; i <= std::min(k, gains.size()); ++i) {
        idcg += gains[i - 1] / discount(i);
    }
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

Outcome metric_fidelity()
{
    std::mt19937_64 rng(6);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        eval::Run run;
        eval::Qrels qrels;
        std::map<std::string, std::map<std::string, int>> judged;
        std::map<std::string, std::vector<std::string>> rankings;
        const int queries = std::uniform_int_distribution<int>(1, 4)(rng);
        for (int q = 0; q < queries; ++q) {
            const std::string qid = "q" + std::to_string(q);
            const int pool = std::uniform_int_distribution<int>(1, 40)(rng);
            std::vector<std::string> docs;
            for (int d = 0; d < pool; ++d) {
                docs.push_back("d" + std::to_string(d));
                if (std::uniform_int_distribution<int>(0, 2)(rng) != 0) {
                    const int g = std::uniform_int_distribution<int>(0, 3)(rng);
                    judged[qid][docs.back()] = g;
                    qrels.judgments[qid][docs.back()] = g;
                }
            }
            if (judged[qid].empty()) {
                judged[qid]["d0"] = 1;
                qrels.judgments[qid]["d0"] = 1;
            }
            std::shuffle(docs.begin(), docs.end(), rng);
            docs.resize(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, pool)(rng)));
            for (std::size_t r = 0; r < docs.size(); ++r) {
                run.entries.push_back({qid, docs[r], r + 1, static_cast<double>(docs.size() - r), "t"});
            }
            rankings[qid] = docs;
        }
        const std::size_t k = static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 20)(rng));
        const auto report = eval::ndcg_at_k(run, qrels, k);
        double mean = 0.0;
        for (const auto& pq : report.per_query) {
            const double want = naive_ndcg(rankings[pq.qid], judged[pq.qid], k);
            worst = std::max(worst, std::abs(pq.value - want));
            mean += want;
        }
        worst = std::max(worst, std::abs(report.mean - mean / static_cast<double>(report.per_query.size())));
    }
    eval::Run run;
    run.entries = {{"q", "a", 1, 3.0, "t"}, {"q", "b", 2, 2.0, "t"}, {"q", "c", 3, 1.0, "t"}};
    eval::Qrels qrels;
    qrels.judgments["q"] = {{"a", 0}, {"b", 3}, {"c", 2}};
    const double worked = eval::ndcg_at_k(run, qrels, 3).mean;
    const bool example_ok = std::abs(worked - 0.6788) < 5e-5;
    return {worst <= 1e-12 && example_ok, "max |difference| " + fmt(worst) + ", worked example " + fmt(worked, 4)};
}

// ---- 7: gradients ---------------------------------------------------------------

Outcome gradient_check()
{
    const Vocab vocab = Vocab::toy();
    const auto model = FidModel<double>::initialize(train::toy_model_config(), 7);
    const FidModel<long double> wide(model.config(), model.parameters().cast<long double>());
    const auto ex = train::make_training_example(vocab, train::gen_distill_data(1, 2, 7).front());
    const TracedScalarFn<double> f = [&](std::span<const Var<double>> vars) {
        const BoundParameters<double> w(model.parameters(), std::vector<Var<double>>(vars.begin(), vars.end()));
        return model.loss(w, ex.batch, ex.targets);
    };
    const TracedScalarFn<long double> reference = [&](std::span<const Var<long double>> vars) {
        const BoundParameters<long double> w(wide.parameters(),
                                             std::vector<Var<long double>>(vars.begin(), vars.end()));
        return wide.loss(w, ex.batch, ex.targets);
    };
    GradCheckOptions opts;
    opts.max_entries_per_tensor = 16;
    opts.seed = 7;
    const auto report = grad_check(f, reference, model.parameters().tensors(), opts);
    return {report.max_rel_error < 1e-6, "max relative error " + fmt(report.max_rel_error) + " over " +
                                             std::to_string(report.probes) + " probes (worst in " +
                                             model.parameters().name(report.worst_tensor) + ")"};
}

// ---- 8, 9: toy training -----------------------------------------------------------

Outcome toy_distillation()
{
    const Vocab vocab = Vocab::toy();
    auto model = FidModel<float>::initialize(train::toy_model_config(), 8);
    const auto data = train::gen_distill_data(2000, 10, 8);
    const auto held = train::gen_distill_data(200, 10, 9);
    auto cfg = train::toy_train_config();
    cfg.seed = 8;
    cfg.epochs = 8;
    train::AdamW<float> opt(model.parameters());
    train::train<float>(model, train::make_training_examples(vocab, data), cfg, opt);
    const double stage1 = train::evaluate_distill(model, vocab, held);

    auto cfg2 = cfg;
    cfg2.epochs = 2;
    cfg2.seed = 9;
    train::train<float>(model, train::make_training_examples(vocab, train::stage_dataset(data, cfg2, 2)), cfg2, opt);
    const double stage2 = train::evaluate_distill(model, vocab, held);
    return {stage1 >= 0.8 && stage2 >= stage1 - 0.05,
            "held-out tau " + fmt(stage1, 4) + " after stage 1 (8 epochs), " + fmt(stage2, 4) +
                " after stage 2 (2 epochs)"};
}

Outcome toy_score_path()
{
    const Vocab vocab = Vocab::toy();
    auto model = FidModel<float>::initialize(train::toy_model_config(), 10);
    const auto data = train::gen_qa_data(2000, 20, 10);
    const auto held = train::gen_qa_data(200, 20, 11);
    const double untrained = train::evaluate_answer_recall(model, vocab, held, 3);
    auto cfg = train::toy_train_config();
    cfg.seed = 10;
    cfg.epochs = 5;
    train::train<float>(model, train::make_training_examples(vocab, data), cfg);
    const double trained = train::evaluate_answer_recall(model, vocab, held, 3);
    return {trained >= 0.8 && untrained <= 0.25,
            "answer passage in top-3: " + fmt(trained, 4) + " trained, " + fmt(untrained, 4) + " untrained"};
}

// ---- 10: CLI determinism ------------------------------------------------------------

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome cli_determinism()
{
    const fs::path dir = fs::temp_directory_path() / "fidrank_acceptance_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cli = FIDRANK_CLI_PATH;
    auto sh = [&](const std::string& args) {
        return std::system((cli + " " + args + " > /dev/null 2> " + (dir / "stderr.txt").string()).c_str());
    };
    const std::string d = dir.string();
    if (sh("gen-data --task ir --examples 3 --passages 8 --seed 3 --output-dir " + d + "/ir") != 0 ||
        sh("train-toy --task qa --examples 20 --passages 4 --epochs 1 --seed 3 --output " + d + "/model.ckpt") != 0) {
        return {false, "setup failed: " + slurp(dir / "stderr.txt")};
    }
    const std::string inputs = " --model " + d + "/model.ckpt --corpus " + d + "/ir/corpus.jsonl --queries " + d +
                               "/ir/queries.tsv --input-run " + d + "/ir/run.txt";
    const std::vector<std::pair<std::string, std::string>> commands{
        {"rerank-distill", "rerank-distill" + inputs + " --window 4 --stride 2 --output-run"},
        {"rerank-score", "rerank-score" + inputs + " --output-run"},
        {"explain", "explain" + inputs + " --query-id q1 --output"},
        {"eval", "eval --run " + d + "/ir/run.txt --qrels " + d + "/ir/qrels.txt --output"},
        {"train-toy", "train-toy --examples 8 --passages 3 --epochs 1 --loss-curve " + d + "/curve.csv --output"},
        {"simulate-window", "simulate-window --oracle --n 100 --trials 200 --output"},
        {"gen-data", "gen-data --task distill --examples 50 --output"},
    };
    std::size_t identical = 0;
    std::string failed;
    for (const auto& [name, cmd] : commands) {
        std::vector<std::string> outputs;
        for (int round = 0; round < 2; ++round) {
            const std::string out = d + "/" + name + std::to_string(round);
            if (sh(cmd + " " + out + " --seed 11 --threads 1") != 0) {
                return {false, name + " failed: " + slurp(dir / "stderr.txt")};
            }
            outputs.push_back(slurp(out));
        }
        if (!outputs[0].empty() && outputs[0] == outputs[1]) {
            ++identical;
        } else {
            failed += " " + name;
        }
    }
    fs::remove_all(dir);
    return {identical == commands.size(), std::to_string(identical) + "/" + std::to_string(commands.size()) +
                                             " subcommands byte-identical" + (failed.empty() ? "" : ", differ:" + failed)};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 FiD cost linear in passages", linear_scaling},
        {"2 cross-attention score oracle", score_oracle},
        {"3 prefix zeroing soundness", zeroing_soundness},
        {"4 ranking string codec", ranking_codec},
        {"5 sliding window oracle guarantee", window_oracle},
        {"6 nDCG fidelity", metric_fidelity},
        {"7 gradient check", gradient_check},
        {"8 toy distillation", toy_distillation},
        {"9 toy score path", toy_score_path},
        {"10 CLI determinism", cli_determinism},
    };
    // Optional arguments select criteria by number.
    std::set<std::string> only(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        if (!only.empty() && !only.count(name.substr(0, name.find(' ')))) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = check();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (outcome.pass ? "PASS" : "FAIL") << "  " << name << ": " << outcome.detail << " [" << fmt(secs, 3)
                  << " s]" << std::endl;
        failures += outcome.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
