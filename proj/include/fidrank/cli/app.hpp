#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "fidrank/errors.hpp"
#include "fidrank/eval/metrics.hpp"
#include "fidrank/eval/trec.hpp"
#include "fidrank/model/fid_model.hpp"
#include "fidrank/scoring/scorer.hpp"
#include "fidrank/train/data.hpp"
#include "fidrank/train/trainer.hpp"
#include "fidrank/window/engine.hpp"
#include "fidrank/window/fid_rankers.hpp"

namespace fidrank::cli {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_contract = 3 };

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results land by index, so
/// output order never depends on scheduling; the lowest-index failure is rethrown.
template <typename R>
std::vector<R> parallel_map(std::size_t n, std::size_t threads, const std::function<R(std::size_t)>& fn)
{
    std::vector<R> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                results[i] = fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(n, 1));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return results;
}

/// Candidate lists for every query of a first-stage run, truncated to `depth`.
inline std::vector<CandidateList> candidates_from_run(const eval::Run& run, const eval::TextTable& corpus,
                                                     const eval::TextTable& queries, std::size_t depth)
{
    std::vector<CandidateList> out;
    const auto rankings = run.rankings();
    std::unordered_map<std::string, std::unordered_map<std::string, double>> scores;
    for (const auto& e : run.entries) {
        scores[e.qid][e.docid] = e.score;
    }
    for (const auto& qid : run.query_ids()) {
        if (!queries.contains(qid)) {
            throw DataError("query '" + qid + "' of the run is missing from the queries file");
        }
        CandidateList list;
        list.query_id = qid;
        list.query = queries.text(qid);
        const auto& docs = rankings.at(qid);
        for (std::size_t i = 0; i < std::min(depth, docs.size()); ++i) {
            if (!corpus.contains(docs[i])) {
                throw DataError("document '" + docs[i] + "' of query '" + qid + "' is missing from the corpus");
            }
            list.entries.push_back({docs[i], corpus.text(docs[i]), scores[qid][docs[i]]});
        }
        out.push_back(std::move(list));
    }
    return out;
}

inline eval::Run run_from_candidates(const std::vector<CandidateList>& lists, const std::string& tag)
{
    eval::Run run;
    for (const auto& list : lists) {
        for (std::size_t i = 0; i < list.entries.size(); ++i) {
            run.entries.push_back({list.query_id, list.entries[i].docid, i + 1, list.entries[i].score, tag});
        }
    }
    return run;
}

namespace detail {

struct Options {
    std::string model;
    std::string vocab;
    std::string corpus;
    std::string queries;
    std::string input_run;
    std::string output_run;
    std::string output;
    std::size_t window = 20;
    std::size_t stride = 10;
    std::size_t passes = 1;
    std::size_t budget = kDefaultBudget;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::size_t depth = 100;
    std::string tag = "fidrank";
    int precision = 64;

    // eval
    std::string run;
    std::string qrels;
    std::size_t k = 10;

    // rerank-score / explain
    std::string steps = "all";
    bool no_zeroing = false;
    std::size_t max_answer_tokens = 16;
    std::string query_id;

    // simulate-window
    bool oracle = false;
    std::string ranker = "oracle";
    std::size_t n = 100;
    std::size_t trials = 1000;

    // train-toy / gen-data
    std::string task = "distill";
    std::string dataset;
    std::string loss_curve;
    std::size_t examples = 2000;
    std::size_t passages = 10;
    std::size_t epochs = 10;
    std::size_t stage2_epochs = 0;
    std::string tokenizer = "toy";
    std::size_t batch_size = train::toy_train_config().batch_size;
    double lr = train::toy_train_config().peak_lr;
    std::size_t warmup = 100;
    double dropout = train::toy_train_config().dropout;
    std::size_t subset_count = 3;
    std::size_t subset_max = 10;
    std::string output_dir;
};

inline void add_model_flags(CLI::App* cmd, Options& o, bool required)
{
    auto* m = cmd->add_option("--model", o.model, "Model checkpoint")->check(CLI::ExistingFile);
    if (required) {
        m->required();
    }
    cmd->add_option("--vocab", o.vocab, "Vocabulary file, one piece per line (default: the checkpoint's tokenizer)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--precision", o.precision, "Inference precision in bits")
        ->check(CLI::IsMember({32, 64}))
        ->capture_default_str();
    cmd->add_option("--budget", o.budget, "Prompt token budget")
        ->check(CLI::IsMember({150, 300}))
        ->capture_default_str();
}

inline void add_input_flags(CLI::App* cmd, Options& o)
{
    cmd->add_option("--corpus", o.corpus, "Corpus JSONL {docid, text}")->required()->check(CLI::ExistingFile);
    cmd->add_option("--queries", o.queries, "Queries TSV qid<TAB>text")->required()->check(CLI::ExistingFile);
    cmd->add_option("--input-run", o.input_run, "First-stage TREC run")->required()->check(CLI::ExistingFile);
    cmd->add_option("--depth", o.depth, "Candidates taken per query")->check(CLI::PositiveNumber)->capture_default_str();
}

inline void add_window_flags(CLI::App* cmd, Options& o)
{
    cmd->add_option("--window", o.window, "Window size")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--stride", o.stride, "Window stride")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--passes", o.passes, "Sliding-window passes")->check(CLI::PositiveNumber)->capture_default_str();
}

inline void add_run_flags(CLI::App* cmd, Options& o)
{
    cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

inline void check_vocab(const ModelConfig& cfg, const Vocab& vocab)
{
    if (cfg.vocab_size != vocab.size()) {
        throw ContractError("model expects a vocabulary of " + std::to_string(cfg.vocab_size) + " entries, got " +
                            std::to_string(vocab.size()));
    }
}

inline Vocab vocab_for(const std::string& tokenizer)
{
    if (tokenizer == "toy") {
        return Vocab::toy();
    }
    if (tokenizer == "byte") {
        return Vocab::byte_level();
    }
    throw ContractError("tokenizer '" + tokenizer + "' needs --vocab");
}

/// --vocab when given, otherwise the tokenizer recorded in the checkpoint.
inline Vocab load_vocab(const Options& o, const ModelConfig& cfg)
{
    Vocab vocab = o.vocab.empty() ? vocab_for(cfg.tokenizer) : Vocab::from_file(o.vocab);
    check_vocab(cfg, vocab);
    return vocab;
}

inline std::vector<CandidateList> load_candidates(const Options& o)
{
    const auto corpus = eval::read_corpus(o.corpus);
    const auto queries = eval::read_queries(o.queries);
    const auto run = eval::read_run(o.input_run);
    return candidates_from_run(run, corpus, queries, o.depth);
}

inline void write_output_run(const Options& o, const std::vector<CandidateList>& lists, std::ostream& out)
{
    const auto run = run_from_candidates(lists, o.tag);
    if (o.output_run.empty()) {
        eval::write_run(out, run);
    } else {
        eval::write_run(o.output_run, run);
    }
}

template <typename T>
void rerank_distill(const Options& o, std::ostream& out)
{
    const auto model = FidModel<T>::load(o.model);
    const auto vocab = load_vocab(o, model.config());
    const WindowSpec spec{o.window, o.stride, o.passes};
    spec.validate();
    const FidDistillRanker<T> ranker(model, vocab, o.budget);
    const auto lists = load_candidates(o);
    const auto ranked = parallel_map<CandidateList>(lists.size(), o.threads, [&](std::size_t i) {
        auto r = rerank_sliding(lists[i], ranker, spec);
        r.assign_rank_scores();
        return r;
    });
    write_output_run(o, ranked, out);
}

inline AggregationConfig aggregation(const Options& o)
{
    AggregationConfig agg;
    agg.steps = o.steps == "first" ? StepPolicy::first_step : StepPolicy::all_steps;
    agg.zero_prefix = !o.no_zeroing;
    return agg;
}

template <typename T>
void rerank_score(const Options& o, std::ostream& out)
{
    const auto model = FidModel<T>::load(o.model);
    const auto vocab = load_vocab(o, model.config());
    const FidScoreRanker<T> scorer(model, vocab, o.budget, o.max_answer_tokens, aggregation(o));
    const auto lists = load_candidates(o);
    const auto ranked = parallel_map<CandidateList>(lists.size(), o.threads, [&](std::size_t i) {
        const auto scores = scorer.score(lists[i].query, lists[i].entries);
        if (lists[i].size() > scorer.capacity()) {
            throw CapacityError("query " + lists[i].query_id + " has more candidates than the model takes");
        }
        std::vector<PassageScore> ps;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            ps.push_back({j, scores[j], 1});
        }
        CandidateList r = lists[i];
        const auto order = rank_by_score(ps);
        for (std::size_t j = 0; j < order.size(); ++j) {
            const auto src = static_cast<std::size_t>(order[j] - 1);
            r.entries[j] = lists[i].entries[src];
            r.entries[j].score = scores[src];
        }
        return r;
    });
    write_output_run(o, ranked, out);
}

template <typename T>
void explain(const Options& o, std::ostream& out)
{
    const auto model = FidModel<T>::load(o.model);
    const auto vocab = load_vocab(o, model.config());
    const FidScoreRanker<T> scorer(model, vocab, o.budget, o.max_answer_tokens, aggregation(o));
    const auto lists = load_candidates(o);
    const auto it = std::find_if(lists.begin(), lists.end(),
                                 [&](const CandidateList& l) { return l.query_id == o.query_id; });
    if (it == lists.end()) {
        throw DataError("query '" + o.query_id + "' does not appear in the input run");
    }
    if (it->size() > scorer.capacity()) {
        throw CapacityError("query " + it->query_id + " has more candidates than the model takes");
    }
    const auto g = scorer.run(it->query, it->entries);
    const auto scores = token_scores(g.decode.trace, g.offsets, scorer.aggregation());
    if (o.output.empty()) {
        write_heatmap(out, scores, g.batch, vocab);
    } else {
        std::ofstream file(o.output, std::ios::binary);
        if (!file) {
            throw DataError("cannot write heatmap '" + o.output + "'");
        }
        write_heatmap(file, scores, g.batch, vocab);
    }
}

inline void evaluate(const Options& o, std::ostream& out)
{
    const auto run = eval::read_run(o.run);
    const auto qrels = eval::read_qrels(o.qrels);
    const auto report = eval::ndcg_at_k(run, qrels, o.k);
    std::ostringstream text;
    text << std::fixed << std::setprecision(4);
    for (const auto& q : report.per_query) {
        text << "ndcg_cut_" << o.k << '\t' << q.qid << '\t' << q.value << (q.no_relevant ? "\tno_relevant" : "")
             << '\n';
    }
    for (const auto& q : report.unjudged) {
        text << "unjudged\t" << q << '\n';
    }
    text << "ndcg_cut_" << o.k << "\tall\t" << report.mean << '\n';
    if (o.output.empty()) {
        out << text.str();
    } else {
        std::ofstream file(o.output, std::ios::binary);
        if (!file) {
            throw DataError("cannot write '" + o.output + "'");
        }
        file << text.str();
    }
}

struct SimulationResult {
    std::size_t trials = 0;
    std::size_t top_k = 0;
    double top_k_exact_rate = 0.0;
    double mean_tau = 0.0;
};

/// Random hidden relevance per trial, ranked through the sliding window.
inline SimulationResult simulate_window(const ListwiseRanker* fixed, std::size_t n, const WindowSpec& spec,
                                        std::size_t trials, std::uint64_t seed)
{
    spec.validate();
    if (n < 1) {
        throw ContractError("simulate-window: n must be >= 1");
    }
    SimulationResult res;
    res.trials = trials;
    res.top_k = std::min(spec.window - spec.stride, n);
    if (res.top_k == 0) {
        res.top_k = std::min<std::size_t>(1, n);
    }
    std::mt19937_64 rng(seed);
    std::size_t exact = 0;
    double tau_total = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        std::vector<double> rel(n);
        std::iota(rel.begin(), rel.end(), 0.0);
        std::shuffle(rel.begin(), rel.end(), rng);
        std::unordered_map<std::string, double> lookup;
        CandidateList list;
        list.query_id = "sim";
        for (std::size_t i = 0; i < n; ++i) {
            const std::string id = "d" + std::to_string(i);
            lookup[id] = rel[i];
            list.entries.push_back({id, "", 0.0});
        }
        const OracleRanker oracle([&](const std::string& id) { return lookup.at(id); });
        const auto ranked = rerank_sliding(list, fixed ? *fixed : oracle, spec);
        std::vector<std::string> truth, got;
        for (const auto& c : list.entries) {
            truth.push_back(c.docid);
        }
        std::stable_sort(truth.begin(), truth.end(),
                         [&](const std::string& a, const std::string& b) { return lookup[a] > lookup[b]; });
        for (const auto& c : ranked.entries) {
            got.push_back(c.docid);
        }
        if (std::equal(truth.begin(), truth.begin() + static_cast<std::ptrdiff_t>(res.top_k), got.begin())) {
            ++exact;
        }
        tau_total += eval::kendall_tau(got, truth);
    }
    if (trials > 0) {
        res.top_k_exact_rate = static_cast<double>(exact) / static_cast<double>(trials);
        res.mean_tau = tau_total / static_cast<double>(trials);
    }
    return res;
}

inline void simulate(const Options& o, std::ostream& out)
{
    const WindowSpec spec{o.window, o.stride, o.passes};
    std::unique_ptr<ListwiseRanker> fixed;
    if (!o.oracle && o.ranker == "identity") {
        fixed = std::make_unique<IdentityRanker>();
    } else if (!o.oracle && o.ranker == "reverse") {
        fixed = std::make_unique<ReversingRanker>();
    }
    const auto r = simulate_window(fixed.get(), o.n, spec, o.trials, o.seed);
    std::ostringstream text;
    text << "trials\t" << r.trials << '\n'
         << "top" << r.top_k << "_exact_match_rate\t" << eval::detail::format_double(r.top_k_exact_rate) << '\n'
         << "mean_kendall_tau\t" << eval::detail::format_double(r.mean_tau) << '\n';
    if (o.output.empty()) {
        out << text.str();
    } else {
        std::ofstream file(o.output, std::ios::binary);
        if (!file) {
            throw DataError("cannot write '" + o.output + "'");
        }
        file << text.str();
    }
}

inline train::TrainConfig train_config(const Options& o)
{
    train::TrainConfig tc;
    tc.batch_size = o.batch_size;
    tc.peak_lr = o.lr;
    tc.warmup_steps = o.warmup;
    tc.dropout = o.dropout;
    tc.epochs = o.epochs;
    tc.subset_count = o.subset_count;
    tc.subset_max = o.subset_max;
    tc.window = o.window;
    tc.budget = o.budget;
    tc.seed = o.seed;
    return tc;
}

inline train::Dataset toy_dataset(const Options& o)
{
    if (!o.dataset.empty()) {
        return train::read_dataset(o.dataset);
    }
    return o.task == "qa" ? train::gen_qa_data(o.examples, o.passages, o.seed)
                          : train::gen_distill_data(o.examples, o.passages, o.seed);
}

template <typename T>
void train_toy(const Options& o, std::ostream& out)
{
    auto model = o.model.empty() ? [&] {
        ModelConfig cfg = train::toy_model_config();
        if (!o.vocab.empty()) {
            cfg.tokenizer = "file";
            cfg.vocab_size = Vocab::from_file(o.vocab).size();
        } else if (o.tokenizer == "byte") {
            cfg.tokenizer = "byte";
            cfg.vocab_size = Vocab::byte_level().size();
        }
        return FidModel<T>::initialize(cfg, o.seed);
    }()
                                 : FidModel<T>::load(o.model);
    const auto vocab = load_vocab(o, model.config());
    auto tc = train_config(o);
    train::Dataset data = toy_dataset(o);
    if (o.task == "distill") {
        const auto filtered = train::filter_malformed(data);
        if (filtered.removed > 0) {
            std::cerr << "removed " << filtered.removed << " malformed teacher strings\n";
        }
        data = filtered.kept;
    }
    train::AdamW<T> opt(model.parameters());
    const auto stage1 = train::make_training_examples(vocab, data, o.budget);
    auto curve = train::train<T>(model, stage1, tc, opt);
    if (o.stage2_epochs > 0) {
        auto tc2 = tc;
        tc2.epochs = o.stage2_epochs;
        tc2.seed = tc.seed + 1;
        const auto stage2 = train::make_training_examples(vocab, train::stage_dataset(data, tc2, 2), o.budget);
        const auto more = train::train<T>(model, stage2, tc2, opt);
        curve.insert(curve.end(), more.begin(), more.end());
    }
    model.save(o.output);
    if (!o.loss_curve.empty()) {
        train::write_loss_curve(o.loss_curve, curve);
    }
    out << "steps\t" << curve.size() << '\n'
        << "final_loss\t" << eval::detail::format_double(curve.empty() ? 0.0 : curve.back().loss) << '\n';
}

/// Synthetic IR fixture from QA data: the answer passage is the single relevant document.
inline void write_ir_fixture(const train::Dataset& data, const std::string& dir, std::uint64_t seed)
{
    std::filesystem::create_directories(dir);
    eval::TextTable corpus, queries;
    eval::Run run;
    eval::Qrels qrels;
    std::mt19937_64 rng(seed);
    for (std::size_t q = 0; q < data.size(); ++q) {
        const auto& ex = data[q];
        const std::string qid = "q" + std::to_string(q + 1);
        queries.add(qid, ex.query);
        std::vector<std::size_t> order(ex.passages.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const auto relevant = ex.answer_passage();
        for (std::size_t p = 0; p < ex.passages.size(); ++p) {
            const std::string docid = qid + "-d" + std::to_string(p + 1);
            corpus.add(docid, ex.passages[p]);
            qrels.judgments[qid][docid] = relevant && *relevant == p ? 1 : 0;
        }
        for (std::size_t r = 0; r < order.size(); ++r) {
            run.entries.push_back({qid, qid + "-d" + std::to_string(order[r] + 1), r + 1,
                                   static_cast<double>(order.size() - r), "synthetic"});
        }
    }
    const std::filesystem::path base(dir);
    eval::write_corpus((base / "corpus.jsonl").string(), corpus);
    eval::write_queries((base / "queries.tsv").string(), queries);
    eval::write_run((base / "run.txt").string(), run);
    std::ofstream q((base / "qrels.txt").string(), std::ios::binary);
    if (!q) {
        throw DataError("cannot write qrels in '" + dir + "'");
    }
    eval::write_qrels(q, qrels);
}

inline void gen_data(const Options& o, std::ostream& out)
{
    if (o.task == "ir") {
        if (o.output_dir.empty()) {
            throw ContractError("gen-data --task ir needs --output-dir");
        }
        write_ir_fixture(train::gen_qa_data(o.examples, o.passages, o.seed), o.output_dir, o.seed);
        return;
    }
    const auto data = o.task == "qa" ? train::gen_qa_data(o.examples, o.passages, o.seed)
                                     : train::gen_distill_data(o.examples, o.passages, o.seed);
    if (o.output.empty()) {
        train::write_dataset(out, data);
    } else {
        train::write_dataset(o.output, data);
    }
}

}  // namespace detail

/// Parses and executes one invocation. Data goes to `out`, diagnostics to `err`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Listwise passage reranking with Fusion-in-Decoder models", "fidrank"};
    app.require_subcommand(1);
    detail::Options o;

    auto* distill = app.add_subcommand("rerank-distill", "Sliding-window reranking by generated ranking strings");
    detail::add_model_flags(distill, o, true);
    detail::add_input_flags(distill, o);
    detail::add_window_flags(distill, o);
    detail::add_run_flags(distill, o);
    distill->add_option("--output-run", o.output_run, "Output TREC run (default: stdout)");
    distill->add_option("--tag", o.tag, "Run tag")->capture_default_str();

    auto* score = app.add_subcommand("rerank-score", "Single-pass reranking by cross-attention scores");
    detail::add_model_flags(score, o, true);
    detail::add_input_flags(score, o);
    detail::add_run_flags(score, o);
    score->add_option("--output-run", o.output_run, "Output TREC run (default: stdout)");
    score->add_option("--tag", o.tag, "Run tag")->capture_default_str();
    score->add_option("--steps", o.steps, "Decoding steps averaged")
        ->check(CLI::IsMember({"all", "first"}))
        ->capture_default_str();
    score->add_flag("--no-zeroing", o.no_zeroing, "Keep prompt-prefix tokens in the average");
    score->add_option("--max-answer-tokens", o.max_answer_tokens, "Decoding steps for the answer")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    auto* ev = app.add_subcommand("eval", "nDCG@k of a run against qrels");
    ev->add_option("--run", o.run, "TREC run")->required()->check(CLI::ExistingFile);
    ev->add_option("--qrels", o.qrels, "TREC qrels")->required()->check(CLI::ExistingFile);
    ev->add_option("--k", o.k, "Cutoff")->check(CLI::PositiveNumber)->capture_default_str();
    ev->add_option("--output", o.output, "Write the report here instead of stdout");
    detail::add_run_flags(ev, o);

    auto* tr = app.add_subcommand("train-toy", "Train a toy model on synthetic data");
    tr->add_option("--task", o.task, "Synthetic task")->check(CLI::IsMember({"distill", "qa"}))->capture_default_str();
    tr->add_option("--model", o.model, "Initial checkpoint (default: fresh weights)")->check(CLI::ExistingFile);
    tr->add_option("--vocab", o.vocab, "Vocabulary file for a fresh model")->check(CLI::ExistingFile);
    tr->add_option("--tokenizer", o.tokenizer, "Built-in tokenizer for a fresh model")
        ->check(CLI::IsMember({"toy", "byte"}))
        ->capture_default_str();
    tr->add_option("--precision", o.precision, "Training precision in bits")
        ->check(CLI::IsMember({32, 64}))
        ->capture_default_str();
    tr->add_option("--dataset", o.dataset, "Dataset JSONL (default: generate)")->check(CLI::ExistingFile);
    tr->add_option("--examples", o.examples, "Generated examples")->capture_default_str();
    tr->add_option("--passages", o.passages, "Passages per generated example")->capture_default_str();
    tr->add_option("--epochs", o.epochs, "Stage-1 epochs")->capture_default_str();
    tr->add_option("--stage2-epochs", o.stage2_epochs, "Stage-2 epochs with subset augmentation")
        ->capture_default_str();
    tr->add_option("--batch-size", o.batch_size, "Examples per step")->check(CLI::PositiveNumber)->capture_default_str();
    tr->add_option("--lr", o.lr, "Peak learning rate")->capture_default_str();
    tr->add_option("--warmup", o.warmup, "Warmup steps")->capture_default_str();
    tr->add_option("--dropout", o.dropout, "Dropout rate")->capture_default_str();
    tr->add_option("--subset-count", o.subset_count, "Stage-2 subsets per example")->capture_default_str();
    tr->add_option("--subset-max", o.subset_max, "Largest stage-2 subset")->capture_default_str();
    tr->add_option("--window", o.window, "Ranker window size bounding subsets")->capture_default_str();
    tr->add_option("--budget", o.budget, "Prompt token budget")->check(CLI::IsMember({150, 300}))->capture_default_str();
    tr->add_option("--output", o.output, "Output checkpoint")->required();
    tr->add_option("--loss-curve", o.loss_curve, "Loss curve CSV");
    detail::add_run_flags(tr, o);

    auto* sim = app.add_subcommand("simulate-window", "Sliding-window simulation over random relevance");
    sim->add_flag("--oracle", o.oracle, "Use the perfect within-window ranker");
    sim->add_option("--ranker", o.ranker, "Within-window ranker")
        ->check(CLI::IsMember({"oracle", "identity", "reverse"}))
        ->capture_default_str();
    sim->add_option("--n", o.n, "List length")->check(CLI::PositiveNumber)->capture_default_str();
    sim->add_option("--trials", o.trials, "Random trials")->capture_default_str();
    sim->add_option("--output", o.output, "Write the report here instead of stdout");
    detail::add_window_flags(sim, o);
    detail::add_run_flags(sim, o);

    auto* ex = app.add_subcommand("explain", "Per-token cross-attention heatmap as JSON lines");
    detail::add_model_flags(ex, o, true);
    detail::add_input_flags(ex, o);
    detail::add_run_flags(ex, o);
    ex->add_option("--query-id", o.query_id, "Query to explain")->required();
    ex->add_option("--output", o.output, "Heatmap JSONL (default: stdout)");
    ex->add_option("--steps", o.steps, "Decoding steps averaged")
        ->check(CLI::IsMember({"all", "first"}))
        ->capture_default_str();
    ex->add_option("--max-answer-tokens", o.max_answer_tokens, "Decoding steps for the answer")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset or IR fixture");
    gen->add_option("--task", o.task, "distill or qa dataset, or ir fixture directory")
        ->check(CLI::IsMember({"distill", "qa", "ir"}))
        ->capture_default_str();
    gen->add_option("--examples", o.examples, "Examples")->capture_default_str();
    gen->add_option("--passages", o.passages, "Passages per example")->capture_default_str();
    gen->add_option("--output", o.output, "Dataset JSONL (default: stdout)");
    gen->add_option("--output-dir", o.output_dir, "Fixture directory for --task ir");
    detail::add_run_flags(gen, o);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (distill->parsed()) {
            o.precision == 32 ? detail::rerank_distill<float>(o, out) : detail::rerank_distill<double>(o, out);
        } else if (score->parsed()) {
            o.precision == 32 ? detail::rerank_score<float>(o, out) : detail::rerank_score<double>(o, out);
        } else if (ev->parsed()) {
            detail::evaluate(o, out);
        } else if (tr->parsed()) {
            o.precision == 32 ? detail::train_toy<float>(o, out) : detail::train_toy<double>(o, out);
        } else if (sim->parsed()) {
            detail::simulate(o, out);
        } else if (ex->parsed()) {
            o.precision == 32 ? detail::explain<float>(o, out) : detail::explain<double>(o, out);
        } else if (gen->parsed()) {
            detail::gen_data(o, out);
        }
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_contract;
    }
    out.flush();
    return exit_ok;
}

inline int run(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

}  // namespace fidrank::cli
