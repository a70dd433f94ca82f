// Command line front end: every pipeline stage is a subcommand, so the whole
// mine -> train -> translate -> retrieve -> evaluate chain can be scripted.
// Each subcommand accepts --config FILE (a JSON object keyed by flag names,
// dashes as underscores); explicit flags always win over config values.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qtc/align.hpp"
#include "qtc/bpe.hpp"
#include "qtc/common.hpp"
#include "qtc/experiment.hpp"
#include "qtc/io.hpp"
#include "qtc/metrics.hpp"
#include "qtc/mine.hpp"
#include "qtc/nmt/beam.hpp"
#include "qtc/nmt/checkpoint.hpp"
#include "qtc/nmt/train.hpp"
#include "qtc/retrieval.hpp"
#include "qtc/synthetic.hpp"
#include "qtc/text.hpp"
#include "qtc/version.hpp"
#include "qtc/vocab.hpp"

namespace {

namespace fs = std::filesystem;

nlohmann::json load_config_file(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in = qtc::open_input(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw qtc::SchemaError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw qtc::SchemaError("config file " + path + " must hold a JSON object");
    return j;
}

// Fill `value` from the config object unless the flag was given explicitly.
template <typename T>
void merge_opt(const nlohmann::json& cfg, const CLI::App& sub, const std::string& flag,
               const std::string& key, T& value) {
    if (sub.count(flag) > 0) return;
    auto it = cfg.find(key);
    if (it == cfg.end()) return;
    try {
        value = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw qtc::SchemaError("config: bad value for '" + key + "'");
    }
}

void require(const std::string& value, const std::string& flag) {
    if (value.empty()) throw qtc::Error(qtc::ExitCode::usage, flag + " is required");
}

std::vector<std::string> ws_tokens(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

std::vector<qtc::TokenSequence> tokenize_lines(const std::vector<std::string>& lines,
                                               const std::string& lang) {
    std::vector<qtc::TokenSequence> out;
    out.reserve(lines.size());
    for (const std::string& line : lines) out.push_back(qtc::tokenize(line, lang));
    return out;
}

void write_token_lines(const std::vector<std::vector<std::string>>& rows, const std::string& path) {
    std::ofstream out = qtc::open_output(path);
    for (const std::vector<std::string>& row : rows) out << qtc::join(row, " ") << "\n";
}

// ---- bpe-learn / bpe-apply -------------------------------------------------

struct BpeLearnOpts {
    std::string input, output, config, lang = "en";
    size_t merges = 1000;
};

void run_bpe_learn(const CLI::App& sub, BpeLearnOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--input", "input", o.input);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--merges", "merges", o.merges);
    merge_opt(cfg, sub, "--lang", "lang", o.lang);
    require(o.input, "--input");
    require(o.output, "--output");

    const std::vector<qtc::TokenSequence> corpus = tokenize_lines(qtc::read_lines(o.input), o.lang);
    const qtc::BpeModel model = qtc::learn_bpe(corpus, o.merges);
    qtc::save_bpe(model, o.output);
    std::cout << "learned " << model.merges.size() << " merges\n";
}

struct BpeApplyOpts {
    std::string input, codes, output, config, lang = "en";
};

void run_bpe_apply(const CLI::App& sub, BpeApplyOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--input", "input", o.input);
    merge_opt(cfg, sub, "--codes", "codes", o.codes);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--lang", "lang", o.lang);
    require(o.input, "--input");
    require(o.codes, "--codes");
    require(o.output, "--output");

    const qtc::BpeModel model = qtc::load_bpe(o.codes);
    std::ofstream out = qtc::open_output(o.output);
    for (const std::string& line : qtc::read_lines(o.input))
        out << qtc::join(qtc::apply_bpe(model, qtc::tokenize(line, o.lang)).tokens, " ") << "\n";
}

// ---- align -------------------------------------------------------------

struct AlignOpts {
    std::string src, tgt, output, alignments, config;
    std::string src_lang = "src", tgt_lang = "tgt";
    int iterations = 10;
};

void run_align(const CLI::App& sub, AlignOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--src", "src", o.src);
    merge_opt(cfg, sub, "--tgt", "tgt", o.tgt);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--alignments", "alignments", o.alignments);
    merge_opt(cfg, sub, "--iterations", "iterations", o.iterations);
    merge_opt(cfg, sub, "--src-lang", "src_lang", o.src_lang);
    merge_opt(cfg, sub, "--tgt-lang", "tgt_lang", o.tgt_lang);
    require(o.src, "--src");
    require(o.tgt, "--tgt");
    require(o.output, "--output");

    const qtc::Bitext bitext = qtc::load_parallel_text(o.src, o.tgt, o.src_lang, o.tgt_lang);
    qtc::Ibm1Stats stats;
    const qtc::TranslationTable table = qtc::train_ibm1(bitext, o.iterations, &stats);
    qtc::save_translation_table(table, o.output);
    for (size_t i = 0; i < stats.log_likelihood.size(); ++i)
        std::cout << "iteration " << (i + 1)
                  << ": log-likelihood = " << qtc::format_double(stats.log_likelihood[i], 9) << "\n";

    if (!o.alignments.empty()) {
        std::ofstream out = qtc::open_output(o.alignments);
        for (const auto& [s, t] : bitext) {
            const qtc::Alignment a = qtc::viterbi_align(table, s, t);
            std::vector<std::string> links;
            for (const qtc::AlignLink& link : a.links)
                links.push_back(std::to_string(link.src) + "-" + std::to_string(link.tgt));
            out << qtc::join(links, " ") << "\n";
        }
    }
}

// ---- mine ----------------------------------------------------------------

struct MineOpts {
    std::string table, docs, clicks, output, config, lang = "en";
    size_t top_m = 10, k_max = 50;
    double p_min = 0.01;
};

void run_mine(const CLI::App& sub, MineOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--table", "table", o.table);
    merge_opt(cfg, sub, "--docs", "docs", o.docs);
    merge_opt(cfg, sub, "--clicks", "clicks", o.clicks);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--top-m", "top_m", o.top_m);
    merge_opt(cfg, sub, "--k-max", "k_max", o.k_max);
    merge_opt(cfg, sub, "--p-min", "p_min", o.p_min);
    merge_opt(cfg, sub, "--lang", "lang", o.lang);
    require(o.table, "--table");
    require(o.docs, "--docs");
    require(o.clicks, "--clicks");
    require(o.output, "--output");

    const qtc::TranslationTable table = qtc::load_translation_table(o.table);
    const qtc::DocumentCollection docs = qtc::load_documents(o.docs, o.lang);
    const qtc::ClickLog log = qtc::load_click_log(o.clicks, docs, o.lang);
    const qtc::ConstraintTable constraints =
        qtc::build_constraint_table(table, log, docs, o.top_m, o.k_max, o.p_min);
    qtc::save_constraint_table(constraints, o.output);
    std::cout << "constraint rows: " << constraints.rows.size() << "\n"
              << "words without clicks: " << constraints.no_click_words.size() << "\n"
              << "words with all-zero scores: " << constraints.all_zero_words.size() << "\n";
}

// ---- train ---------------------------------------------------------------

struct TrainOpts {
    std::string src, tgt, output, constraints, config;
    std::string src_vocab_out, tgt_vocab_out;
    std::string src_lang = "src", tgt_lang = "tgt";
    int steps = 300, batch_tokens = 256, warmup_steps = 40;
    int n_layers = 2, d_model = 32, n_heads = 2, d_ff = 64, max_len = 32;
    double alpha = 0.6;
    uint64_t seed = 1;
    size_t vocab_limit = 10000;
};

void run_train(const CLI::App& sub, TrainOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--src", "src", o.src);
    merge_opt(cfg, sub, "--tgt", "tgt", o.tgt);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--constraints", "constraints", o.constraints);
    merge_opt(cfg, sub, "--src-vocab-out", "src_vocab_out", o.src_vocab_out);
    merge_opt(cfg, sub, "--tgt-vocab-out", "tgt_vocab_out", o.tgt_vocab_out);
    merge_opt(cfg, sub, "--src-lang", "src_lang", o.src_lang);
    merge_opt(cfg, sub, "--tgt-lang", "tgt_lang", o.tgt_lang);
    merge_opt(cfg, sub, "--steps", "steps", o.steps);
    merge_opt(cfg, sub, "--batch-tokens", "batch_tokens", o.batch_tokens);
    merge_opt(cfg, sub, "--warmup-steps", "warmup_steps", o.warmup_steps);
    merge_opt(cfg, sub, "--layers", "layers", o.n_layers);
    merge_opt(cfg, sub, "--d-model", "d_model", o.d_model);
    merge_opt(cfg, sub, "--heads", "heads", o.n_heads);
    merge_opt(cfg, sub, "--d-ff", "d_ff", o.d_ff);
    merge_opt(cfg, sub, "--max-len", "max_len", o.max_len);
    merge_opt(cfg, sub, "--alpha", "alpha", o.alpha);
    merge_opt(cfg, sub, "--seed", "seed", o.seed);
    merge_opt(cfg, sub, "--vocab-limit", "vocab_limit", o.vocab_limit);
    require(o.src, "--src");
    require(o.tgt, "--tgt");
    require(o.output, "--output");

    const qtc::Bitext bitext = qtc::load_parallel_text(o.src, o.tgt, o.src_lang, o.tgt_lang);
    std::vector<qtc::TokenSequence> src_corpus, tgt_corpus;
    for (const auto& [s, t] : bitext) {
        src_corpus.push_back(s);
        tgt_corpus.push_back(t);
    }
    const qtc::Vocabulary src_vocab = qtc::build_vocab(src_corpus, o.vocab_limit);
    const qtc::Vocabulary tgt_vocab = qtc::build_vocab(tgt_corpus, o.vocab_limit);

    qtc::ModelDims dims;
    dims.n_layers = o.n_layers;
    dims.d_model = o.d_model;
    dims.n_heads = o.n_heads;
    dims.d_ff = o.d_ff;
    dims.max_len = o.max_len;
    dims.src_vocab = static_cast<int>(src_vocab.size());
    dims.tgt_vocab = static_cast<int>(tgt_vocab.size());

    qtc::ConstraintTable table;
    const bool smoothing = !o.constraints.empty();
    if (smoothing) table = qtc::load_constraint_table(o.constraints);

    size_t skipped = 0;
    const qtc::TrainData data = qtc::prepare_train_data(bitext, src_vocab, tgt_vocab,
                                                        smoothing ? &table : nullptr, dims.max_len, &skipped);
    qtc::TrainConfig tc;
    tc.steps = o.steps;
    tc.batch_tokens = o.batch_tokens;
    tc.warmup_steps = o.warmup_steps;
    tc.alpha = o.alpha;
    tc.smoothing = smoothing;
    tc.seed = o.seed;

    qtc::TrainResult result;
    const qtc::TransformerParams params = qtc::train_model(dims, data, tc, &result);
    qtc::save_checkpoint(params, o.output);
    qtc::save_vocab(src_vocab, o.src_vocab_out.empty() ? o.output + ".src.vocab" : o.src_vocab_out);
    qtc::save_vocab(tgt_vocab, o.tgt_vocab_out.empty() ? o.output + ".tgt.vocab" : o.tgt_vocab_out);

    if (skipped > 0) std::cout << "skipped " << skipped << " over-length pairs\n";
    if (!result.loss_history.empty())
        std::cout << "final loss: " << qtc::format_double(result.loss_history.back(), 6) << "\n";
}

// ---- translate -------------------------------------------------------------

struct TranslateOpts {
    std::string checkpoint, src_vocab, tgt_vocab, input, output, constraints, config;
    std::string lang = "src";
    int beam_size = 4, max_len = 0;  // 0: as long as the model allows
    bool no_constraint = false;
};

void run_translate(const CLI::App& sub, TranslateOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--checkpoint", "checkpoint", o.checkpoint);
    merge_opt(cfg, sub, "--src-vocab", "src_vocab", o.src_vocab);
    merge_opt(cfg, sub, "--tgt-vocab", "tgt_vocab", o.tgt_vocab);
    merge_opt(cfg, sub, "--input", "input", o.input);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--constraints", "constraints", o.constraints);
    merge_opt(cfg, sub, "--lang", "lang", o.lang);
    merge_opt(cfg, sub, "--beam", "beam", o.beam_size);
    merge_opt(cfg, sub, "--max-len", "max_len", o.max_len);
    merge_opt(cfg, sub, "--no-constraint", "no_constraint", o.no_constraint);
    require(o.checkpoint, "--checkpoint");
    require(o.src_vocab, "--src-vocab");
    require(o.tgt_vocab, "--tgt-vocab");
    require(o.input, "--input");
    require(o.output, "--output");

    const qtc::TransformerParams params = qtc::load_checkpoint(o.checkpoint);
    const qtc::Vocabulary src_vocab = qtc::load_vocab(o.src_vocab);
    const qtc::Vocabulary tgt_vocab = qtc::load_vocab(o.tgt_vocab);
    if (static_cast<int>(src_vocab.size()) != params.dims.src_vocab ||
        static_cast<int>(tgt_vocab.size()) != params.dims.tgt_vocab)
        throw qtc::SchemaError("vocabulary sizes do not match the checkpoint");

    const bool constrained = !o.constraints.empty() && !o.no_constraint;
    qtc::ConstraintTable table;
    if (constrained) table = qtc::load_constraint_table(o.constraints);

    qtc::BeamConfig bc;
    bc.beam_size = o.beam_size;
    bc.max_len = o.max_len > 0 ? o.max_len : params.dims.max_len - 1;
    bc.mode = constrained ? qtc::DecodeMode::constrained : qtc::DecodeMode::plain;

    std::ofstream out = qtc::open_output(o.output);
    for (const std::string& line : qtc::read_lines(o.input)) {
        const std::vector<std::string> tokens = qtc::tokenize(line, o.lang).tokens;
        qtc::ConstraintMask mask;
        const qtc::ConstraintMask* mask_ptr = nullptr;
        if (constrained) {
            mask = qtc::query_constraint_mask(table, tokens, tgt_vocab);
            mask_ptr = &mask;
        }
        out << qtc::join(qtc::translate(params, src_vocab, tgt_vocab, tokens, mask_ptr, bc), " ") << "\n";
    }
}

// ---- index / retrieve -------------------------------------------------------

struct IndexOpts {
    std::string docs, output, config, format = "json", lang = "en";
    double k1 = 1.2, b = 0.75;
};

void run_index(const CLI::App& sub, IndexOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--docs", "docs", o.docs);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--format", "format", o.format);
    merge_opt(cfg, sub, "--k1", "k1", o.k1);
    merge_opt(cfg, sub, "--b", "b", o.b);
    merge_opt(cfg, sub, "--lang", "lang", o.lang);
    require(o.docs, "--docs");
    require(o.output, "--output");
    if (o.format != "json" && o.format != "binary")
        throw qtc::Error(qtc::ExitCode::usage, "--format must be 'json' or 'binary'");

    const qtc::DocumentCollection docs = qtc::load_documents(o.docs, o.lang);
    const qtc::InvertedIndex index(docs, {o.k1, o.b});
    if (o.format == "json")
        index.save_json(o.output);
    else
        index.save_binary(o.output);
    std::cout << "indexed " << index.doc_count() << " documents\n";
}

struct RetrieveOpts {
    std::string index, query, queries, output, config, lang = "en";
    size_t k = 10;
};

void run_retrieve(const CLI::App& sub, RetrieveOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--index", "index", o.index);
    merge_opt(cfg, sub, "--query", "query", o.query);
    merge_opt(cfg, sub, "--queries", "queries", o.queries);
    merge_opt(cfg, sub, "--output", "output", o.output);
    merge_opt(cfg, sub, "--k", "k", o.k);
    merge_opt(cfg, sub, "--lang", "lang", o.lang);
    require(o.index, "--index");
    if (o.query.empty() == o.queries.empty())
        throw qtc::Error(qtc::ExitCode::usage, "pass exactly one of --query or --queries");

    const qtc::InvertedIndex index = qtc::InvertedIndex::load(o.index);
    if (!o.query.empty()) {
        const std::vector<qtc::SearchHit> hits = index.search(qtc::tokenize(o.query, o.lang).tokens, o.k);
        for (size_t i = 0; i < hits.size(); ++i)
            std::cout << (i + 1) << "\t" << hits[i].doc_id << "\t" << qtc::format_double(hits[i].score, 6)
                      << "\n";
        return;
    }

    require(o.output, "--output");
    std::ofstream out = qtc::open_output(o.output);
    const std::vector<std::string> lines = qtc::read_lines(o.queries);
    char qid[16];
    for (size_t i = 0; i < lines.size(); ++i) {
        std::snprintf(qid, sizeof(qid), "q%04zu", i + 1);
        const std::vector<qtc::SearchHit> hits = index.search(qtc::tokenize(lines[i], o.lang).tokens, o.k);
        for (size_t r = 0; r < hits.size(); ++r)
            out << qid << "\t" << (r + 1) << "\t" << hits[r].doc_id << "\t"
                << qtc::format_double(hits[r].score, 6) << "\n";
    }
}

// ---- eval-bleu / eval-retrieval ---------------------------------------------

struct EvalBleuOpts {
    std::string hyp, ref, config;
};

void run_eval_bleu(const CLI::App& sub, EvalBleuOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--hyp", "hyp", o.hyp);
    merge_opt(cfg, sub, "--ref", "ref", o.ref);
    require(o.hyp, "--hyp");
    require(o.ref, "--ref");

    const std::vector<std::string> hyp_lines = qtc::read_lines(o.hyp);
    const std::vector<std::string> ref_lines = qtc::read_lines(o.ref);
    if (hyp_lines.size() != ref_lines.size())
        throw qtc::SchemaError("hypothesis and reference files differ in line count");

    std::vector<std::vector<std::string>> hyps, refs;
    for (const std::string& line : hyp_lines) hyps.push_back(ws_tokens(line));
    for (const std::string& line : ref_lines) refs.push_back(ws_tokens(line));
    std::printf("BLEU = %.2f\n", qtc::bleu(hyps, refs));
}

struct EvalRetrievalOpts {
    std::string results, qrels, config;
    size_t recall_k = 10;
};

void run_eval_retrieval(const CLI::App& sub, EvalRetrievalOpts& o) {
    const nlohmann::json cfg = load_config_file(o.config);
    merge_opt(cfg, sub, "--results", "results", o.results);
    merge_opt(cfg, sub, "--qrels", "qrels", o.qrels);
    merge_opt(cfg, sub, "--recall-k", "recall_k", o.recall_k);
    require(o.results, "--results");
    require(o.qrels, "--qrels");

    const qtc::Judgments judgments = qtc::load_judgments(o.qrels);
    qtc::RankedResults results;
    size_t lineno = 0;
    for (const std::string& line : qtc::read_lines(o.results)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> cols = qtc::split(line, '\t');
        if (cols.size() != 4)
            throw qtc::SchemaError("results line " + std::to_string(lineno) +
                                   ": expected qid<TAB>rank<TAB>doc_id<TAB>score");
        std::vector<std::string>& ranking = results[cols[0]];
        const long long rank = qtc::parse_int(cols[1], "rank");
        if (rank != static_cast<long long>(ranking.size()) + 1)
            throw qtc::SchemaError("results line " + std::to_string(lineno) + ": rank " + cols[1] +
                                   " is out of order for query " + cols[0]);
        qtc::parse_double(cols[3], "score");
        ranking.push_back(cols[2]);
    }
    if (results.empty()) throw qtc::SchemaError("results file has no rows");

    const qtc::RetrievalEval eval = qtc::evaluate_retrieval(results, judgments, o.recall_k);
    std::printf("RECALL@%zu = %.2f\n", o.recall_k, eval.recall);
    std::printf("MAP = %.4f\n", eval.map);
    std::printf("NDCG@10 = %.4f\n", eval.ndcg10);
    std::printf("evaluated = %zu\n", eval.evaluated);
    std::printf("skipped = %zu\n", eval.skipped);
}

// ---- gen-synthetic / experiment ---------------------------------------------

void write_world_files(const qtc::SyntheticWorld& world, const std::string& dir) {
    fs::create_directories(dir);
    qtc::save_parallel_text(world.bitext, dir + "/bitext.src", dir + "/bitext.tgt");
    qtc::save_documents(world.docs, dir + "/docs.jsonl");
    qtc::save_click_log(world.clicks, dir + "/clicks.jsonl");
    qtc::save_judgments(world.judgments, dir + "/qrels.tsv");

    std::ofstream qsrc = qtc::open_output(dir + "/queries.src");
    std::ofstream qref = qtc::open_output(dir + "/refs.tgt");
    std::ofstream qids = qtc::open_output(dir + "/queries.tsv");
    for (const qtc::TestQuery& q : world.queries) {
        qsrc << qtc::join(q.source.tokens, " ") << "\n";
        qref << qtc::join(q.reference.tokens, " ") << "\n";
        qids << q.qid << "\t" << qtc::join(q.source.tokens, " ") << "\t"
             << qtc::join(q.reference.tokens, " ") << "\n";
    }
}

struct GenSyntheticOpts {
    std::string output, config;
    uint64_t seed = 1;
};

void run_gen_synthetic(const CLI::App& sub, GenSyntheticOpts& o) {
    qtc::ExperimentConfig cfg = qtc::load_experiment_config(load_config_file(o.config));
    if (sub.count("--seed") > 0) cfg.seed = o.seed;
    require(o.output, "--output");

    const qtc::SyntheticWorld world = qtc::gen_synthetic(cfg.world, cfg.seed);
    write_world_files(world, o.output);
    std::printf("bitext pairs: %zu\n", world.bitext.size());
    std::printf("documents: %zu\n", world.docs.size());
    std::printf("click queries: %zu\n", world.clicks.size());
    std::printf("test queries: %zu\n", world.queries.size());
    std::printf("search-sense coverage: %.4f\n", qtc::audit_search_sense_coverage(world));
}

struct ExperimentOpts {
    std::string output, config;
    uint64_t seed = 1;
    int steps = 0;  // 0: keep the config value
};

void run_experiment_cmd(const CLI::App& sub, ExperimentOpts& o) {
    qtc::ExperimentConfig cfg = qtc::load_experiment_config(load_config_file(o.config));
    if (sub.count("--seed") > 0) cfg.seed = o.seed;
    if (sub.count("--steps") > 0) cfg.steps = o.steps;
    cfg.validate();
    require(o.output, "--output");

    fs::create_directories(o.output);
    fs::create_directories(o.output + "/checkpoints");
    fs::create_directories(o.output + "/translations");

    qtc::ExperimentReport report;
    report.seed = cfg.seed;
    report.grid_m = cfg.grid_m;
    report.default_m = cfg.default_m;
    report.recall_k = cfg.recall_k;

    qtc::ExperimentContext ctx(cfg);
    std::string stage = "world generation";
    try {
        const qtc::SyntheticWorld& world = ctx.world();
        report.audit_coverage = qtc::audit_search_sense_coverage(world);
        write_world_files(world, o.output + "/world");

        stage = "alignment";
        qtc::save_translation_table(ctx.ttable(), o.output + "/ttable.tsv");

        stage = "candidate mining";
        for (int m : cfg.grid_m)
            qtc::save_constraint_table(ctx.constraints(m), o.output + "/constraints_m" + std::to_string(m) + ".tsv");

        stage = "vocabulary";
        qtc::save_vocab(ctx.src_vocab(), o.output + "/checkpoints/src.vocab");
        qtc::save_vocab(ctx.tgt_vocab(), o.output + "/checkpoints/tgt.vocab");

        stage = "training";
        qtc::save_checkpoint(ctx.model(0), o.output + "/checkpoints/baseline.qtck");
        for (int m : cfg.grid_m)
            qtc::save_checkpoint(ctx.model(m), o.output + "/checkpoints/m" + std::to_string(m) + ".qtck");

        stage = "evaluation";
        auto emit = [&](const std::string& name, int train_m, int infer_m) {
            report.rows.push_back(ctx.row(name, train_m, infer_m));
            write_token_lines(ctx.translations(train_m, infer_m),
                              o.output + "/translations/" + name + ".txt");
        };
        emit("baseline", 0, 0);
        for (int m : cfg.grid_m) {
            const std::string tag = "m" + std::to_string(m);
            emit(tag + "_neither", 0, 0);
            emit(tag + "_train", m, 0);
            emit(tag + "_infer", 0, m);
            emit(tag + "_both", m, m);
        }
    } catch (const std::exception& e) {
        report.failed_stage = stage + ": " + e.what();
    }

    {
        std::ofstream out = qtc::open_output(o.output + "/report.json");
        out << report.to_json().dump(1, '\t') << "\n";
    }
    {
        std::ofstream out = qtc::open_output(o.output + "/report.txt");
        out << report.to_text();
    }
    if (!report.failed_stage.empty())
        throw qtc::Error(qtc::ExitCode::failure, "experiment failed at " + report.failed_stage);
    std::cout << report.to_text();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"constraint translation candidates: mine, train, translate, retrieve, evaluate"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("qtc ") + qtc::kVersion + "\ncheckpoint-format " +
                                          std::to_string(qtc::kCheckpointVersion));

    auto bpe_learn = std::make_shared<BpeLearnOpts>();
    CLI::App* sub_bpe_learn = app.add_subcommand("bpe-learn", "learn BPE merges from a text file");
    sub_bpe_learn->add_option("--input", bpe_learn->input, "training text, one sentence per line");
    sub_bpe_learn->add_option("--output", bpe_learn->output, "merge table to write");
    sub_bpe_learn->add_option("--merges", bpe_learn->merges, "number of merges to learn");
    sub_bpe_learn->add_option("--lang", bpe_learn->lang, "language tag for tokenization");
    sub_bpe_learn->add_option("--config", bpe_learn->config, "JSON config file");
    sub_bpe_learn->callback([sub_bpe_learn, bpe_learn] { run_bpe_learn(*sub_bpe_learn, *bpe_learn); });

    auto bpe_apply = std::make_shared<BpeApplyOpts>();
    CLI::App* sub_bpe_apply = app.add_subcommand("bpe-apply", "segment text with learned BPE merges");
    sub_bpe_apply->add_option("--input", bpe_apply->input, "text to segment");
    sub_bpe_apply->add_option("--codes", bpe_apply->codes, "merge table from bpe-learn");
    sub_bpe_apply->add_option("--output", bpe_apply->output, "segmented text to write");
    sub_bpe_apply->add_option("--lang", bpe_apply->lang, "language tag for tokenization");
    sub_bpe_apply->add_option("--config", bpe_apply->config, "JSON config file");
    sub_bpe_apply->callback([sub_bpe_apply, bpe_apply] { run_bpe_apply(*sub_bpe_apply, *bpe_apply); });

    auto align = std::make_shared<AlignOpts>();
    CLI::App* sub_align = app.add_subcommand("align", "train IBM Model 1 on parallel text");
    sub_align->add_option("--src", align->src, "source side, one sentence per line");
    sub_align->add_option("--tgt", align->tgt, "target side, one sentence per line");
    sub_align->add_option("--output", align->output, "translation table to write");
    sub_align->add_option("--alignments", align->alignments, "optional Viterbi alignments to write");
    sub_align->add_option("--iterations", align->iterations, "EM iterations");
    sub_align->add_option("--src-lang", align->src_lang, "source language tag");
    sub_align->add_option("--tgt-lang", align->tgt_lang, "target language tag");
    sub_align->add_option("--config", align->config, "JSON config file");
    sub_align->callback([sub_align, align] { run_align(*sub_align, *align); });

    auto mine = std::make_shared<MineOpts>();
    CLI::App* sub_mine = app.add_subcommand("mine", "mine constraint candidates from clicks");
    sub_mine->add_option("--table", mine->table, "translation table from align");
    sub_mine->add_option("--docs", mine->docs, "document collection (JSONL)");
    sub_mine->add_option("--clicks", mine->clicks, "click log (JSONL)");
    sub_mine->add_option("--output", mine->output, "constraint table to write");
    sub_mine->add_option("-m,--top-m", mine->top_m, "candidates kept per source word");
    sub_mine->add_option("--k-max", mine->k_max, "alignment candidates considered per word");
    sub_mine->add_option("--p-min", mine->p_min, "minimum alignment probability");
    sub_mine->add_option("--lang", mine->lang, "language tag for document text");
    sub_mine->add_option("--config", mine->config, "JSON config file");
    sub_mine->callback([sub_mine, mine] { run_mine(*sub_mine, *mine); });

    auto train = std::make_shared<TrainOpts>();
    CLI::App* sub_train = app.add_subcommand("train", "train the translation model");
    sub_train->add_option("--src", train->src, "source side of the parallel text");
    sub_train->add_option("--tgt", train->tgt, "target side of the parallel text");
    sub_train->add_option("--output", train->output, "checkpoint to write");
    sub_train->add_option("--constraints", train->constraints,
                          "constraint table; enables candidate smoothing");
    sub_train->add_option("--src-vocab-out", train->src_vocab_out,
                          "source vocabulary path (default: <output>.src.vocab)");
    sub_train->add_option("--tgt-vocab-out", train->tgt_vocab_out,
                          "target vocabulary path (default: <output>.tgt.vocab)");
    sub_train->add_option("--src-lang", train->src_lang, "source language tag");
    sub_train->add_option("--tgt-lang", train->tgt_lang, "target language tag");
    sub_train->add_option("--steps", train->steps, "optimizer steps");
    sub_train->add_option("--batch-tokens", train->batch_tokens, "token budget per batch");
    sub_train->add_option("--warmup-steps", train->warmup_steps, "learning rate warmup steps");
    sub_train->add_option("--layers", train->n_layers, "encoder/decoder layers");
    sub_train->add_option("--d-model", train->d_model, "model width");
    sub_train->add_option("--heads", train->n_heads, "attention heads");
    sub_train->add_option("--d-ff", train->d_ff, "feed-forward width");
    sub_train->add_option("--max-len", train->max_len, "maximum sequence length");
    sub_train->add_option("--alpha", train->alpha, "weight on the gold token in the smoothed loss");
    sub_train->add_option("--seed", train->seed, "random seed");
    sub_train->add_option("--vocab-limit", train->vocab_limit, "maximum vocabulary size");
    sub_train->add_option("--config", train->config, "JSON config file");
    sub_train->callback([sub_train, train] { run_train(*sub_train, *train); });

    auto translate = std::make_shared<TranslateOpts>();
    CLI::App* sub_translate = app.add_subcommand("translate", "translate queries with beam search");
    sub_translate->add_option("--checkpoint", translate->checkpoint, "model checkpoint");
    sub_translate->add_option("--src-vocab", translate->src_vocab, "source vocabulary");
    sub_translate->add_option("--tgt-vocab", translate->tgt_vocab, "target vocabulary");
    sub_translate->add_option("--input", translate->input, "queries, one per line");
    sub_translate->add_option("--output", translate->output, "translations to write");
    sub_translate->add_option("--constraints", translate->constraints,
                              "constraint table; enables constrained decoding");
    sub_translate->add_flag("--no-constraint", translate->no_constraint,
                            "decode over the full vocabulary even if --constraints is given");
    sub_translate->add_option("--lang", translate->lang, "language tag for query tokenization");
    sub_translate->add_option("--beam", translate->beam_size, "beam size");
    sub_translate->add_option("--max-len", translate->max_len, "maximum output length");
    sub_translate->add_option("--config", translate->config, "JSON config file");
    sub_translate->callback([sub_translate, translate] { run_translate(*sub_translate, *translate); });

    auto index = std::make_shared<IndexOpts>();
    CLI::App* sub_index = app.add_subcommand("index", "build a BM25 inverted index");
    sub_index->add_option("--docs", index->docs, "document collection (JSONL)");
    sub_index->add_option("--output", index->output, "index file to write");
    sub_index->add_option("--format", index->format, "index file format: json or binary");
    sub_index->add_option("--k1", index->k1, "BM25 k1");
    sub_index->add_option("--b", index->b, "BM25 b");
    sub_index->add_option("--lang", index->lang, "language tag for document text");
    sub_index->add_option("--config", index->config, "JSON config file");
    sub_index->callback([sub_index, index] { run_index(*sub_index, *index); });

    auto retrieve = std::make_shared<RetrieveOpts>();
    CLI::App* sub_retrieve = app.add_subcommand("retrieve", "search an index");
    sub_retrieve->add_option("--index", retrieve->index, "index file from 'index'");
    sub_retrieve->add_option("--query", retrieve->query, "single query; results go to stdout");
    sub_retrieve->add_option("--queries", retrieve->queries, "query file, one per line");
    sub_retrieve->add_option("--output", retrieve->output, "results TSV (batch mode)");
    sub_retrieve->add_option("-k,--k", retrieve->k, "results per query");
    sub_retrieve->add_option("--lang", retrieve->lang, "language tag for query tokenization");
    sub_retrieve->add_option("--config", retrieve->config, "JSON config file");
    sub_retrieve->callback([sub_retrieve, retrieve] { run_retrieve(*sub_retrieve, *retrieve); });

    auto eval_bleu = std::make_shared<EvalBleuOpts>();
    CLI::App* sub_eval_bleu = app.add_subcommand("eval-bleu", "corpus BLEU of a hypothesis file");
    sub_eval_bleu->add_option("--hyp", eval_bleu->hyp, "hypotheses, one per line, pre-tokenized");
    sub_eval_bleu->add_option("--ref", eval_bleu->ref, "references, one per line, pre-tokenized");
    sub_eval_bleu->add_option("--config", eval_bleu->config, "JSON config file");
    sub_eval_bleu->callback([sub_eval_bleu, eval_bleu] { run_eval_bleu(*sub_eval_bleu, *eval_bleu); });

    auto eval_retrieval = std::make_shared<EvalRetrievalOpts>();
    CLI::App* sub_eval_retrieval =
        app.add_subcommand("eval-retrieval", "recall/MAP/NDCG of a results file");
    sub_eval_retrieval->add_option("--results", eval_retrieval->results,
                                   "results TSV: qid<TAB>rank<TAB>doc_id<TAB>score");
    sub_eval_retrieval->add_option("--qrels", eval_retrieval->qrels,
                                   "judgments TSV: qid<TAB>doc_id<TAB>grade");
    sub_eval_retrieval->add_option("--recall-k", eval_retrieval->recall_k, "cutoff for recall");
    sub_eval_retrieval->add_option("--config", eval_retrieval->config, "JSON config file");
    sub_eval_retrieval->callback(
        [sub_eval_retrieval, eval_retrieval] { run_eval_retrieval(*sub_eval_retrieval, *eval_retrieval); });

    auto gen_synth = std::make_shared<GenSyntheticOpts>();
    CLI::App* sub_gen = app.add_subcommand("gen-synthetic", "generate a synthetic evaluation world");
    sub_gen->add_option("--output", gen_synth->output, "directory to write the world into");
    sub_gen->add_option("--seed", gen_synth->seed, "random seed");
    sub_gen->add_option("--config", gen_synth->config, "JSON config file (experiment schema)");
    sub_gen->callback([sub_gen, gen_synth] { run_gen_synthetic(*sub_gen, *gen_synth); });

    auto experiment = std::make_shared<ExperimentOpts>();
    CLI::App* sub_exp = app.add_subcommand("experiment", "run the full constraint-size ablation");
    sub_exp->add_option("--output", experiment->output, "directory for artifacts and reports");
    sub_exp->add_option("--seed", experiment->seed, "random seed");
    sub_exp->add_option("--steps", experiment->steps, "optimizer steps (overrides config)");
    sub_exp->add_option("--config", experiment->config, "JSON config file");
    sub_exp->callback([sub_exp, experiment] { run_experiment_cmd(*sub_exp, *experiment); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return static_cast<int>(qtc::ExitCode::usage);
    } catch (const qtc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(qtc::ExitCode::failure);
    }
    return static_cast<int>(qtc::ExitCode::ok);
}
