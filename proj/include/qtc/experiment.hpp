#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtc/align.hpp"
#include "qtc/metrics.hpp"
#include "qtc/mine.hpp"
#include "qtc/nmt/beam.hpp"
#include "qtc/nmt/checkpoint.hpp"
#include "qtc/nmt/train.hpp"
#include "qtc/retrieval.hpp"
#include "qtc/synthetic.hpp"
#include "qtc/vocab.hpp"

namespace qtc {

struct ExperimentConfig {
    WorldConfig world;
    uint64_t seed = 1;

    // alignment and candidate mining
    int em_iterations = 10;
    size_t k_max = 50;
    double p_min = 0.01;
    std::vector<int> grid_m = {5, 10, 20};
    int default_m = 10;  // the "+TC" system reported in the main tables

    // model
    ModelDims dims{.n_layers = 2, .d_model = 32, .n_heads = 2, .d_ff = 64, .max_len = 16};

    // training
    int steps = 5000;
    int batch_tokens = 256;
    int warmup_steps = 200;
    double alpha = 0.8;

    // decoding
    int beam_size = 4;
    int decode_max_len = 12;

    // retrieval
    Bm25Config bm25;
    size_t recall_k = 10;
    size_t retrieve_depth = 50;
    size_t vocab_limit = 10000;

    void validate() const {
        world.validate();
        if (em_iterations < 1) throw SchemaError("experiment config: em_iterations must be >= 1");
        if (k_max < 1 || p_min < 0.0 || p_min >= 1.0)
            throw SchemaError("experiment config: candidate extraction parameters out of range");
        if (grid_m.empty()) throw SchemaError("experiment config: grid_m must not be empty");
        for (int m : grid_m)
            if (m < 1) throw SchemaError("experiment config: constraint sizes must be >= 1");
        if (std::find(grid_m.begin(), grid_m.end(), default_m) == grid_m.end())
            throw SchemaError("experiment config: default_m must be one of grid_m");
        if (steps < 1 || batch_tokens < 1 || warmup_steps < 1)
            throw SchemaError("experiment config: training parameters must be positive");
        if (alpha < 0.0 || alpha > 1.0) throw SchemaError("experiment config: alpha must be in [0,1]");
        if (beam_size < 1) throw SchemaError("experiment config: beam_size must be >= 1");
        if (decode_max_len < 1 || decode_max_len >= dims.max_len)
            throw SchemaError("experiment config: decode_max_len must fit under the model max_len");
        if (recall_k < 1 || retrieve_depth < recall_k)
            throw SchemaError("experiment config: retrieve_depth must cover recall_k");
        if (vocab_limit < 8) throw SchemaError("experiment config: vocab_limit too small");
    }
};

struct ExperimentRow {
    std::string name;
    int train_m = 0;  // 0 = unconstrained
    int infer_m = 0;
    double bleu = 0.0;
    double recall = 0.0;  // percentage at recall_k
    double map = 0.0;
    double ndcg10 = 0.0;
    size_t skipped_queries = 0;
};

struct ExperimentReport {
    uint64_t seed = 0;
    std::vector<int> grid_m;
    int default_m = 10;
    size_t recall_k = 10;
    double audit_coverage = 0.0;
    std::vector<ExperimentRow> rows;
    std::string failed_stage;  // empty when the run completed

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["grid_m"] = grid_m;
        j["default_m"] = default_m;
        j["recall_k"] = recall_k;
        j["audit_coverage"] = audit_coverage;
        j["failed_stage"] = failed_stage.empty() ? nlohmann::json() : nlohmann::json(failed_stage);
        j["rows"] = nlohmann::json::array();
        for (const ExperimentRow& row : rows) {
            nlohmann::json r;
            r["system"] = row.name;
            r["train_m"] = row.train_m;
            r["infer_m"] = row.infer_m;
            r["bleu"] = row.bleu;
            r["recall"] = row.recall;
            r["map"] = row.map;
            r["ndcg10"] = row.ndcg10;
            r["skipped_queries"] = row.skipped_queries;
            j["rows"].push_back(std::move(r));
        }
        return j;
    }

    std::string to_text() const {
        auto m_label = [](int m) { return m == 0 ? std::string("full") : std::to_string(m); };
        char buf[256];
        std::string out;

        out += "Constraint size ablation\n";
        out += "system          training  inference     bleu  recall@" + std::to_string(recall_k) +
               "      map  ndcg@10\n";
        for (const ExperimentRow& row : rows) {
            std::snprintf(buf, sizeof(buf), "%-15s %9s %10s %8.2f %9.2f %8.4f %8.4f\n", row.name.c_str(),
                          m_label(row.train_m).c_str(), m_label(row.infer_m).c_str(), row.bleu, row.recall,
                          row.map, row.ndcg10);
            out += buf;
        }

        const ExperimentRow* baseline = nullptr;
        const ExperimentRow* best_tc = nullptr;
        for (const ExperimentRow& row : rows) {
            if (row.name == "baseline") baseline = &row;
            if (row.train_m == default_m && row.infer_m == default_m) best_tc = &row;
        }
        if (baseline && best_tc) {
            out += "\nMain results\n";
            out += "system                          bleu\n";
            std::snprintf(buf, sizeof(buf), "%-28s %8.2f\n", "transformer", baseline->bleu);
            out += buf;
            std::snprintf(buf, sizeof(buf), "%-28s %8.2f\n",
                          ("transformer+tc (" + best_tc->name + ")").c_str(), best_tc->bleu);
            out += buf;

            out += "\nRetrieval\n";
            out += "metric          transformer  transformer+tc\n";
            std::snprintf(buf, sizeof(buf), "%-15s %11.2f %15.2f\n",
                          ("recall@" + std::to_string(recall_k)).c_str(), baseline->recall,
                          best_tc->recall);
            out += buf;
            std::snprintf(buf, sizeof(buf), "%-15s %11.4f %15.4f\n", "map", baseline->map, best_tc->map);
            out += buf;
            std::snprintf(buf, sizeof(buf), "%-15s %11.4f %15.4f\n", "ndcg@10", baseline->ndcg10,
                          best_tc->ndcg10);
            out += buf;
        }
        if (!failed_stage.empty()) out += "\nFAILED at stage: " + failed_stage + "\n";
        return out;
    }
};

// Lazily computes and caches each pipeline stage, so rows that share a
// trained model or a translation pass reuse it.
class ExperimentContext {
public:
    explicit ExperimentContext(ExperimentConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const ExperimentConfig& config() const { return cfg_; }

    const SyntheticWorld& world() {
        if (!world_) world_ = std::make_unique<SyntheticWorld>(gen_synthetic(cfg_.world, cfg_.seed));
        return *world_;
    }

    const TranslationTable& ttable() {
        if (!ttable_)
            ttable_ = std::make_unique<TranslationTable>(train_ibm1(world().bitext, cfg_.em_iterations));
        return *ttable_;
    }

    const ConstraintTable& constraints(int m) {
        auto it = constraints_.find(m);
        if (it == constraints_.end()) {
            ConstraintTable table = build_constraint_table(ttable(), world().clicks, world().docs,
                                                           static_cast<size_t>(m), cfg_.k_max, cfg_.p_min);
            it = constraints_.emplace(m, std::move(table)).first;
        }
        return it->second;
    }

    const Vocabulary& src_vocab() {
        build_vocabs();
        return *src_vocab_;
    }
    const Vocabulary& tgt_vocab() {
        build_vocabs();
        return *tgt_vocab_;
    }

    // train_m = 0: cross entropy baseline; otherwise candidate smoothing with
    // the m-sized constraint table. Same seed, dims, and schedule throughout.
    const TransformerParams& model(int train_m) {
        auto it = models_.find(train_m);
        if (it == models_.end()) {
            ModelDims dims = cfg_.dims;
            dims.src_vocab = static_cast<int>(src_vocab().size());
            dims.tgt_vocab = static_cast<int>(tgt_vocab().size());

            TrainConfig tc;
            tc.steps = cfg_.steps;
            tc.batch_tokens = cfg_.batch_tokens;
            tc.warmup_steps = cfg_.warmup_steps;
            tc.alpha = cfg_.alpha;
            tc.smoothing = train_m > 0;
            tc.seed = cfg_.seed;

            const ConstraintTable* table = train_m > 0 ? &constraints(train_m) : nullptr;
            const TrainData data =
                prepare_train_data(world().bitext, src_vocab(), tgt_vocab(), table, cfg_.dims.max_len);
            TransformerParams params = train_model(dims, data, tc);
            it = models_.emplace(train_m, std::move(params)).first;
        }
        return it->second;
    }

    // Hypothesis token lists for every test query, in query order.
    const std::vector<std::vector<std::string>>& translations(int train_m, int infer_m) {
        const std::pair<int, int> key{train_m, infer_m};
        auto it = translations_.find(key);
        if (it == translations_.end()) {
            const TransformerParams& params = model(train_m);
            BeamConfig bc;
            bc.beam_size = cfg_.beam_size;
            bc.max_len = cfg_.decode_max_len;
            bc.mode = infer_m > 0 ? DecodeMode::constrained : DecodeMode::plain;

            std::vector<std::vector<std::string>> hyps;
            hyps.reserve(world().queries.size());
            for (const TestQuery& query : world().queries) {
                ConstraintMask mask;
                const ConstraintMask* mask_ptr = nullptr;
                if (infer_m > 0) {
                    mask = query_constraint_mask(constraints(infer_m), query.source.tokens, tgt_vocab());
                    mask_ptr = &mask;
                }
                hyps.push_back(translate(params, src_vocab(), tgt_vocab(), query.source.tokens, mask_ptr, bc));
            }
            it = translations_.emplace(key, std::move(hyps)).first;
        }
        return it->second;
    }

    const InvertedIndex& index() {
        if (!index_) index_ = std::make_unique<InvertedIndex>(world().docs, cfg_.bm25);
        return *index_;
    }

    ExperimentRow row(const std::string& name, int train_m, int infer_m) {
        ExperimentRow r;
        r.name = name;
        r.train_m = train_m;
        r.infer_m = infer_m;

        const std::vector<std::vector<std::string>>& hyps = translations(train_m, infer_m);
        std::vector<std::vector<std::string>> refs;
        refs.reserve(world().queries.size());
        for (const TestQuery& query : world().queries) refs.push_back(query.reference.tokens);
        r.bleu = bleu(hyps, refs);

        RankedResults results;
        for (size_t i = 0; i < world().queries.size(); ++i) {
            std::vector<std::string>& ranking = results[world().queries[i].qid];
            for (const SearchHit& hit : index().search(hyps[i], cfg_.retrieve_depth))
                ranking.push_back(hit.doc_id);
        }
        const RetrievalEval eval = evaluate_retrieval(results, world().judgments, cfg_.recall_k);
        r.recall = eval.recall;
        r.map = eval.map;
        r.ndcg10 = eval.ndcg10;
        r.skipped_queries = eval.skipped;
        return r;
    }

private:
    void build_vocabs() {
        if (src_vocab_) return;
        std::vector<TokenSequence> src_corpus, tgt_corpus;
        for (const auto& [s, t] : world().bitext) {
            src_corpus.push_back(s);
            tgt_corpus.push_back(t);
        }
        src_vocab_ = std::make_unique<Vocabulary>(build_vocab(src_corpus, cfg_.vocab_limit));
        tgt_vocab_ = std::make_unique<Vocabulary>(build_vocab(tgt_corpus, cfg_.vocab_limit));
    }

    ExperimentConfig cfg_;
    std::unique_ptr<SyntheticWorld> world_;
    std::unique_ptr<TranslationTable> ttable_;
    std::map<int, ConstraintTable> constraints_;
    std::unique_ptr<Vocabulary> src_vocab_, tgt_vocab_;
    std::map<int, TransformerParams> models_;
    std::map<std::pair<int, int>, std::vector<std::vector<std::string>>> translations_;
    std::unique_ptr<InvertedIndex> index_;
};

// The full Table-1-shaped grid: one baseline row, then for every constraint
// size M the four placements {neither, train-only, infer-only, both}. A stage
// failure stops the grid and marks the report instead of throwing.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    ExperimentReport report;
    report.seed = cfg.seed;
    report.grid_m = cfg.grid_m;
    report.default_m = cfg.default_m;
    report.recall_k = cfg.recall_k;

    ExperimentContext ctx(cfg);
    std::string stage = "world generation";
    try {
        report.audit_coverage = audit_search_sense_coverage(ctx.world());

        stage = "baseline row";
        report.rows.push_back(ctx.row("baseline", 0, 0));
        for (int m : cfg.grid_m) {
            const std::string tag = "m" + std::to_string(m);
            stage = tag + " rows";
            report.rows.push_back(ctx.row(tag + "_neither", 0, 0));
            report.rows.push_back(ctx.row(tag + "_train", m, 0));
            report.rows.push_back(ctx.row(tag + "_infer", 0, m));
            report.rows.push_back(ctx.row(tag + "_both", m, m));
        }
    } catch (const std::exception& e) {
        report.failed_stage = stage + ": " + e.what();
    }
    return report;
}

// ---- Config file form ------------------------------------------------------

inline ExperimentConfig load_experiment_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (!j.is_object()) throw SchemaError("experiment config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") cfg.seed = value.get<uint64_t>();
        else if (key == "em_iterations") cfg.em_iterations = value.get<int>();
        else if (key == "k_max") cfg.k_max = value.get<size_t>();
        else if (key == "p_min") cfg.p_min = value.get<double>();
        else if (key == "grid_m") cfg.grid_m = value.get<std::vector<int>>();
        else if (key == "default_m") cfg.default_m = value.get<int>();
        else if (key == "n_layers") cfg.dims.n_layers = value.get<int>();
        else if (key == "d_model") cfg.dims.d_model = value.get<int>();
        else if (key == "n_heads") cfg.dims.n_heads = value.get<int>();
        else if (key == "d_ff") cfg.dims.d_ff = value.get<int>();
        else if (key == "max_len") cfg.dims.max_len = value.get<int>();
        else if (key == "steps") cfg.steps = value.get<int>();
        else if (key == "batch_tokens") cfg.batch_tokens = value.get<int>();
        else if (key == "warmup_steps") cfg.warmup_steps = value.get<int>();
        else if (key == "alpha") cfg.alpha = value.get<double>();
        else if (key == "beam_size") cfg.beam_size = value.get<int>();
        else if (key == "decode_max_len") cfg.decode_max_len = value.get<int>();
        else if (key == "bm25_k1") cfg.bm25.k1 = value.get<double>();
        else if (key == "bm25_b") cfg.bm25.b = value.get<double>();
        else if (key == "recall_k") cfg.recall_k = value.get<size_t>();
        else if (key == "retrieve_depth") cfg.retrieve_depth = value.get<size_t>();
        else if (key == "vocab_limit") cfg.vocab_limit = value.get<size_t>();
        else if (key == "world") {
            if (!value.is_object()) throw SchemaError("experiment config: world must be an object");
            for (const auto& [wkey, wval] : value.items()) {
                if (wkey == "n_topics") cfg.world.n_topics = wval.get<int>();
                else if (wkey == "docs_per_topic") cfg.world.docs_per_topic = wval.get<int>();
                else if (wkey == "words_per_topic") cfg.world.words_per_topic = wval.get<int>();
                else if (wkey == "polysemy_fraction") cfg.world.polysemy_fraction = wval.get<double>();
                else if (wkey == "n_synonyms") cfg.world.n_synonyms = wval.get<int>();
                else if (wkey == "n_saturated") cfg.world.n_saturated = wval.get<int>();
                else if (wkey == "n_generics") cfg.world.n_generics = wval.get<int>();
                else if (wkey == "bitext_pairs") cfg.world.bitext_pairs = wval.get<int>();
                else if (wkey == "test_queries") cfg.world.test_queries = wval.get<int>();
                else if (wkey == "extra_click_queries") cfg.world.extra_click_queries = wval.get<int>();
                else if (wkey == "p_general") cfg.world.p_general = wval.get<double>();
                else if (wkey == "p_primary") cfg.world.p_primary = wval.get<double>();
                else if (wkey == "primary_doc_rate") cfg.world.primary_doc_rate = wval.get<double>();
                else if (wkey == "mid_doc_rate") cfg.world.mid_doc_rate = wval.get<double>();
                else if (wkey == "direct_doc_rate") cfg.world.direct_doc_rate = wval.get<double>();
                else if (wkey == "generics_per_doc_min") cfg.world.generics_per_doc_min = wval.get<int>();
                else if (wkey == "generics_per_doc_max") cfg.world.generics_per_doc_max = wval.get<int>();
                else throw SchemaError("experiment config: unknown world key '" + wkey + "'");
            }
        } else {
            throw SchemaError("experiment config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace qtc
