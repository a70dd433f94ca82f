#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtc/align.hpp"
#include "qtc/common.hpp"
#include "qtc/io.hpp"
#include "qtc/text.hpp"
#include "qtc/vocab.hpp"

namespace qtc {

struct Document {
    std::string id;
    TokenSequence text;
};

class DocumentCollection {
public:
    void add(Document doc) {
        auto [it, inserted] = by_id_.emplace(doc.id, docs_.size());
        if (!inserted) throw SchemaError("duplicate document id: " + doc.id);
        docs_.push_back(std::move(doc));
    }

    bool contains(const std::string& id) const { return by_id_.count(id) != 0; }

    size_t index_of(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw SchemaError("unknown document id: " + id);
        return it->second;
    }

    const Document& at(size_t index) const { return docs_.at(index); }
    size_t size() const { return docs_.size(); }
    const std::vector<Document>& docs() const { return docs_; }

private:
    std::vector<Document> docs_;
    std::map<std::string, size_t> by_id_;
};

// JSONL, one document per line: {"id": "...", "text": "..."}.
inline DocumentCollection load_documents(const std::string& path, const std::string& lang) {
    DocumentCollection collection;
    size_t lineno = 0;
    for (const std::string& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_string() ||
            !j["text"].is_string())
            throw SchemaError(path + ":" + std::to_string(lineno) +
                              ": expected {\"id\": string, \"text\": string}");
        Document doc;
        doc.id = j["id"].get<std::string>();
        doc.text = tokenize(j["text"].get<std::string>(), lang);
        collection.add(std::move(doc));
    }
    return collection;
}

struct ClickRecord {
    std::string qid;
    TokenSequence query;
    std::vector<std::string> clicked;  // document ids, de-duplicated, input order
};

using ClickLog = std::vector<ClickRecord>;

// JSONL, one record per line: {"qid": "...", "query": "...", "clicked": ["d1", ...]}.
// Every clicked id must exist in the collection.
inline ClickLog load_click_log(const std::string& path, const DocumentCollection& collection,
                               const std::string& lang) {
    ClickLog log;
    size_t lineno = 0;
    for (const std::string& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("qid") || !j.contains("query") || !j.contains("clicked") ||
            !j["qid"].is_string() || !j["query"].is_string() || !j["clicked"].is_array())
            throw SchemaError(path + ":" + std::to_string(lineno) +
                              ": expected {\"qid\": string, \"query\": string, \"clicked\": [string]}");
        ClickRecord rec;
        rec.qid = j["qid"].get<std::string>();
        rec.query = tokenize(j["query"].get<std::string>(), lang);
        std::set<std::string> seen;
        for (const auto& d : j["clicked"]) {
            if (!d.is_string())
                throw SchemaError(path + ":" + std::to_string(lineno) + ": clicked ids must be strings");
            const std::string id = d.get<std::string>();
            if (!collection.contains(id))
                throw SchemaError(path + ":" + std::to_string(lineno) + ": unknown clicked document id: " + id);
            if (seen.insert(id).second) rec.clicked.push_back(id);
        }
        log.push_back(std::move(rec));
    }
    return log;
}

// Union of documents clicked by queries containing each query word.
inline std::map<std::string, std::set<size_t>> clicked_docs_by_word(const ClickLog& log,
                                                                    const DocumentCollection& collection) {
    std::map<std::string, std::set<size_t>> by_word;
    for (const ClickRecord& rec : log) {
        if (rec.clicked.empty()) continue;
        std::set<std::string> words(rec.query.tokens.begin(), rec.query.tokens.end());
        for (const std::string& w : words) {
            std::set<size_t>& docs = by_word[w];
            for (const std::string& id : rec.clicked) docs.insert(collection.index_of(id));
        }
    }
    return by_word;
}

struct TfidfResult {
    // Candidates re-ranked by score descending; entries with zero clicked-set
    // term frequency score -inf and keep their alignment order at the tail.
    std::vector<std::pair<std::string, double>> ranked;
    double g_y = 0.0;            // |clicked document set|
    std::vector<double> n;       // clicked-set term frequency per input candidate
    std::vector<double> g;       // clicked-set document frequency per input candidate
    bool all_zero = false;       // no candidate occurs in any clicked document
};

// Clickthrough-conditioned TF-IDF over a candidate set:
//   TF_k  = N_k / sum_m N_m            (normalized over the candidates alone)
//   IDF_k = ln(G_Y / (G_k + 1))
// where N_k counts occurrences of candidate k across the clicked documents,
// G_k counts clicked documents containing k, and G_Y = |clicked documents|.
// When every N_k is zero the alignment order is kept with zero scores and
// all_zero is set.
inline TfidfResult score_tfidf(const CandidateSet& candidates, const std::set<size_t>& clicked,
                               const DocumentCollection& collection) {
    TfidfResult result;
    result.g_y = static_cast<double>(clicked.size());
    const size_t k = candidates.candidates.size();
    result.n.assign(k, 0.0);
    result.g.assign(k, 0.0);

    std::map<std::string, size_t> cand_index;
    for (size_t i = 0; i < k; ++i) cand_index[candidates.candidates[i].first] = i;

    for (size_t doc_idx : clicked) {
        const Document& doc = collection.at(doc_idx);
        std::set<size_t> present;
        for (const std::string& tok : doc.text.tokens) {
            auto it = cand_index.find(tok);
            if (it == cand_index.end()) continue;
            result.n[it->second] += 1.0;
            present.insert(it->second);
        }
        for (size_t i : present) result.g[i] += 1.0;
    }

    double n_total = 0.0;
    for (double v : result.n) n_total += v;

    if (n_total == 0.0) {
        result.all_zero = true;
        for (const auto& [word, prob] : candidates.candidates) result.ranked.emplace_back(word, 0.0);
        return result;
    }

    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        double score;
        if (result.n[i] == 0.0) {
            score = -std::numeric_limits<double>::infinity();
        } else {
            const double tf = result.n[i] / n_total;
            const double idf = std::log(result.g_y / (result.g[i] + 1.0));
            score = tf * idf;
        }
        scored.emplace_back(candidates.candidates[i].first, score);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    result.ranked = std::move(scored);
    return result;
}

struct ConstraintEntry {
    std::string target;
    double score = 0.0;
};

struct ConstraintTable {
    // source word -> top-M targets, best first
    std::map<std::string, std::vector<ConstraintEntry>> rows;
    // diagnostic flags, not serialized
    std::set<std::string> no_click_words;  // no clicked documents: alignment order kept
    std::set<std::string> all_zero_words;  // clicked documents exist, no candidate occurs in them
};

// For every source word in the translation table: extract alignment
// candidates, re-rank them by clickthrough TF-IDF, keep the top top_m.
// Source words with no clicked documents keep alignment order (flagged).
inline ConstraintTable build_constraint_table(const TranslationTable& table, const ClickLog& log,
                                              const DocumentCollection& collection, size_t top_m,
                                              size_t k_max, double p_min) {
    if (top_m < 1) throw SchemaError("build_constraint_table: top_m must be >= 1");
    const std::map<std::string, std::set<size_t>> by_word = clicked_docs_by_word(log, collection);
    static const std::set<size_t> no_docs;

    ConstraintTable out;
    for (const auto& [source, row] : table.t) {
        if (source == kNullToken) continue;
        const CandidateSet cands = extract_candidates(table, source, k_max, p_min);
        if (cands.empty()) continue;

        auto docs_it = by_word.find(source);
        const std::set<size_t>& clicked = docs_it == by_word.end() ? no_docs : docs_it->second;

        std::vector<ConstraintEntry> entries;
        if (clicked.empty()) {
            out.no_click_words.insert(source);
            for (const auto& [word, prob] : cands.candidates) entries.push_back({word, prob});
        } else {
            const TfidfResult tfidf = score_tfidf(cands, clicked, collection);
            if (tfidf.all_zero) out.all_zero_words.insert(source);
            for (const auto& [word, score] : tfidf.ranked) entries.push_back({word, score});
        }
        if (entries.size() > top_m) entries.resize(top_m);
        out.rows[source] = std::move(entries);
    }
    return out;
}

// TSV: source <TAB> rank <TAB> target <TAB> score, rank 1-based per source.
inline void save_constraint_table(const ConstraintTable& table, const std::string& path) {
    std::ofstream out = open_output(path);
    for (const auto& [source, entries] : table.rows) {
        for (size_t r = 0; r < entries.size(); ++r)
            out << source << '\t' << (r + 1) << '\t' << entries[r].target << '\t'
                << format_double(entries[r].score, 9) << '\n';
    }
}

inline ConstraintTable load_constraint_table(const std::string& path) {
    ConstraintTable table;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) continue;
        const std::vector<std::string> parts = split(line, '\t');
        if (parts.size() != 4)
            throw SchemaError("constraint table line is not 'source<TAB>rank<TAB>target<TAB>score': " + line);
        const int64_t rank = parse_int(parts[1], "constraint rank");
        std::vector<ConstraintEntry>& entries = table.rows[parts[0]];
        if (rank != static_cast<int64_t>(entries.size()) + 1)
            throw SchemaError("constraint ranks for '" + parts[0] + "' are not dense ascending from 1");
        entries.push_back({parts[2], parse_double(parts[3], "constraint score")});
    }
    return table;
}

// Allowed target-vocabulary ids for one query. EOS is always allowed. When no
// query word has a constraint row the mask falls back to the full vocabulary.
struct ConstraintMask {
    std::vector<int> ids;         // sorted ascending, unique
    std::vector<uint8_t> bitmap;  // one flag per vocabulary id
    bool fallback_full = false;

    bool allows(int id) const {
        return id >= 0 && static_cast<size_t>(id) < bitmap.size() && bitmap[static_cast<size_t>(id)] != 0;
    }
};

inline ConstraintMask query_constraint_mask(const ConstraintTable& table,
                                            const std::vector<std::string>& query_tokens,
                                            const Vocabulary& tgt_vocab, bool include_unk = false) {
    ConstraintMask mask;
    mask.bitmap.assign(tgt_vocab.size(), 0);

    std::set<int> ids;
    bool any_row = false;
    for (const std::string& word : query_tokens) {
        auto it = table.rows.find(word);
        if (it == table.rows.end()) continue;
        any_row = true;
        for (const ConstraintEntry& entry : it->second) {
            const int id = tgt_vocab.id_of(entry.target);
            if (id == Vocabulary::kUnk && !include_unk) continue;
            ids.insert(id);
        }
    }

    if (!any_row || ids.empty()) {
        mask.fallback_full = true;
        for (size_t i = 0; i < tgt_vocab.size(); ++i) {
            mask.ids.push_back(static_cast<int>(i));
            mask.bitmap[i] = 1;
        }
        return mask;
    }

    ids.insert(Vocabulary::kEos);
    if (include_unk) ids.insert(Vocabulary::kUnk);
    for (int id : ids) {
        mask.ids.push_back(id);
        mask.bitmap[static_cast<size_t>(id)] = 1;
    }
    return mask;
}

}  // namespace qtc
