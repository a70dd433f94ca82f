#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/io.hpp"

namespace qtc {

// Corpus-level BLEU-4 in [0, 100]: geometric mean of clipped n-gram
// precisions (n = 1..4) times the brevity penalty. Zero numerators for n >= 2
// take add-one smoothing, (clipped+1)/(total+1); a hypothesis side too short
// to form any n-gram contributes (0+1)/(0+1) for that order. A zero unigram
// numerator yields 0.
inline double bleu(const std::vector<std::vector<std::string>>& hypotheses,
                   const std::vector<std::vector<std::string>>& references) {
    if (hypotheses.empty()) throw SchemaError("bleu: empty corpus");
    if (hypotheses.size() != references.size())
        throw SchemaError("bleu: hypothesis and reference counts differ");

    auto ngram_counts = [](const std::vector<std::string>& toks, size_t n) {
        std::map<std::string, size_t> counts;
        if (toks.size() < n) return counts;
        for (size_t i = 0; i + n <= toks.size(); ++i) {
            std::string key = toks[i];
            for (size_t j = 1; j < n; ++j) {
                key += '\x1f';
                key += toks[i + j];
            }
            counts[key] += 1;
        }
        return counts;
    };

    double hyp_len = 0.0, ref_len = 0.0;
    size_t clipped[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
    for (size_t s = 0; s < hypotheses.size(); ++s) {
        hyp_len += static_cast<double>(hypotheses[s].size());
        ref_len += static_cast<double>(references[s].size());
        for (size_t n = 1; n <= 4; ++n) {
            const std::map<std::string, size_t> hyp_counts = ngram_counts(hypotheses[s], n);
            const std::map<std::string, size_t> ref_counts = ngram_counts(references[s], n);
            for (const auto& [gram, count] : hyp_counts) {
                total[n - 1] += count;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) clipped[n - 1] += std::min(count, it->second);
            }
        }
    }

    if (hyp_len == 0.0 || clipped[0] == 0) return 0.0;
    double log_precision_sum = 0.0;
    for (size_t n = 0; n < 4; ++n) {
        double num = static_cast<double>(clipped[n]);
        double den = static_cast<double>(total[n]);
        if (n >= 1 && clipped[n] == 0) {
            num += 1.0;
            den += 1.0;
        }
        log_precision_sum += std::log(num / den);
    }
    const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return 100.0 * bp * std::exp(log_precision_sum / 4.0);
}

// query id -> ranked doc ids, best first
using RankedResults = std::map<std::string, std::vector<std::string>>;
// query id -> doc id -> relevance grade (> 0 means relevant)
using Judgments = std::map<std::string, std::map<std::string, double>>;

namespace detail {

inline const std::map<std::string, double>& grades_for(const Judgments& judgments, const std::string& qid) {
    auto it = judgments.find(qid);
    if (it == judgments.end()) throw SchemaError("no relevance judgments for query " + qid);
    return it->second;
}

inline size_t relevant_count(const std::map<std::string, double>& grades) {
    size_t n = 0;
    for (const auto& [doc, g] : grades)
        if (g > 0.0) ++n;
    return n;
}

}  // namespace detail

// |relevant in top-k| / |relevant|, macro-averaged over queries with at least
// one relevant document, as a percentage.
inline double recall_at_k(const RankedResults& results, const Judgments& judgments, size_t k,
                          size_t* skipped = nullptr) {
    if (k < 1) throw SchemaError("recall_at_k: k must be >= 1");
    double sum = 0.0;
    size_t used = 0, zero_rel = 0;
    for (const auto& [qid, ranking] : results) {
        const std::map<std::string, double>& grades = detail::grades_for(judgments, qid);
        const size_t relevant = detail::relevant_count(grades);
        if (relevant == 0) {
            ++zero_rel;
            continue;
        }
        size_t found = 0;
        for (size_t r = 0; r < ranking.size() && r < k; ++r) {
            auto it = grades.find(ranking[r]);
            if (it != grades.end() && it->second > 0.0) ++found;
        }
        sum += static_cast<double>(found) / static_cast<double>(relevant);
        ++used;
    }
    if (skipped) *skipped = zero_rel;
    if (used == 0) throw SchemaError("recall_at_k: no query has relevant documents");
    return 100.0 * sum / static_cast<double>(used);
}

// Mean over queries of average precision: sum of precision at each relevant
// rank, divided by the total number of relevant documents.
inline double mean_average_precision(const RankedResults& results, const Judgments& judgments,
                                     size_t* skipped = nullptr) {
    double sum = 0.0;
    size_t used = 0, zero_rel = 0;
    for (const auto& [qid, ranking] : results) {
        const std::map<std::string, double>& grades = detail::grades_for(judgments, qid);
        const size_t relevant = detail::relevant_count(grades);
        if (relevant == 0) {
            ++zero_rel;
            continue;
        }
        double ap = 0.0;
        size_t found = 0;
        for (size_t r = 0; r < ranking.size(); ++r) {
            auto it = grades.find(ranking[r]);
            if (it == grades.end() || it->second <= 0.0) continue;
            ++found;
            ap += static_cast<double>(found) / static_cast<double>(r + 1);
        }
        sum += ap / static_cast<double>(relevant);
        ++used;
    }
    if (skipped) *skipped = zero_rel;
    if (used == 0) throw SchemaError("mean_average_precision: no query has relevant documents");
    return sum / static_cast<double>(used);
}

// NDCG at cutoff 10 with gain 2^grade - 1 and discount log2(rank + 1),
// normalized by the ideal ordering of the judged grades.
inline double ndcg_at_10(const RankedResults& results, const Judgments& judgments,
                         size_t* skipped = nullptr) {
    constexpr size_t kCut = 10;
    double sum = 0.0;
    size_t used = 0, zero_rel = 0;
    for (const auto& [qid, ranking] : results) {
        const std::map<std::string, double>& grades = detail::grades_for(judgments, qid);
        if (detail::relevant_count(grades) == 0) {
            ++zero_rel;
            continue;
        }
        double dcg = 0.0;
        for (size_t r = 0; r < ranking.size() && r < kCut; ++r) {
            auto it = grades.find(ranking[r]);
            if (it == grades.end() || it->second <= 0.0) continue;
            dcg += (std::pow(2.0, it->second) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
        }
        std::vector<double> ideal;
        for (const auto& [doc, g] : grades)
            if (g > 0.0) ideal.push_back(g);
        std::sort(ideal.begin(), ideal.end(), std::greater<>());
        double idcg = 0.0;
        for (size_t r = 0; r < ideal.size() && r < kCut; ++r)
            idcg += (std::pow(2.0, ideal[r]) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
        sum += dcg / idcg;
        ++used;
    }
    if (skipped) *skipped = zero_rel;
    if (used == 0) throw SchemaError("ndcg_at_10: no query has relevant documents");
    return sum / static_cast<double>(used);
}

struct RetrievalEval {
    double recall = 0.0;  // percentage at the configured cutoff
    double map = 0.0;
    double ndcg10 = 0.0;
    size_t evaluated = 0;
    size_t skipped = 0;  // queries with zero relevant documents
};

inline RetrievalEval evaluate_retrieval(const RankedResults& results, const Judgments& judgments,
                                        size_t recall_k = 10) {
    RetrievalEval eval;
    size_t skipped = 0;
    eval.recall = recall_at_k(results, judgments, recall_k, &skipped);
    eval.map = mean_average_precision(results, judgments);
    eval.ndcg10 = ndcg_at_10(results, judgments);
    eval.skipped = skipped;
    eval.evaluated = results.size() - skipped;
    return eval;
}

// TSV: query_id <TAB> doc_id <TAB> grade.
inline Judgments load_judgments(const std::string& path) {
    Judgments judgments;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) continue;
        const std::vector<std::string> parts = split(line, '\t');
        if (parts.size() != 3)
            throw SchemaError("judgments line is not 'query_id<TAB>doc_id<TAB>grade': " + line);
        judgments[parts[0]][parts[1]] = parse_double(parts[2], "relevance grade");
    }
    return judgments;
}

inline void save_judgments(const Judgments& judgments, const std::string& path) {
    std::ofstream out = open_output(path);
    for (const auto& [qid, grades] : judgments)
        for (const auto& [doc_id, grade] : grades)
            out << qid << '\t' << doc_id << '\t' << format_double(grade, 6) << '\n';
}

}  // namespace qtc
