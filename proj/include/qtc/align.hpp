#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/io.hpp"
#include "qtc/text.hpp"

namespace qtc {

// Sentinel source token for unaligned target words. The tokenizer splits '<'
// off as punctuation, so no real token can collide with it.
inline constexpr const char* kNullToken = "<null>";

// Probability floor for lookups of unseen (source, target) pairs.
inline constexpr double kAlignProbFloor = 1e-12;

// Lexical translation probabilities t(target | source). Ordered maps keep
// every iteration deterministic.
struct TranslationTable {
    std::map<std::string, std::map<std::string, double>> t;

    double prob(const std::string& src, const std::string& tgt) const {
        auto row = t.find(src);
        if (row == t.end()) return 0.0;
        auto cell = row->second.find(tgt);
        return cell == row->second.end() ? 0.0 : cell->second;
    }
};

struct AlignLink {
    int src = 0;  // index into the source sentence (NULL links are not emitted)
    int tgt = 0;
};

struct Alignment {
    std::vector<AlignLink> links;  // at most one per target position
};

struct CandidateSet {
    std::string source_word;
    std::vector<std::pair<std::string, double>> candidates;  // prob desc, ties lexicographic

    bool empty() const { return candidates.empty(); }
};

struct Ibm1Stats {
    std::vector<double> log_likelihood;  // one entry per EM iteration, non-decreasing
};

using Bitext = std::vector<std::pair<TokenSequence, TokenSequence>>;

// IBM Model 1 EM with a NULL token prepended to every source sentence and
// uniform 1/|V_tgt| initialization over co-occurring pairs.
inline TranslationTable train_ibm1(const Bitext& bitext, int iterations, Ibm1Stats* stats = nullptr) {
    if (bitext.empty()) throw SchemaError("train_ibm1: empty bitext");
    if (iterations < 1) throw SchemaError("train_ibm1: iterations must be >= 1");

    std::set<std::string> tgt_vocab;
    for (const auto& [src, tgt] : bitext)
        for (const std::string& y : tgt.tokens) tgt_vocab.insert(y);
    if (tgt_vocab.empty()) throw SchemaError("train_ibm1: target side has no tokens");
    const double uniform = 1.0 / static_cast<double>(tgt_vocab.size());

    TranslationTable table;
    for (const auto& [src, tgt] : bitext) {
        for (const std::string& y : tgt.tokens) {
            table.t[kNullToken][y] = uniform;
            for (const std::string& x : src.tokens) table.t[x][y] = uniform;
        }
    }

    for (int iter = 0; iter < iterations; ++iter) {
        std::map<std::string, std::map<std::string, double>> count;
        std::map<std::string, double> total;
        double ll = 0.0;

        for (const auto& [src, tgt] : bitext) {
            std::vector<const std::string*> xs;
            static const std::string null_tok = kNullToken;
            xs.push_back(&null_tok);
            for (const std::string& x : src.tokens) xs.push_back(&x);

            for (const std::string& y : tgt.tokens) {
                double denom = 0.0;
                for (const std::string* x : xs) denom += table.t[*x][y];
                ll += std::log(denom) - std::log(static_cast<double>(xs.size()));
                for (const std::string* x : xs) {
                    const double frac = table.t[*x][y] / denom;
                    count[*x][y] += frac;
                    total[*x] += frac;
                }
            }
        }

        for (auto& [x, row] : count) {
            const double z = total[x];
            for (auto& [y, c] : row) table.t[x][y] = c / z;
        }
        if (stats) stats->log_likelihood.push_back(ll);
    }
    return table;
}

// Viterbi alignment under Model 1: each target position links to the
// argmax-probability source word, NULL allowed; ties go to the smallest index
// with NULL first. NULL links are omitted from the result.
inline Alignment viterbi_align(const TranslationTable& table, const TokenSequence& src,
                               const TokenSequence& tgt) {
    Alignment out;
    for (size_t j = 0; j < tgt.tokens.size(); ++j) {
        const std::string& y = tgt.tokens[j];
        double best = std::max(table.prob(kNullToken, y), kAlignProbFloor);
        int best_i = -1;  // NULL
        for (size_t i = 0; i < src.tokens.size(); ++i) {
            const double p = std::max(table.prob(src.tokens[i], y), kAlignProbFloor);
            if (p > best) {
                best = p;
                best_i = static_cast<int>(i);
            }
        }
        if (best_i >= 0) out.links.push_back({best_i, static_cast<int>(j)});
    }
    return out;
}

// Targets with t(y|x) >= p_min, probability-descending (ties lexicographic),
// truncated to k_max. Unseen source word yields an empty set.
inline CandidateSet extract_candidates(const TranslationTable& table, const std::string& source_word,
                                       size_t k_max, double p_min) {
    if (k_max < 1) throw SchemaError("extract_candidates: k_max must be >= 1");
    if (p_min < 0.0 || p_min >= 1.0) throw SchemaError("extract_candidates: p_min must be in [0,1)");

    CandidateSet set;
    set.source_word = source_word;
    auto row = table.t.find(source_word);
    if (row == table.t.end()) return set;

    for (const auto& [y, p] : row->second)
        if (p >= p_min && p > 0.0 && y != kNullToken) set.candidates.emplace_back(y, p);
    std::sort(set.candidates.begin(), set.candidates.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (set.candidates.size() > k_max) set.candidates.resize(k_max);
    return set;
}

inline void save_translation_table(const TranslationTable& table, const std::string& path) {
    std::ofstream out = open_output(path);
    for (const auto& [x, row] : table.t) {
        std::vector<std::pair<std::string, double>> entries(row.begin(), row.end());
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        for (const auto& [y, p] : entries) out << x << '\t' << y << '\t' << format_double(p, 9) << '\n';
    }
}

inline TranslationTable load_translation_table(const std::string& path) {
    TranslationTable table;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) continue;
        const std::vector<std::string> parts = split(line, '\t');
        if (parts.size() != 3)
            throw SchemaError("translation table line is not 'source<TAB>target<TAB>prob': " + line);
        table.t[parts[0]][parts[1]] = parse_double(parts[2], "translation probability");
    }
    return table;
}

}  // namespace qtc
