#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/io.hpp"
#include "qtc/text.hpp"

namespace qtc {

inline constexpr const char* kBpeEndOfWord = "</w>";

struct BpeModel {
    std::vector<std::pair<std::string, std::string>> merges;  // applied in order

    size_t num_merges() const { return merges.size(); }
};

namespace detail {

inline bool has_eow(const std::string& s) {
    static const std::string m = kBpeEndOfWord;
    return s.size() >= m.size() && s.compare(s.size() - m.size(), m.size(), m) == 0;
}

inline std::string strip_eow(const std::string& s) {
    static const std::string m = kBpeEndOfWord;
    return has_eow(s) ? s.substr(0, s.size() - m.size()) : s;
}

// Split a word into codepoint symbols, end-of-word marker attached to the
// last one. Words that already carry the marker are not double-marked, which
// makes re-application a no-op.
inline std::vector<std::string> word_to_symbols(const std::string& word) {
    const std::string bare = strip_eow(word);
    std::vector<std::string> syms;
    for (uint32_t cp : utf8::decode(bare)) {
        std::string s;
        utf8::append(s, cp);
        syms.push_back(std::move(s));
    }
    if (syms.empty()) syms.push_back("");
    syms.back() += kBpeEndOfWord;
    return syms;
}

// Replace adjacent (left, right) pairs left-to-right, one pass.
inline void apply_merge(std::vector<std::string>& syms, const std::pair<std::string, std::string>& merge) {
    std::vector<std::string> out;
    out.reserve(syms.size());
    size_t i = 0;
    while (i < syms.size()) {
        if (i + 1 < syms.size() && syms[i] == merge.first && syms[i + 1] == merge.second) {
            out.push_back(merge.first + merge.second);
            i += 2;
        } else {
            out.push_back(syms[i]);
            ++i;
        }
    }
    syms.swap(out);
}

}  // namespace detail

// Greedy most-frequent-pair merges over word-internal symbol pairs; count
// ties break lexicographically. Stops early when no adjacent pair remains.
inline BpeModel learn_bpe(const std::vector<TokenSequence>& corpus, size_t num_merges) {
    if (corpus.empty()) throw SchemaError("learn_bpe: empty corpus");

    std::unordered_map<std::string, long long> word_count;
    for (const TokenSequence& seq : corpus)
        for (const std::string& tok : seq.tokens) ++word_count[tok];
    if (word_count.empty()) throw SchemaError("learn_bpe: corpus has no tokens");

    // Deterministic iteration order regardless of hash layout.
    std::vector<std::pair<std::string, long long>> words(word_count.begin(), word_count.end());
    std::sort(words.begin(), words.end());

    std::vector<std::vector<std::string>> syms(words.size());
    for (size_t w = 0; w < words.size(); ++w) syms[w] = detail::word_to_symbols(words[w].first);

    BpeModel model;
    for (size_t step = 0; step < num_merges; ++step) {
        std::map<std::pair<std::string, std::string>, long long> pair_count;
        for (size_t w = 0; w < words.size(); ++w) {
            const auto& s = syms[w];
            for (size_t i = 0; i + 1 < s.size(); ++i)
                pair_count[{s[i], s[i + 1]}] += words[w].second;
        }
        if (pair_count.empty()) break;
        auto best = pair_count.begin();
        for (auto it = pair_count.begin(); it != pair_count.end(); ++it)
            if (it->second > best->second) best = it;  // ties keep the lexicographically first
        model.merges.push_back(best->first);
        for (auto& s : syms) detail::apply_merge(s, best->first);
    }
    return model;
}

// Segment every token of the sequence. Idempotent: marker-carrying tokens
// re-merge to themselves.
inline TokenSequence apply_bpe(const BpeModel& model, const TokenSequence& seq) {
    TokenSequence out;
    out.lang = seq.lang;
    for (const std::string& tok : seq.tokens) {
        std::vector<std::string> syms = detail::word_to_symbols(tok);
        for (const auto& merge : model.merges) {
            if (syms.size() < 2) break;
            detail::apply_merge(syms, merge);
        }
        for (auto& s : syms) out.tokens.push_back(std::move(s));
    }
    return out;
}

// Inverse of apply_bpe at the word level: concatenate subwords, a marker
// terminates each word.
inline TokenSequence bpe_decode(const TokenSequence& seq) {
    TokenSequence out;
    out.lang = seq.lang;
    std::string cur;
    for (const std::string& tok : seq.tokens) {
        if (detail::has_eow(tok)) {
            cur += detail::strip_eow(tok);
            out.tokens.push_back(cur);
            cur.clear();
        } else {
            cur += tok;
        }
    }
    if (!cur.empty()) out.tokens.push_back(cur);
    return out;
}

inline void save_bpe(const BpeModel& model, const std::string& path) {
    std::ofstream out = open_output(path);
    for (const auto& [l, r] : model.merges) out << l << '\t' << r << '\n';
}

inline BpeModel load_bpe(const std::string& path) {
    BpeModel model;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) continue;
        const std::vector<std::string> parts = split(line, '\t');
        if (parts.size() != 2) throw SchemaError("bpe model line is not 'left<TAB>right': " + line);
        model.merges.emplace_back(parts[0], parts[1]);
    }
    return model;
}

}  // namespace qtc
