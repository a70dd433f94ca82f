#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/io.hpp"
#include "qtc/text.hpp"

namespace qtc {

// Token-to-id map with four fixed specials. Most frequent tokens survive the
// size cap, frequency ties break lexicographically; everything else encodes
// to UNK.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocabulary() {
        for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
    }

    int add(const std::string& token) {
        auto [it, inserted] = id_of_.try_emplace(token, static_cast<int>(token_of_.size()));
        if (inserted) token_of_.push_back(token);
        return it->second;
    }

    int id_of(const std::string& token) const {
        auto it = id_of_.find(token);
        return it == id_of_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return id_of_.count(token) != 0; }

    const std::string& token(int id) const { return token_of_.at(static_cast<size_t>(id)); }

    int size() const { return static_cast<int>(token_of_.size()); }

    std::vector<int> encode(const std::vector<std::string>& tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const std::string& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> tokens;
        tokens.reserve(ids.size());
        for (int id : ids) tokens.push_back(token(id));
        return tokens;
    }

    const std::vector<std::string>& tokens() const { return token_of_; }

  private:
    std::vector<std::string> token_of_;
    std::unordered_map<std::string, int> id_of_;
};

inline Vocabulary build_vocab(const std::vector<TokenSequence>& corpus, size_t max_size) {
    if (max_size <= 4) throw SchemaError("build_vocab: max_size must exceed the 4 specials");
    if (corpus.empty()) throw SchemaError("build_vocab: empty corpus");

    std::unordered_map<std::string, long long> count;
    for (const TokenSequence& seq : corpus)
        for (const std::string& tok : seq.tokens) ++count[tok];

    std::vector<std::pair<std::string, long long>> by_freq(count.begin(), count.end());
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    for (const auto& [tok, n] : by_freq) {
        if (static_cast<size_t>(vocab.size()) >= max_size) break;
        vocab.add(tok);
    }
    return vocab;
}

inline void save_vocab(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out = open_output(path);
    for (int id = 0; id < vocab.size(); ++id) out << vocab.token(id) << '\t' << id << '\n';
}

inline Vocabulary load_vocab(const std::string& path) {
    Vocabulary vocab;
    int expected = 0;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) continue;
        const std::vector<std::string> parts = split(line, '\t');
        if (parts.size() != 2) throw SchemaError("vocab line is not 'token<TAB>id': " + line);
        const long long id = parse_int(parts[1], "vocab id");
        if (id != expected) throw SchemaError("vocab ids must be dense and ascending at: " + line);
        if (id < 4) {
            if (parts[0] != vocab.token(static_cast<int>(id)))
                throw SchemaError("vocab special mismatch at id " + parts[1] + ": " + parts[0]);
        } else {
            vocab.add(parts[0]);
        }
        ++expected;
    }
    if (expected < 4) throw SchemaError("vocab file is missing the 4 specials: " + path);
    return vocab;
}

}  // namespace qtc
