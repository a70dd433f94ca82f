#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtc/common.hpp"
#include "qtc/io.hpp"
#include "qtc/mine.hpp"
#include "qtc/text.hpp"

namespace qtc {

struct Bm25Config {
    double k1 = 1.2;
    double b = 0.75;
};

struct SearchHit {
    std::string doc_id;
    double score = 0.0;
};

struct Posting {
    std::string doc_id;
    int tf = 0;
};

// Immutable after build; safe to search from many threads.
class InvertedIndex {
public:
    InvertedIndex() = default;

    explicit InvertedIndex(const DocumentCollection& docs, Bm25Config cfg = {}) : cfg_(cfg) {
        for (const Document& doc : docs.docs()) {
            auto [it, inserted] = doc_lengths_.emplace(doc.id, doc.text.tokens.size());
            if (!inserted) throw SchemaError("duplicate document id: " + doc.id);
            std::map<std::string, int> counts;
            for (const std::string& tok : doc.text.tokens) counts[tok] += 1;
            for (const auto& [term, tf] : counts) postings_[term].push_back({doc.id, tf});
        }
        for (auto& [term, list] : postings_)
            std::sort(list.begin(), list.end(),
                      [](const Posting& a, const Posting& b) { return a.doc_id < b.doc_id; });
        finalize();
    }

    size_t doc_count() const { return doc_lengths_.size(); }
    double avg_doc_length() const { return avgdl_; }
    const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }

    // BM25 with idf = ln(1 + (N - df + 0.5)/(df + 0.5)); repeated query terms
    // contribute once per occurrence. Descending score, ties by doc_id.
    std::vector<SearchHit> search(const std::vector<std::string>& query, size_t k) const {
        if (k < 1) throw SchemaError("search: k must be >= 1");
        std::map<std::string, double> scores;
        const double n = static_cast<double>(doc_count());
        for (const std::string& term : query) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            const double df = static_cast<double>(it->second.size());
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            for (const Posting& p : it->second) {
                const double tf = static_cast<double>(p.tf);
                const double dl = static_cast<double>(doc_lengths_.at(p.doc_id));
                const double norm = cfg_.k1 * (1.0 - cfg_.b + cfg_.b * dl / avgdl_);
                scores[p.doc_id] += idf * tf * (cfg_.k1 + 1.0) / (tf + norm);
            }
        }
        std::vector<SearchHit> hits;
        hits.reserve(scores.size());
        for (const auto& [doc_id, score] : scores) hits.push_back({doc_id, score});
        std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.doc_id < b.doc_id;
        });
        if (hits.size() > k) hits.resize(k);
        return hits;
    }

    void save_json(const std::string& path) const {
        nlohmann::json j;
        j["format"] = "qtc-index";
        j["version"] = 1;
        j["k1"] = cfg_.k1;
        j["b"] = cfg_.b;
        nlohmann::json lengths = nlohmann::json::object();
        for (const auto& [doc_id, len] : doc_lengths_) lengths[doc_id] = len;
        j["doc_lengths"] = std::move(lengths);
        nlohmann::json postings = nlohmann::json::object();
        for (const auto& [term, list] : postings_) {
            nlohmann::json arr = nlohmann::json::array();
            for (const Posting& p : list) arr.push_back({p.doc_id, p.tf});
            postings[term] = std::move(arr);
        }
        j["postings"] = std::move(postings);
        std::ofstream out = open_output(path);
        out << j.dump(1, '\t') << '\n';
    }

    // Binary layout, little-endian: magic "QTCI", u32 version, f64 k1, f64 b,
    // u32 doc count, per doc (u32 id length, id, u32 length), u32 term count,
    // per term (u32 term length, term, u32 postings, per posting u32 id
    // length, id, u32 tf).
    void save_binary(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + path);
        out.write("QTCI", 4);
        put_u32(out, 1);
        put_f64(out, cfg_.k1);
        put_f64(out, cfg_.b);
        put_u32(out, static_cast<uint32_t>(doc_lengths_.size()));
        for (const auto& [doc_id, len] : doc_lengths_) {
            put_str(out, doc_id);
            put_u32(out, static_cast<uint32_t>(len));
        }
        put_u32(out, static_cast<uint32_t>(postings_.size()));
        for (const auto& [term, list] : postings_) {
            put_str(out, term);
            put_u32(out, static_cast<uint32_t>(list.size()));
            for (const Posting& p : list) {
                put_str(out, p.doc_id);
                put_u32(out, static_cast<uint32_t>(p.tf));
            }
        }
        if (!out) throw IoError("write failed: " + path);
    }

    // Reads either persisted form, telling them apart by the leading bytes.
    static InvertedIndex load(const std::string& path) {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError("cannot open: " + path);
        char magic[4] = {};
        probe.read(magic, 4);
        probe.close();
        return std::memcmp(magic, "QTCI", 4) == 0 ? load_binary(path) : load_json(path);
    }

    static InvertedIndex load_json(const std::string& path) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path + ": invalid JSON: " + e.what());
        }
        if (!j.is_object() || j.value("format", "") != "qtc-index" || j.value("version", 0) != 1)
            throw SchemaError(path + ": not a version-1 qtc index");
        InvertedIndex idx;
        idx.cfg_.k1 = j.at("k1").get<double>();
        idx.cfg_.b = j.at("b").get<double>();
        for (const auto& [doc_id, len] : j.at("doc_lengths").items())
            idx.doc_lengths_[doc_id] = len.get<size_t>();
        for (const auto& [term, arr] : j.at("postings").items()) {
            std::vector<Posting>& list = idx.postings_[term];
            for (const auto& entry : arr) {
                if (!entry.is_array() || entry.size() != 2)
                    throw SchemaError(path + ": posting entries must be [doc_id, tf]");
                list.push_back({entry[0].get<std::string>(), entry[1].get<int>()});
            }
        }
        idx.validate_postings(path);
        idx.finalize();
        return idx;
    }

    static InvertedIndex load_binary(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open: " + path);
        char magic[4];
        if (!in.read(magic, 4) || std::memcmp(magic, "QTCI", 4) != 0)
            throw SchemaError(path + ": not a binary qtc index");
        if (get_u32(in, path) != 1) throw SchemaError(path + ": unsupported index version");
        InvertedIndex idx;
        idx.cfg_.k1 = get_f64(in, path);
        idx.cfg_.b = get_f64(in, path);
        const uint32_t docs = get_u32(in, path);
        for (uint32_t i = 0; i < docs; ++i) {
            std::string id = get_str(in, path);
            idx.doc_lengths_[id] = get_u32(in, path);
        }
        const uint32_t terms = get_u32(in, path);
        for (uint32_t i = 0; i < terms; ++i) {
            std::string term = get_str(in, path);
            const uint32_t count = get_u32(in, path);
            std::vector<Posting>& list = idx.postings_[term];
            list.reserve(count);
            for (uint32_t p = 0; p < count; ++p) {
                std::string doc_id = get_str(in, path);
                list.push_back({std::move(doc_id), static_cast<int>(get_u32(in, path))});
            }
        }
        idx.validate_postings(path);
        idx.finalize();
        return idx;
    }

private:
    void finalize() {
        avgdl_ = 0.0;
        for (const auto& [doc_id, len] : doc_lengths_) avgdl_ += static_cast<double>(len);
        if (!doc_lengths_.empty()) avgdl_ /= static_cast<double>(doc_lengths_.size());
    }

    void validate_postings(const std::string& path) const {
        for (const auto& [term, list] : postings_) {
            for (size_t i = 0; i < list.size(); ++i) {
                if (!doc_lengths_.count(list[i].doc_id))
                    throw SchemaError(path + ": posting for unknown document " + list[i].doc_id);
                if (i > 0 && !(list[i - 1].doc_id < list[i].doc_id))
                    throw SchemaError(path + ": postings for '" + term + "' not sorted by doc_id");
            }
        }
    }

    static void put_u32(std::ostream& out, uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    static uint32_t get_u32(std::istream& in, const std::string& path) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw SchemaError(path + ": index file truncated");
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
    static void put_f64(std::ostream& out, double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u32(out, static_cast<uint32_t>(bits & 0xffffffffULL));
        put_u32(out, static_cast<uint32_t>(bits >> 32));
    }
    static double get_f64(std::istream& in, const std::string& path) {
        const uint64_t lo = get_u32(in, path);
        const uint64_t hi = get_u32(in, path);
        const uint64_t bits = lo | (hi << 32);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    static void put_str(std::ostream& out, const std::string& s) {
        put_u32(out, static_cast<uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::string get_str(std::istream& in, const std::string& path) {
        const uint32_t len = get_u32(in, path);
        std::string s(len, '\0');
        if (len > 0 && !in.read(s.data(), len)) throw SchemaError(path + ": index file truncated");
        return s;
    }

    Bm25Config cfg_;
    std::map<std::string, std::vector<Posting>> postings_;
    std::map<std::string, size_t> doc_lengths_;
    double avgdl_ = 0.0;
};

}  // namespace qtc
