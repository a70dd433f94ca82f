#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "qtc/align.hpp"
#include "qtc/common.hpp"
#include "qtc/metrics.hpp"
#include "qtc/mine.hpp"
#include "qtc/rng.hpp"
#include "qtc/text.hpp"

namespace qtc {

// A planted bilingual world. Topical source words belong to one topic each; a
// fraction of them are polysemous with a general-domain translation that
// dominates the bitext but never occurs in documents, plus a family of
// search-domain synonyms that live in the documents. The first synonym is the
// planted "search sense": it marks the documents a searcher actually wants,
// and clicks for its source word land on those documents (plus one stray), so
// its clicked-document frequency sits exactly one below the clicked total and
// its TF-IDF lands at zero. Mid-frequency synonyms score positive and outrank
// it; the trailing n_saturated synonyms appear in every document, which
// drives their TF-IDF negative and parks them below it. The search sense
// therefore sits mid-table: small masks exclude it, moderate ones keep it,
// and only oversized ones readmit the general translation.
struct WorldConfig {
    int n_topics = 10;
    int docs_per_topic = 20;
    int words_per_topic = 6;        // topical source words per topic
    double polysemy_fraction = 0.5; // leading fraction of each topic's words
    int n_synonyms = 10;            // search senses per polysemous word
    int n_saturated = 4;            // trailing synonyms present in every document
    int n_generics = 12;            // topic-neutral source words
    int bitext_pairs = 9000;
    int test_queries = 600;
    int extra_click_queries = 100;

    // Bitext sense distribution for a polysemous word; the remainder after
    // general + primary is spread equally over the other synonyms.
    double p_general = 0.50;
    double p_primary = 0.30;

    // Fractions of a topic's documents containing each planted token.
    double primary_doc_rate = 0.5;
    double mid_doc_rate = 0.6;
    double direct_doc_rate = 0.7;

    int generics_per_doc_min = 2;
    int generics_per_doc_max = 4;

    void validate() const {
        if (n_topics < 1 || docs_per_topic < 1 || words_per_topic < 1)
            throw SchemaError("world config: topics, docs, and words must be positive");
        if (polysemy_fraction < 0.0 || polysemy_fraction > 1.0)
            throw SchemaError("world config: polysemy_fraction must be in [0,1]");
        if (n_saturated < 1) throw SchemaError("world config: need at least one saturated synonym");
        if (n_synonyms < 2 + n_saturated)
            throw SchemaError("world config: n_synonyms must cover primary, one mid, and the saturated tail");
        if (n_generics < 1) throw SchemaError("world config: need at least one generic word");
        if (bitext_pairs < 1 || test_queries < 1)
            throw SchemaError("world config: bitext_pairs and test_queries must be positive");
        if (extra_click_queries < 0) throw SchemaError("world config: extra_click_queries must be >= 0");
        if (p_general <= 0.0 || p_primary <= 0.0 || p_general + p_primary >= 1.0)
            throw SchemaError("world config: sense probabilities must be positive and sum below 1");
        for (double rate : {primary_doc_rate, mid_doc_rate, direct_doc_rate})
            if (rate <= 0.0 || rate > 1.0) throw SchemaError("world config: doc rates must be in (0,1]");
        if (generics_per_doc_min < 0 || generics_per_doc_max < generics_per_doc_min ||
            generics_per_doc_max > n_generics)
            throw SchemaError("world config: generic-per-doc range is inconsistent");
    }
};

struct TestQuery {
    std::string qid;
    TokenSequence source;
    TokenSequence reference;
    int topic = 0;
};

struct SyntheticWorld {
    Bitext bitext;
    DocumentCollection docs;
    ClickLog clicks;
    std::vector<TestQuery> queries;
    Judgments judgments;

    // Planted lexicon, for audits and degenerate-world checks.
    std::map<std::string, std::string> general_sense;              // poly source -> general target
    std::map<std::string, std::string> primary_sense;              // poly source -> search target
    std::map<std::string, std::vector<std::string>> synonym_sets;  // poly source -> all synonyms
    std::map<std::string, std::string> direct_sense;               // non-poly source -> target
    std::map<std::string, std::string> generic_sense;              // generic source -> target
    std::map<std::string, int> topic_of_word;                      // topical source -> topic
    std::vector<std::vector<std::string>> topic_doc_ids;           // per topic
};

namespace detail {

inline std::string zero_pad(int value, int width) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%0*d", width, value);
    return buf;
}

// count distinct indices from [0, n), ascending.
inline std::vector<int> sample_indices(Rng& rng, int n, int count) {
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - i)));
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(count));
    std::sort(pool.begin(), pool.end());
    return pool;
}

// A fixed schedule whose prefix counts track the given shares as closely as
// integer counts allow: slot i goes to the entry whose emitted count lags its
// share of (i + 1) the most, ties to the smaller index.
inline std::vector<int> proportional_cycle(const std::vector<double>& shares, int length = 100) {
    std::vector<double> emitted(shares.size(), 0.0);
    std::vector<int> cycle(static_cast<size_t>(length));
    for (int i = 0; i < length; ++i) {
        size_t best = 0;
        double best_deficit = shares[0] * (i + 1) - emitted[0];
        for (size_t s = 1; s < shares.size(); ++s) {
            const double deficit = shares[s] * (i + 1) - emitted[s];
            if (deficit > best_deficit + 1e-12) {
                best = s;
                best_deficit = deficit;
            }
        }
        cycle[static_cast<size_t>(i)] = static_cast<int>(best);
        emitted[best] += 1.0;
    }
    return cycle;
}

}  // namespace detail

// Deterministic for a given (config, seed).
inline SyntheticWorld gen_synthetic(const WorldConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    SyntheticWorld world;

    const int poly_per_topic = static_cast<int>(
        std::lround(cfg.polysemy_fraction * static_cast<double>(cfg.words_per_topic)));

    struct WordPlan {
        std::string source;
        bool poly = false;
        std::string general;                // poly only
        std::vector<std::string> synonyms;  // poly only; [0] primary, saturated tail last
        std::string direct;                 // non-poly only
        std::vector<int> primary_docs, direct_docs;
        std::vector<std::vector<int>> mid_docs;  // per mid synonym
    };
    std::vector<std::vector<WordPlan>> plan(static_cast<size_t>(cfg.n_topics));

    const int primary_count = std::max(
        1, std::min(cfg.docs_per_topic - 2,
                    static_cast<int>(std::lround(cfg.primary_doc_rate * cfg.docs_per_topic))));
    const int mid_count =
        std::max(1, static_cast<int>(std::lround(cfg.mid_doc_rate * cfg.docs_per_topic)));
    const int direct_count =
        std::max(1, static_cast<int>(std::lround(cfg.direct_doc_rate * cfg.docs_per_topic)));

    for (int t = 0; t < cfg.n_topics; ++t) {
        for (int k = 0; k < cfg.words_per_topic; ++k) {
            WordPlan w;
            const std::string stem = "t" + std::to_string(t) + "w" + std::to_string(k);
            w.source = stem;
            w.poly = k < poly_per_topic;
            if (w.poly) {
                w.general = "g" + stem;
                for (int i = 0; i < cfg.n_synonyms; ++i)
                    w.synonyms.push_back("s" + stem + static_cast<char>('a' + i));
                w.primary_docs = detail::sample_indices(rng, cfg.docs_per_topic, primary_count);
                for (int i = 1; i < cfg.n_synonyms - cfg.n_saturated; ++i)
                    w.mid_docs.push_back(detail::sample_indices(rng, cfg.docs_per_topic, mid_count));
                world.general_sense[w.source] = w.general;
                world.primary_sense[w.source] = w.synonyms.front();
                world.synonym_sets[w.source] = w.synonyms;
            } else {
                w.direct = "v" + stem;
                w.direct_docs = detail::sample_indices(rng, cfg.docs_per_topic, direct_count);
                world.direct_sense[w.source] = w.direct;
            }
            world.topic_of_word[w.source] = t;
            plan[static_cast<size_t>(t)].push_back(std::move(w));
        }
    }
    for (int j = 0; j < cfg.n_generics; ++j)
        world.generic_sense["c" + std::to_string(j)] = "vc" + std::to_string(j);

    // ---- Documents ------------------------------------------------------
    world.topic_doc_ids.resize(static_cast<size_t>(cfg.n_topics));
    for (int t = 0; t < cfg.n_topics; ++t) {
        for (int d = 0; d < cfg.docs_per_topic; ++d) {
            std::vector<std::string> tokens;
            for (const WordPlan& w : plan[static_cast<size_t>(t)]) {
                if (w.poly) {
                    if (std::binary_search(w.primary_docs.begin(), w.primary_docs.end(), d))
                        for (int rep = 0; rep < 3; ++rep) tokens.push_back(w.synonyms.front());
                    for (size_t m = 0; m < w.mid_docs.size(); ++m)
                        if (std::binary_search(w.mid_docs[m].begin(), w.mid_docs[m].end(), d))
                            tokens.push_back(w.synonyms[m + 1]);
                    for (int i = cfg.n_synonyms - cfg.n_saturated; i < cfg.n_synonyms; ++i)
                        tokens.push_back(w.synonyms[static_cast<size_t>(i)]);  // every document
                } else if (std::binary_search(w.direct_docs.begin(), w.direct_docs.end(), d)) {
                    tokens.push_back(w.direct);
                }
            }
            const int n_gen = cfg.generics_per_doc_min +
                              static_cast<int>(rng.below(static_cast<uint64_t>(
                                  cfg.generics_per_doc_max - cfg.generics_per_doc_min + 1)));
            for (int g : detail::sample_indices(rng, cfg.n_generics, n_gen))
                tokens.push_back("vc" + std::to_string(g));
            rng.shuffle(tokens);

            Document doc;
            doc.id = "t" + std::to_string(t) + "d" + detail::zero_pad(d, 2);
            doc.text.tokens = std::move(tokens);
            doc.text.lang = "en";
            world.topic_doc_ids[static_cast<size_t>(t)].push_back(doc.id);
            world.docs.add(std::move(doc));
        }
    }

    // ---- Bitext ----------------------------------------------------------
    // Sense choice follows a fixed proportional cycle per word rather than
    // iid draws: over any window the per-sense counts track their target
    // shares as closely as integers allow, so even the rarest sense
    // co-occurs often enough for the aligner to keep it above any sane
    // probability floor.
    std::vector<double> sense_share(static_cast<size_t>(cfg.n_synonyms) + 1);
    sense_share[0] = cfg.p_general;
    sense_share[1] = cfg.p_primary;
    const double rest_share =
        (1.0 - cfg.p_general - cfg.p_primary) / static_cast<double>(cfg.n_synonyms - 1);
    for (size_t i = 2; i < sense_share.size(); ++i) sense_share[i] = rest_share;
    const std::vector<int> sense_pattern = detail::proportional_cycle(sense_share);
    std::map<std::string, size_t> sense_counter;

    auto translate_word = [&](const WordPlan& w) -> std::string {
        if (!w.poly) return w.direct;
        const int sense = sense_pattern[sense_counter[w.source]++ % sense_pattern.size()];
        if (sense == 0) return w.general;
        return w.synonyms[static_cast<size_t>(sense - 1)];
    };

    for (int p = 0; p < cfg.bitext_pairs; ++p) {
        const int t = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_topics)));
        const std::vector<WordPlan>& words = plan[static_cast<size_t>(t)];
        const int n_topical =
            1 + static_cast<int>(rng.below(static_cast<uint64_t>(
                    std::min(3, cfg.words_per_topic))));
        std::vector<std::pair<std::string, std::string>> pairs;
        for (int idx : detail::sample_indices(rng, cfg.words_per_topic, n_topical)) {
            const WordPlan& w = words[static_cast<size_t>(idx)];
            pairs.emplace_back(w.source, translate_word(w));
        }
        const int n_gen = static_cast<int>(rng.below(3));
        for (int g : detail::sample_indices(rng, cfg.n_generics, n_gen))
            pairs.emplace_back("c" + std::to_string(g), "vc" + std::to_string(g));
        rng.shuffle(pairs);

        TokenSequence src, tgt;
        src.lang = "ru";
        tgt.lang = "en";
        for (const auto& [s, y] : pairs) {
            src.tokens.push_back(s);
            tgt.tokens.push_back(y);
        }
        world.bitext.emplace_back(std::move(src), std::move(tgt));
    }

    // ---- Click log -------------------------------------------------------
    // Clicks reflect search intent. For a polysemous word the clicked set is
    // the documents carrying its search sense plus one stray click, so the
    // sense covers all but one clicked document; for a non-polysemous word it
    // is the documents carrying its translation. Coverage queries enumerate
    // that set per word; extra multi-word queries click inside the
    // intersection of their words' sets.
    auto intent_docs = [](const WordPlan& w) {
        return w.poly ? w.primary_docs : w.direct_docs;
    };
    int click_counter = 0;
    const int window = std::max(1, (cfg.docs_per_topic + 4) / 5);
    for (int t = 0; t < cfg.n_topics; ++t) {
        for (const WordPlan& w : plan[static_cast<size_t>(t)]) {
            std::vector<int> covered = intent_docs(w);
            if (w.poly) {
                for (int d = 0; d < cfg.docs_per_topic; ++d) {
                    if (!std::binary_search(w.primary_docs.begin(), w.primary_docs.end(), d)) {
                        covered.push_back(d);
                        break;
                    }
                }
                std::sort(covered.begin(), covered.end());
            }
            for (size_t start = 0; start < covered.size(); start += static_cast<size_t>(window)) {
                ClickRecord rec;
                rec.qid = "cq" + detail::zero_pad(++click_counter, 4);
                rec.query.tokens = {w.source};
                rec.query.lang = "ru";
                for (size_t i = start; i < std::min(start + static_cast<size_t>(window), covered.size()); ++i)
                    rec.clicked.push_back(
                        world.topic_doc_ids[static_cast<size_t>(t)][static_cast<size_t>(covered[i])]);
                world.clicks.push_back(std::move(rec));
            }
        }
    }
    for (int q = 0; q < cfg.extra_click_queries; ++q) {
        const int t = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_topics)));
        const std::vector<WordPlan>& words = plan[static_cast<size_t>(t)];
        ClickRecord rec;
        rec.qid = "cq" + detail::zero_pad(++click_counter, 4);
        rec.query.lang = "ru";
        const int n_words = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(
                                    std::min(3, cfg.words_per_topic))));
        std::vector<int> pool;
        for (int idx : detail::sample_indices(rng, cfg.words_per_topic, n_words)) {
            const WordPlan& w = words[static_cast<size_t>(idx)];
            rec.query.tokens.push_back(w.source);
            const std::vector<int>& docs = intent_docs(w);
            if (pool.empty() && rec.query.tokens.size() == 1) {
                pool = docs;
            } else {
                std::vector<int> merged;
                std::set_intersection(pool.begin(), pool.end(), docs.begin(), docs.end(),
                                      std::back_inserter(merged));
                pool = std::move(merged);
            }
        }
        const int n_clicks =
            3 + static_cast<int>(rng.below(static_cast<uint64_t>(std::min(4, cfg.docs_per_topic))));
        if (pool.empty()) continue;
        for (int i : detail::sample_indices(rng, static_cast<int>(pool.size()),
                                            std::min(n_clicks, static_cast<int>(pool.size()))))
            rec.clicked.push_back(
                world.topic_doc_ids[static_cast<size_t>(t)][static_cast<size_t>(pool[static_cast<size_t>(i)])]);
        world.clicks.push_back(std::move(rec));
    }

    // ---- Test queries, references, judgments ------------------------------
    // References alternate a polysemous word between its general and search
    // senses per occurrence, so a system committed to either sense matches
    // half the time and the two stay within BLEU noise of each other. The
    // starting sense is staggered across words; otherwise every word with an
    // odd occurrence count hands its extra match to the same side.
    std::map<std::string, int> alternation;
    {
        int stagger = 0;
        for (const std::vector<WordPlan>& words : plan)
            for (const WordPlan& w : words)
                if (w.poly) alternation[w.source] = stagger++ % 2;
    }
    for (int q = 0; q < cfg.test_queries; ++q) {
        const int t = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_topics)));
        const std::vector<WordPlan>& words = plan[static_cast<size_t>(t)];

        std::vector<int> poly_slots, direct_slots;
        for (int k = 0; k < cfg.words_per_topic; ++k)
            (words[static_cast<size_t>(k)].poly ? poly_slots : direct_slots).push_back(k);

        std::vector<int> chosen;
        int poly_choice = -1;
        if (!poly_slots.empty()) {
            const int i = static_cast<int>(rng.below(static_cast<uint64_t>(poly_slots.size())));
            poly_choice = poly_slots[static_cast<size_t>(i)];
            chosen.push_back(poly_choice);
        }
        if (!direct_slots.empty()) {
            const int n_direct = 1 + static_cast<int>(rng.below(
                                         static_cast<uint64_t>(std::min<size_t>(3, direct_slots.size()))));
            for (int i : detail::sample_indices(rng, static_cast<int>(direct_slots.size()), n_direct))
                chosen.push_back(direct_slots[static_cast<size_t>(i)]);
        }
        std::sort(chosen.begin(), chosen.end());

        TestQuery query;
        query.qid = "q" + detail::zero_pad(q + 1, 4);
        query.topic = t;
        query.source.lang = "ru";
        query.reference.lang = "en";
        for (int k : chosen) {
            const WordPlan& w = words[static_cast<size_t>(k)];
            query.source.tokens.push_back(w.source);
            if (w.poly) {
                const int turn = alternation[w.source]++;
                query.reference.tokens.push_back(turn % 2 == 0 ? w.general : w.synonyms.front());
            } else {
                query.reference.tokens.push_back(w.direct);
            }
        }
        const int g = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_generics)));
        query.source.tokens.push_back("c" + std::to_string(g));
        query.reference.tokens.push_back("vc" + std::to_string(g));

        // A query about a polysemous word wants the documents carrying its
        // search sense; without one, any document of the topic will do.
        if (poly_choice >= 0) {
            const WordPlan& w = words[static_cast<size_t>(poly_choice)];
            for (int d : w.primary_docs)
                world.judgments[query.qid]
                               [world.topic_doc_ids[static_cast<size_t>(t)][static_cast<size_t>(d)]] = 1.0;
        } else {
            for (const std::string& doc_id : world.topic_doc_ids[static_cast<size_t>(t)])
                world.judgments[query.qid][doc_id] = 1.0;
        }
        world.queries.push_back(std::move(query));
    }

    return world;
}

// Fraction of clicked documents containing the planted search sense, minimized
// over polysemous words; the generator is built to keep this at or above 0.9.
inline double audit_search_sense_coverage(const SyntheticWorld& world) {
    if (world.primary_sense.empty()) return 1.0;
    const std::map<std::string, std::set<size_t>> by_word = clicked_docs_by_word(world.clicks, world.docs);
    double worst = 1.0;
    for (const auto& [source, primary] : world.primary_sense) {
        auto it = by_word.find(source);
        if (it == by_word.end() || it->second.empty())
            throw SchemaError("audit: polysemous word " + source + " has no clicked documents");
        size_t with_sense = 0;
        for (size_t doc_idx : it->second) {
            const Document& doc = world.docs.at(doc_idx);
            for (const std::string& tok : doc.text.tokens) {
                if (tok == primary) {
                    ++with_sense;
                    break;
                }
            }
        }
        worst = std::min(worst, static_cast<double>(with_sense) / static_cast<double>(it->second.size()));
    }
    return worst;
}

// ---- Plain-file forms used by the CLI -------------------------------------

inline void save_parallel_text(const Bitext& bitext, const std::string& src_path,
                               const std::string& tgt_path) {
    std::ofstream src = open_output(src_path);
    std::ofstream tgt = open_output(tgt_path);
    for (const auto& [s, t] : bitext) {
        src << join(s.tokens, " ") << '\n';
        tgt << join(t.tokens, " ") << '\n';
    }
}

inline Bitext load_parallel_text(const std::string& src_path, const std::string& tgt_path,
                                 const std::string& src_lang, const std::string& tgt_lang) {
    const std::vector<std::string> src_lines = read_lines(src_path);
    const std::vector<std::string> tgt_lines = read_lines(tgt_path);
    if (src_lines.size() != tgt_lines.size())
        throw SchemaError("parallel files differ in length: " + src_path + " vs " + tgt_path);
    Bitext bitext;
    for (size_t i = 0; i < src_lines.size(); ++i) {
        TokenSequence s = tokenize(src_lines[i], src_lang);
        TokenSequence t = tokenize(tgt_lines[i], tgt_lang);
        if (s.tokens.empty() || t.tokens.empty()) continue;
        bitext.emplace_back(std::move(s), std::move(t));
    }
    if (bitext.empty()) throw SchemaError("no nonempty sentence pairs in " + src_path);
    return bitext;
}

inline void save_documents(const DocumentCollection& docs, const std::string& path) {
    std::ofstream out = open_output(path);
    for (const Document& doc : docs.docs()) {
        nlohmann::json j;
        j["id"] = doc.id;
        j["text"] = join(doc.text.tokens, " ");
        out << j.dump() << '\n';
    }
}

inline void save_click_log(const ClickLog& log, const std::string& path) {
    std::ofstream out = open_output(path);
    for (const ClickRecord& rec : log) {
        nlohmann::json j;
        j["qid"] = rec.qid;
        j["query"] = join(rec.query.tokens, " ");
        j["clicked"] = rec.clicked;
        out << j.dump() << '\n';
    }
}

}  // namespace qtc
