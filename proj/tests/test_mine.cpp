#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "qtc/mine.hpp"
#include "qtc/rng.hpp"

using namespace qtc;

namespace {

Document make_doc(const std::string& id, const std::vector<std::string>& tokens) {
    Document d;
    d.id = id;
    d.text.tokens = tokens;
    d.text.lang = "en";
    return d;
}

}  // namespace

TEST_CASE("clickthrough tf-idf worked example") {
    // Ten clicked documents. Candidate u occurs six times spread over four of
    // them, candidate v occurs twice inside a single one:
    //   TF_u = 6/8 = 0.75        IDF_u = ln(10/5) = ln 2
    //   TF_v = 2/8 = 0.25        IDF_v = ln(10/2) = ln 5
    // so u scores 0.75 ln 2 = 0.5199 and outranks v at 0.25 ln 5 = 0.4024
    // even though v is the rarer (higher-IDF) word.
    DocumentCollection collection;
    collection.add(make_doc("d0", {"u", "u", "x"}));
    collection.add(make_doc("d1", {"u", "u"}));
    collection.add(make_doc("d2", {"u", "y"}));
    collection.add(make_doc("d3", {"x", "u"}));
    collection.add(make_doc("d4", {"v", "v"}));
    for (int i = 5; i < 10; ++i) collection.add(make_doc("d" + std::to_string(i), {"filler"}));

    CandidateSet cands;
    cands.source_word = "w";
    cands.candidates = {{"v", 0.6}, {"u", 0.4}};  // alignment prefers v

    std::set<size_t> clicked;
    for (size_t i = 0; i < 10; ++i) clicked.insert(i);

    const TfidfResult r = score_tfidf(cands, clicked, collection);
    REQUIRE(r.g_y == Catch::Approx(10.0));
    REQUIRE(r.n == std::vector<double>{2.0, 6.0});
    REQUIRE(r.g == std::vector<double>{1.0, 4.0});
    REQUIRE_FALSE(r.all_zero);

    REQUIRE(r.ranked.size() == 2);
    REQUIRE(r.ranked[0].first == "u");
    REQUIRE(r.ranked[0].second == Catch::Approx(0.75 * std::log(2.0)).margin(1e-9));
    REQUIRE(r.ranked[0].second == Catch::Approx(0.5199).margin(5e-5));
    REQUIRE(r.ranked[1].first == "v");
    REQUIRE(r.ranked[1].second == Catch::Approx(0.25 * std::log(5.0)).margin(1e-9));
    REQUIRE(r.ranked[1].second == Catch::Approx(0.4024).margin(5e-5));
}

TEST_CASE("tf-idf matches a brute-force oracle on random instances") {
    Rng rng(4242);
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g", "h"};

    for (int iter = 0; iter < 100; ++iter) {
        DocumentCollection collection;
        const size_t n_docs = 2 + rng.below(12);
        for (size_t d = 0; d < n_docs; ++d) {
            std::vector<std::string> tokens;
            const size_t len = 1 + rng.below(10);
            for (size_t i = 0; i < len; ++i) tokens.push_back(vocab[rng.below(vocab.size())]);
            collection.add(make_doc("d" + std::to_string(d), tokens));
        }

        std::set<size_t> clicked;
        const size_t n_clicked = 1 + rng.below(n_docs);
        while (clicked.size() < n_clicked) clicked.insert(rng.below(n_docs));

        CandidateSet cands;
        cands.source_word = "src";
        std::vector<std::string> pool = vocab;
        rng.shuffle(pool);
        const size_t n_cands = 1 + rng.below(5);
        for (size_t i = 0; i < n_cands; ++i) cands.candidates.emplace_back(pool[i], 1.0 / (i + 1.0));

        const TfidfResult r = score_tfidf(cands, clicked, collection);

        // Independent pass: recount from the raw documents.
        double n_total = 0.0;
        std::vector<double> n_oracle(n_cands, 0.0), g_oracle(n_cands, 0.0);
        for (size_t i = 0; i < n_cands; ++i) {
            for (size_t doc_idx : clicked) {
                size_t in_doc = 0;
                for (const std::string& tok : collection.at(doc_idx).text.tokens)
                    if (tok == cands.candidates[i].first) ++in_doc;
                n_oracle[i] += static_cast<double>(in_doc);
                if (in_doc > 0) g_oracle[i] += 1.0;
            }
            n_total += n_oracle[i];
        }

        REQUIRE(r.g_y == Catch::Approx(static_cast<double>(clicked.size())));
        for (size_t i = 0; i < n_cands; ++i) {
            REQUIRE(r.n[i] == Catch::Approx(n_oracle[i]).margin(1e-12));
            REQUIRE(r.g[i] == Catch::Approx(g_oracle[i]).margin(1e-12));
        }

        if (n_total == 0.0) {
            REQUIRE(r.all_zero);
            for (size_t i = 0; i < n_cands; ++i) {
                REQUIRE(r.ranked[i].first == cands.candidates[i].first);
                REQUIRE(r.ranked[i].second == 0.0);
            }
            continue;
        }

        REQUIRE_FALSE(r.all_zero);
        std::map<std::string, double> expected_score;
        for (size_t i = 0; i < n_cands; ++i) {
            if (n_oracle[i] == 0.0) {
                expected_score[cands.candidates[i].first] = -std::numeric_limits<double>::infinity();
            } else {
                expected_score[cands.candidates[i].first] =
                    (n_oracle[i] / n_total) *
                    std::log(static_cast<double>(clicked.size()) / (g_oracle[i] + 1.0));
            }
        }
        REQUIRE(r.ranked.size() == n_cands);
        for (size_t i = 0; i < n_cands; ++i) {
            const double want = expected_score.at(r.ranked[i].first);
            if (std::isinf(want)) {
                REQUIRE(std::isinf(r.ranked[i].second));
            } else {
                REQUIRE(r.ranked[i].second == Catch::Approx(want).margin(1e-9));
            }
            if (i > 0) REQUIRE(r.ranked[i - 1].second >= r.ranked[i].second);
        }
    }
}

TEST_CASE("candidates absent from every clicked document sink to the tail in alignment order") {
    DocumentCollection collection;
    collection.add(make_doc("d0", {"seen"}));
    collection.add(make_doc("d1", {"seen", "other"}));

    CandidateSet cands;
    cands.source_word = "w";
    cands.candidates = {{"ghost1", 0.5}, {"seen", 0.3}, {"ghost2", 0.2}};

    const TfidfResult r = score_tfidf(cands, {0, 1}, collection);
    REQUIRE(r.ranked[0].first == "seen");
    REQUIRE(r.ranked[1].first == "ghost1");
    REQUIRE(r.ranked[2].first == "ghost2");
    REQUIRE(std::isinf(r.ranked[1].second));
    REQUIRE(std::isinf(r.ranked[2].second));
}

TEST_CASE("constraint table keeps alignment order for words without clicks") {
    TranslationTable table;
    table.t["clicked"] = {{"c1", 0.5}, {"c2", 0.3}, {"c3", 0.2}};
    table.t["unclicked"] = {{"u1", 0.6}, {"u2", 0.4}};
    table.t[kNullToken] = {{"c1", 1.0}};

    DocumentCollection collection;
    collection.add(make_doc("d0", {"c2", "c2"}));
    collection.add(make_doc("d1", {"c1"}));

    ClickLog log;
    ClickRecord rec;
    rec.qid = "q1";
    rec.query.tokens = {"clicked"};
    rec.clicked = {"d0", "d1"};
    log.push_back(rec);

    const ConstraintTable ct = build_constraint_table(table, log, collection, 10, 50, 0.0);
    REQUIRE(ct.rows.count(kNullToken) == 0);
    REQUIRE(ct.no_click_words == std::set<std::string>{"unclicked"});
    REQUIRE(ct.all_zero_words.empty());

    // c2 occurs twice in one clicked doc, c1 once in one: TF 2/3 vs 1/3, both
    // IDF ln(2/2) = 0, so both score zero and alignment order breaks the tie.
    // c3 never occurs and sinks below them.
    const auto& clicked_row = ct.rows.at("clicked");
    REQUIRE(clicked_row.size() == 3);
    REQUIRE(clicked_row[0].target == "c1");
    REQUIRE(clicked_row[1].target == "c2");
    REQUIRE(clicked_row[2].target == "c3");

    const auto& unclicked_row = ct.rows.at("unclicked");
    REQUIRE(unclicked_row.size() == 2);
    REQUIRE(unclicked_row[0].target == "u1");
    REQUIRE(unclicked_row[0].score == Catch::Approx(0.6));
    REQUIRE(unclicked_row[1].target == "u2");
}

TEST_CASE("constraint table truncates to top_m and honors k_max and p_min") {
    TranslationTable table;
    table.t["w"] = {{"t1", 0.4}, {"t2", 0.3}, {"t3", 0.2}, {"t4", 0.05}, {"t5", 0.05}};

    DocumentCollection collection;
    collection.add(make_doc("d0", {"t3", "t3", "t3", "t2", "t2", "t1"}));
    ClickLog log;
    ClickRecord rec;
    rec.qid = "q";
    rec.query.tokens = {"w"};
    rec.clicked = {"d0"};
    log.push_back(rec);

    // p_min 0.1 drops t4/t5 before re-ranking; top_m 2 keeps the two best
    // re-ranked survivors.
    const ConstraintTable ct = build_constraint_table(table, log, collection, 2, 50, 0.1);
    const auto& row = ct.rows.at("w");
    REQUIRE(row.size() == 2);
    // Single clicked doc containing all three: IDF = ln(1/2) < 0, so the
    // *smallest* TF wins; t1 (one occurrence) first, then t2.
    REQUIRE(row[0].target == "t1");
    REQUIRE(row[1].target == "t2");

    // k_max 1 keeps only the single best alignment candidate.
    const ConstraintTable ct1 = build_constraint_table(table, log, collection, 10, 1, 0.0);
    REQUIRE(ct1.rows.at("w").size() == 1);
    REQUIRE(ct1.rows.at("w")[0].target == "t1");

    REQUIRE_THROWS_AS(build_constraint_table(table, log, collection, 0, 50, 0.0), SchemaError);
}

TEST_CASE("all-zero words are flagged and keep alignment order with zero scores") {
    TranslationTable table;
    table.t["w"] = {{"t1", 0.7}, {"t2", 0.3}};
    DocumentCollection collection;
    collection.add(make_doc("d0", {"unrelated"}));
    ClickLog log;
    ClickRecord rec;
    rec.qid = "q";
    rec.query.tokens = {"w"};
    rec.clicked = {"d0"};
    log.push_back(rec);

    const ConstraintTable ct = build_constraint_table(table, log, collection, 10, 50, 0.0);
    REQUIRE(ct.all_zero_words == std::set<std::string>{"w"});
    const auto& row = ct.rows.at("w");
    REQUIRE(row[0].target == "t1");
    REQUIRE(row[0].score == 0.0);
    REQUIRE(row[1].target == "t2");
}

TEST_CASE("constraint table round-trips through its tsv file") {
    ConstraintTable table;
    table.rows["alpha"] = {{"x", 0.519860385}, {"y", -0.402359478}};
    table.rows["beta"] = {{"z", 0.0}};
    const std::string path = "/tmp/qtc_test_constraints.tsv";
    save_constraint_table(table, path);

    const ConstraintTable loaded = load_constraint_table(path);
    REQUIRE(loaded.rows.size() == 2);
    REQUIRE(loaded.rows.at("alpha").size() == 2);
    REQUIRE(loaded.rows.at("alpha")[0].target == "x");
    REQUIRE(loaded.rows.at("alpha")[0].score == Catch::Approx(0.519860385).margin(1e-9));
    REQUIRE(loaded.rows.at("alpha")[1].score == Catch::Approx(-0.402359478).margin(1e-9));
    REQUIRE(loaded.rows.at("beta")[0].target == "z");

    // Saving what we loaded must reproduce the file byte for byte.
    const std::string path2 = "/tmp/qtc_test_constraints2.tsv";
    save_constraint_table(loaded, path2);
    REQUIRE(read_file(path) == read_file(path2));

    write_file(path, "w\t2\tx\t0.5\n");
    REQUIRE_THROWS_AS(load_constraint_table(path), SchemaError);
    write_file(path, "w\t1\tx\n");
    REQUIRE_THROWS_AS(load_constraint_table(path), SchemaError);
}

TEST_CASE("query masks cover constraint targets plus EOS") {
    ConstraintTable table;
    table.rows["w1"] = {{"apple", 1.0}, {"pear", 0.5}};
    table.rows["w2"] = {{"pear", 0.9}, {"plum", 0.4}};

    Vocabulary vocab;
    const int apple = vocab.add("apple");
    const int pear = vocab.add("pear");
    const int plum = vocab.add("plum");
    vocab.add("noise");

    SECTION("union over query words, deduplicated and sorted") {
        const ConstraintMask mask = query_constraint_mask(table, {"w1", "w2"}, vocab);
        REQUIRE_FALSE(mask.fallback_full);
        REQUIRE(mask.ids == std::vector<int>{Vocabulary::kEos, apple, pear, plum});
        REQUIRE(mask.allows(apple));
        REQUIRE(mask.allows(Vocabulary::kEos));
        REQUIRE_FALSE(mask.allows(vocab.id_of("noise")));
        REQUIRE_FALSE(mask.allows(-1));
        REQUIRE_FALSE(mask.allows(vocab.size()));
    }

    SECTION("words without rows fall back to the full vocabulary") {
        const ConstraintMask mask = query_constraint_mask(table, {"unknown"}, vocab);
        REQUIRE(mask.fallback_full);
        REQUIRE(mask.ids.size() == static_cast<size_t>(vocab.size()));
        REQUIRE(mask.allows(vocab.id_of("noise")));
    }

    SECTION("targets outside the vocabulary are dropped unless UNK is allowed") {
        ConstraintTable oov;
        oov.rows["w"] = {{"not-in-vocab", 1.0}};
        const ConstraintMask dropped = query_constraint_mask(oov, {"w"}, vocab);
        // The only target mapped to UNK and was dropped, leaving no usable
        // ids: the mask falls back to the full vocabulary.
        REQUIRE(dropped.fallback_full);

        const ConstraintMask kept = query_constraint_mask(oov, {"w"}, vocab, /*include_unk=*/true);
        REQUIRE_FALSE(kept.fallback_full);
        REQUIRE(kept.ids == std::vector<int>{Vocabulary::kEos, Vocabulary::kUnk});
    }
}

TEST_CASE("document and click-log loaders validate their records") {
    const std::string docs_path = "/tmp/qtc_test_docs.jsonl";
    write_file(docs_path,
               "{\"id\": \"d1\", \"text\": \"Alpha beta.\"}\n"
               "{\"id\": \"d2\", \"text\": \"Gamma\"}\n");
    const DocumentCollection collection = load_documents(docs_path, "en");
    REQUIRE(collection.size() == 2);
    REQUIRE(collection.at(0).text.tokens == std::vector<std::string>{"alpha", "beta", "."});
    REQUIRE(collection.contains("d2"));
    REQUIRE(collection.index_of("d2") == 1);
    REQUIRE_THROWS_AS(collection.index_of("d3"), SchemaError);

    write_file(docs_path, "{\"id\": \"d1\"}\n");
    REQUIRE_THROWS_AS(load_documents(docs_path, "en"), SchemaError);
    write_file(docs_path, "not json\n");
    REQUIRE_THROWS_AS(load_documents(docs_path, "en"), SchemaError);

    write_file(docs_path, "{\"id\": \"d1\", \"text\": \"x\"}\n{\"id\": \"d1\", \"text\": \"y\"}\n");
    REQUIRE_THROWS_AS(load_documents(docs_path, "en"), SchemaError);

    write_file(docs_path, "{\"id\": \"d1\", \"text\": \"alpha\"}\n");
    const DocumentCollection one = load_documents(docs_path, "en");
    const std::string clicks_path = "/tmp/qtc_test_clicks.jsonl";
    write_file(clicks_path, "{\"qid\": \"q1\", \"query\": \"Alpha\", \"clicked\": [\"d1\", \"d1\"]}\n");
    const ClickLog log = load_click_log(clicks_path, one, "en");
    REQUIRE(log.size() == 1);
    REQUIRE(log[0].query.tokens == std::vector<std::string>{"alpha"});
    REQUIRE(log[0].clicked == std::vector<std::string>{"d1"});  // de-duplicated

    write_file(clicks_path, "{\"qid\": \"q1\", \"query\": \"x\", \"clicked\": [\"nope\"]}\n");
    REQUIRE_THROWS_AS(load_click_log(clicks_path, one, "en"), SchemaError);
}
