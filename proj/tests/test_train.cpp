#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "qtc/nmt/beam.hpp"
#include "qtc/nmt/checkpoint.hpp"
#include "qtc/nmt/train.hpp"
#include "qtc/rng.hpp"

using namespace qtc;

namespace {

TokenSequence seq(const std::vector<std::string>& tokens, const char* lang) {
    TokenSequence s;
    s.lang = lang;
    s.tokens = tokens;
    return s;
}

// Copy task over three symbols, every sequence of length 1..3: the model has
// to learn to echo its input.
Bitext copy_bitext() {
    const std::vector<std::string> syms = {"da", "ne", "ko"};
    Bitext bitext;
    std::vector<std::vector<std::string>> seqs;
    for (const auto& a : syms) seqs.push_back({a});
    for (const auto& a : syms)
        for (const auto& b : syms) seqs.push_back({a, b});
    for (const auto& a : syms)
        for (const auto& b : syms)
            for (const auto& c : syms) seqs.push_back({a, b, c});
    for (const auto& s : seqs) bitext.push_back({seq(s, "src"), seq(s, "tgt")});
    return bitext;
}

ModelDims copy_dims(const Vocabulary& src, const Vocabulary& tgt) {
    ModelDims dims;
    dims.n_layers = 1;
    dims.d_model = 16;
    dims.n_heads = 2;
    dims.d_ff = 32;
    dims.src_vocab = src.size();
    dims.tgt_vocab = tgt.size();
    dims.max_len = 8;
    return dims;
}

}  // namespace

TEST_CASE("training learns a small copy task") {
    const Bitext bitext = copy_bitext();
    std::vector<TokenSequence> src_corpus, tgt_corpus;
    for (const auto& [s, t] : bitext) {
        src_corpus.push_back(s);
        tgt_corpus.push_back(t);
    }
    const Vocabulary src_vocab = build_vocab(src_corpus, 100);
    const Vocabulary tgt_vocab = build_vocab(tgt_corpus, 100);
    const TrainData data = prepare_train_data(bitext, src_vocab, tgt_vocab, nullptr, 8);

    TrainConfig cfg;
    cfg.steps = 800;
    cfg.batch_tokens = 128;
    cfg.warmup_steps = 40;
    cfg.seed = 3;

    TrainResult result;
    const TransformerParams params = train_model(copy_dims(src_vocab, tgt_vocab), data, cfg, &result);

    REQUIRE(result.loss_history.size() == 800);
    REQUIRE(result.loss_history.front() > 1.0);
    REQUIRE(result.loss_history.back() < 0.15);

    BeamConfig bc;
    bc.beam_size = 2;
    bc.max_len = 6;
    size_t exact = 0;
    for (const auto& [s, t] : bitext) {
        const std::vector<std::string> out = translate(params, src_vocab, tgt_vocab, s.tokens, nullptr, bc);
        if (out == t.tokens) ++exact;
    }
    // 39 sequences; allow a stubborn one or two rather than demanding
    // perfection from a short toy run.
    REQUIRE(exact >= bitext.size() - 2);
}

TEST_CASE("training is bit-for-bit deterministic in its seed") {
    const Bitext bitext = copy_bitext();
    std::vector<TokenSequence> corpus;
    for (const auto& [s, t] : bitext) corpus.push_back(s);
    const Vocabulary vocab = build_vocab(corpus, 100);
    const TrainData data = prepare_train_data(bitext, vocab, vocab, nullptr, 8);

    TrainConfig cfg;
    cfg.steps = 15;
    cfg.batch_tokens = 48;
    cfg.warmup_steps = 10;
    cfg.seed = 11;

    TrainResult r1, r2;
    const TransformerParams p1 = train_model(copy_dims(vocab, vocab), data, cfg, &r1);
    const TransformerParams p2 = train_model(copy_dims(vocab, vocab), data, cfg, &r2);

    REQUIRE(r1.loss_history == r2.loss_history);
    const std::vector<const Tensor*> t1 = p1.tensors();
    const std::vector<const Tensor*> t2 = p2.tensors();
    for (size_t i = 0; i < t1.size(); ++i) REQUIRE(t1[i]->v == t2[i]->v);

    // And the serialized artifacts match byte for byte.
    save_checkpoint(p1, "/tmp/qtc_test_det1.bin");
    save_checkpoint(p2, "/tmp/qtc_test_det2.bin");
    REQUIRE(read_file("/tmp/qtc_test_det1.bin") == read_file("/tmp/qtc_test_det2.bin"));

    // A different seed must actually change something.
    cfg.seed = 12;
    const TransformerParams p3 = train_model(copy_dims(vocab, vocab), data, cfg, nullptr);
    REQUIRE(p3.src_emb.v != p1.src_emb.v);
}

TEST_CASE("prepare_train_data encodes, skips overlong pairs, and shares masks") {
    Bitext bitext;
    bitext.push_back({seq({"a", "b"}, "s"), seq({"x"}, "t")});
    bitext.push_back({seq({"a", "b"}, "s"), seq({"y"}, "t")});  // same source as above
    bitext.push_back({seq({"c"}, "s"), seq({"z"}, "t")});
    bitext.push_back({seq({"a", "a", "a", "a", "a"}, "s"), seq({"x"}, "t")});  // too long

    std::vector<TokenSequence> src_corpus, tgt_corpus;
    for (const auto& [s, t] : bitext) {
        src_corpus.push_back(s);
        tgt_corpus.push_back(t);
    }
    const Vocabulary src_vocab = build_vocab(src_corpus, 100);
    const Vocabulary tgt_vocab = build_vocab(tgt_corpus, 100);

    ConstraintTable table;
    table.rows["a"] = {{"x", 1.0}};
    table.rows["c"] = {{"z", 0.5}};

    size_t skipped = 0;
    const TrainData data = prepare_train_data(bitext, src_vocab, tgt_vocab, &table, 4, &skipped);
    REQUIRE(skipped == 1);
    REQUIRE(data.examples.size() == 3);

    const TrainExample& ex = data.examples[0];
    REQUIRE(ex.src.back() == Vocabulary::kEos);
    REQUIRE(ex.dec_in.front() == Vocabulary::kBos);
    REQUIRE(ex.gold.back() == Vocabulary::kEos);
    REQUIRE(ex.dec_in.size() == ex.gold.size());

    // Two distinct sources, two masks; the repeated source reuses its mask.
    REQUIRE(data.masks.size() == 2);
    REQUIRE(data.examples[0].mask_idx == data.examples[1].mask_idx);
    REQUIRE(data.examples[0].mask_idx != data.examples[2].mask_idx);

    // Without a table there are no masks at all.
    const TrainData plain = prepare_train_data(bitext, src_vocab, tgt_vocab, nullptr, 4);
    REQUIRE(plain.masks.empty());
    for (const TrainExample& e : plain.examples) REQUIRE(e.mask_idx == -1);

    // max_len 1 leaves no room for even a single token plus EOS.
    REQUIRE_THROWS_AS(prepare_train_data(bitext, src_vocab, tgt_vocab, nullptr, 1), SchemaError);
}

TEST_CASE("corrupted weights are caught as divergence, not silent NaN") {
    const Bitext bitext = copy_bitext();
    std::vector<TokenSequence> corpus;
    for (const auto& [s, t] : bitext) corpus.push_back(s);
    const Vocabulary vocab = build_vocab(corpus, 100);
    const TrainData data = prepare_train_data(bitext, vocab, vocab, nullptr, 8);

    TransformerParams params(copy_dims(vocab, vocab));
    Rng rng(1);
    params.init(rng, 0.02);
    // Every decoder input starts with BOS, and the decoder residual stream
    // carries its embedding straight through to the logits (encoder-side NaN
    // would be absorbed by cross-attention, whose softmax skips non-finite
    // scores).
    params.tgt_emb.at(static_cast<size_t>(Vocabulary::kBos), 0) =
        std::numeric_limits<double>::quiet_NaN();

    TrainConfig cfg;
    cfg.steps = 50;
    cfg.warmup_steps = 10;
    try {
        train(params, rng, data, cfg);
        FAIL("training accepted non-finite loss");
    } catch (const DivergenceError& e) {
        REQUIRE(e.step() >= 1);
        REQUIRE(e.code() == ExitCode::diverged);
    }
}

TEST_CASE("train validates its configuration") {
    const Bitext bitext = copy_bitext();
    std::vector<TokenSequence> corpus;
    for (const auto& [s, t] : bitext) corpus.push_back(s);
    const Vocabulary vocab = build_vocab(corpus, 100);
    const TrainData data = prepare_train_data(bitext, vocab, vocab, nullptr, 8);

    TrainConfig cfg;
    cfg.steps = 0;
    REQUIRE_THROWS_AS(train_model(copy_dims(vocab, vocab), data, cfg), SchemaError);
    cfg.steps = 1;
    cfg.batch_tokens = 0;
    REQUIRE_THROWS_AS(train_model(copy_dims(vocab, vocab), data, cfg), SchemaError);
    cfg.batch_tokens = 32;
    cfg.alpha = 1.5;
    REQUIRE_THROWS_AS(train_model(copy_dims(vocab, vocab), data, cfg), SchemaError);
    cfg.alpha = 0.6;
    REQUIRE_THROWS_AS(train_model(copy_dims(vocab, vocab), TrainData{}, cfg), SchemaError);
}

TEST_CASE("the checkpoint hook fires on the configured cadence plus the end") {
    const Bitext bitext = copy_bitext();
    std::vector<TokenSequence> corpus;
    for (const auto& [s, t] : bitext) corpus.push_back(s);
    const Vocabulary vocab = build_vocab(corpus, 100);
    const TrainData data = prepare_train_data(bitext, vocab, vocab, nullptr, 8);

    TrainConfig cfg;
    cfg.steps = 5;
    cfg.batch_tokens = 32;
    cfg.warmup_steps = 10;
    cfg.checkpoint_every = 2;

    std::vector<int> fired;
    train_model(copy_dims(vocab, vocab), data, cfg, nullptr,
                [&](int step, const TransformerParams&) { fired.push_back(step); });
    REQUIRE(fired == std::vector<int>{2, 4, 5});

    // checkpoint_every = 0 means only the final call.
    fired.clear();
    cfg.checkpoint_every = 0;
    train_model(copy_dims(vocab, vocab), data, cfg, nullptr,
                [&](int step, const TransformerParams&) { fired.push_back(step); });
    REQUIRE(fired == std::vector<int>{5});
}

TEST_CASE("smoothed training shifts probability onto masked candidates") {
    // One-word task: source "s" maps to gold "g"; the constraint row also
    // carries "c". Under alpha = 0.7 smoothing the trained model should give
    // "c" clearly more probability than a plain-CE model does, while "g"
    // stays the argmax.
    Bitext bitext;
    for (int i = 0; i < 8; ++i) bitext.push_back({seq({"s"}, "src"), seq({"g"}, "tgt")});
    std::vector<TokenSequence> src_corpus, tgt_corpus;
    for (const auto& [s, t] : bitext) {
        src_corpus.push_back(s);
        tgt_corpus.push_back(t);
    }
    const Vocabulary src_vocab = build_vocab(src_corpus, 100);
    Vocabulary tgt_vocab = build_vocab(tgt_corpus, 100);
    tgt_vocab.add("c");

    ConstraintTable table;
    table.rows["s"] = {{"g", 0.5}, {"c", 0.4}};
    const TrainData data = prepare_train_data(bitext, src_vocab, tgt_vocab, &table, 8);

    TrainConfig cfg;
    cfg.steps = 120;
    cfg.batch_tokens = 24;
    cfg.warmup_steps = 20;
    cfg.seed = 5;
    cfg.alpha = 0.7;

    cfg.smoothing = false;
    const TransformerParams plain = train_model(copy_dims(src_vocab, tgt_vocab), data, cfg);
    cfg.smoothing = true;
    const TransformerParams smoothed = train_model(copy_dims(src_vocab, tgt_vocab), data, cfg);

    auto next_token_probs = [&](const TransformerParams& params) {
        ForwardCache cache;
        std::vector<int> src = src_vocab.encode({"s"});
        src.push_back(Vocabulary::kEos);
        const Mat enc_out = encode(params, src, &cache);
        return softmax(decode_step(params, enc_out, cache.src_mask, {Vocabulary::kBos}));
    };

    const std::vector<double> p_plain = next_token_probs(plain);
    const std::vector<double> p_smooth = next_token_probs(smoothed);
    const int g = tgt_vocab.id_of("g"), c = tgt_vocab.id_of("c");

    REQUIRE(p_smooth[static_cast<size_t>(c)] > 4.0 * p_plain[static_cast<size_t>(c)]);
    REQUIRE(p_smooth[static_cast<size_t>(g)] > p_smooth[static_cast<size_t>(c)]);
    // The smoothed optimum puts roughly (1 - alpha) / M = 0.15 on each
    // non-gold candidate; EOS is in the mask alongside "c".
    REQUIRE(p_smooth[static_cast<size_t>(c)] == Catch::Approx(0.15).margin(0.08));
}
