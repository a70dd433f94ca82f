#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/mine.hpp"
#include "qtc/nmt/loss.hpp"
#include "qtc/nmt/model.hpp"
#include "qtc/vocab.hpp"

namespace qtc {

// How the per-step distribution treats the constraint mask.
enum class DecodeMode {
    plain,        // ordinary softmax, mask ignored
    constrained,  // renormalized over the mask, everything else impossible
};

inline const char* decode_mode_name(DecodeMode m) {
    switch (m) {
        case DecodeMode::plain: return "plain";
        case DecodeMode::constrained: return "constrained";
    }
    return "?";
}

struct BeamConfig {
    int beam_size = 4;
    int max_len = 32;  // generated tokens, EOS included
    DecodeMode mode = DecodeMode::plain;
};

struct Hypothesis {
    std::vector<int> ids;  // generated tokens; ends with EOS once finished
    double logprob = 0.0;
    double score = -std::numeric_limits<double>::infinity();  // length-normalized
};

// ((5 + |y|) / 6)^0.6 with |y| counting every generated token, EOS included.
inline double length_penalty(size_t length) {
    return std::pow((5.0 + static_cast<double>(length)) / 6.0, 0.6);
}

struct BeamResult {
    Hypothesis best;
    std::vector<Hypothesis> finished;  // every completed hypothesis, best first
};

namespace detail {

inline std::vector<double> step_log_probs(const std::vector<double>& logits, const ConstraintMask* mask,
                                          DecodeMode mode) {
    switch (mode) {
        case DecodeMode::plain:
            return log_softmax(logits);
        case DecodeMode::constrained: {
            if (!mask) throw SchemaError("constrained decoding requires a constraint mask");
            if (mask->fallback_full) return log_softmax(logits);
            std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
            double max_l = -std::numeric_limits<double>::infinity();
            for (int id : mask->ids)
                if (logits[static_cast<size_t>(id)] > max_l) max_l = logits[static_cast<size_t>(id)];
            double z = 0.0;
            for (int id : mask->ids) z += std::exp(logits[static_cast<size_t>(id)] - max_l);
            const double log_z = std::log(z) + max_l;
            for (int id : mask->ids) out[static_cast<size_t>(id)] = logits[static_cast<size_t>(id)] - log_z;
            return out;
        }
    }
    throw SchemaError("unknown decode mode");
}

}  // namespace detail

// Length-normalized beam search. Each step expands every live hypothesis over
// the whole vocabulary, orders expansions by (cumulative log-probability
// descending, beam index ascending, token id ascending) and keeps the top
// beam_size; expansions ending in EOS retire to the finished pool. At step
// max_len only EOS may be generated, so every hypothesis terminates. PAD and
// BOS are never generated. The winner maximizes logprob / length_penalty,
// with shorter-then-lexicographic tie-breaking.
inline BeamResult beam_search(const TransformerParams& params, const std::vector<int>& src_ids,
                              const ConstraintMask* mask, const BeamConfig& cfg) {
    if (cfg.beam_size < 1) throw SchemaError("beam_search: beam_size must be >= 1");
    if (cfg.max_len < 1) throw SchemaError("beam_search: max_len must be >= 1");
    if (cfg.max_len >= params.dims.max_len)
        throw SchemaError("beam_search: max_len must leave room for BOS within the model's max_len");

    ForwardCache enc_cache;
    const Mat enc_out = encode(params, src_ids, &enc_cache);

    std::vector<Hypothesis> live{Hypothesis{}};
    std::vector<Hypothesis> finished;

    struct Expansion {
        double logprob;
        size_t beam_idx;
        int token;
    };

    std::vector<int> dec_in;
    for (int step = 1; step <= cfg.max_len && !live.empty(); ++step) {
        std::vector<Expansion> expansions;
        for (size_t b = 0; b < live.size(); ++b) {
            dec_in.assign(1, Vocabulary::kBos);
            dec_in.insert(dec_in.end(), live[b].ids.begin(), live[b].ids.end());
            const std::vector<double> logits = decode_step(params, enc_out, enc_cache.src_mask, dec_in);
            const std::vector<double> logp = detail::step_log_probs(logits, mask, cfg.mode);

            if (step == cfg.max_len) {
                expansions.push_back({live[b].logprob + logp[Vocabulary::kEos], b, Vocabulary::kEos});
                continue;
            }
            for (size_t v = 0; v < logp.size(); ++v) {
                if (v == Vocabulary::kPad || v == Vocabulary::kBos) continue;
                if (logp[v] == -std::numeric_limits<double>::infinity()) continue;
                expansions.push_back({live[b].logprob + logp[v], b, static_cast<int>(v)});
            }
        }

        std::sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
            if (a.logprob != b.logprob) return a.logprob > b.logprob;
            if (a.beam_idx != b.beam_idx) return a.beam_idx < b.beam_idx;
            return a.token < b.token;
        });
        if (expansions.size() > static_cast<size_t>(cfg.beam_size))
            expansions.resize(static_cast<size_t>(cfg.beam_size));

        std::vector<Hypothesis> next_live;
        for (const Expansion& e : expansions) {
            Hypothesis h = live[e.beam_idx];
            h.ids.push_back(e.token);
            h.logprob = e.logprob;
            if (e.token == Vocabulary::kEos) {
                h.score = h.logprob / length_penalty(h.ids.size());
                finished.push_back(std::move(h));
            } else {
                next_live.push_back(std::move(h));
            }
        }
        live = std::move(next_live);
    }

    std::sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
        return a.ids < b.ids;
    });
    if (finished.empty()) throw SchemaError("beam_search produced no finished hypothesis");

    BeamResult result;
    result.best = finished.front();
    result.finished = std::move(finished);
    return result;
}

// Decoded tokens for one source sentence, EOS stripped.
inline std::vector<std::string> translate(const TransformerParams& params, const Vocabulary& src_vocab,
                                          const Vocabulary& tgt_vocab,
                                          const std::vector<std::string>& src_tokens,
                                          const ConstraintMask* mask, const BeamConfig& cfg) {
    std::vector<int> src_ids = src_vocab.encode(src_tokens);
    src_ids.push_back(Vocabulary::kEos);
    const BeamResult result = beam_search(params, src_ids, mask, cfg);
    std::vector<std::string> out;
    for (int id : result.best.ids)
        if (id != Vocabulary::kEos) out.push_back(tgt_vocab.token(id));
    return out;
}

}  // namespace qtc
