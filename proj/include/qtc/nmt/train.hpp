#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qtc/align.hpp"
#include "qtc/common.hpp"
#include "qtc/mine.hpp"
#include "qtc/nmt/loss.hpp"
#include "qtc/nmt/model.hpp"
#include "qtc/nmt/optim.hpp"
#include "qtc/rng.hpp"
#include "qtc/vocab.hpp"

namespace qtc {

struct TrainConfig {
    int steps = 300;
    int batch_tokens = 256;     // source + decoder-input tokens per batch
    int warmup_steps = 8000;
    double alpha = 0.6;         // gold weight under candidate smoothing
    bool smoothing = false;     // candidate-smoothed loss instead of plain CE
    AdamConfig adam;
    uint64_t seed = 1;
    double init_std = 0.02;
    int checkpoint_every = 0;   // 0: only the hook's final call
};

struct TrainExample {
    std::vector<int> src;     // source ids with trailing EOS
    std::vector<int> dec_in;  // BOS followed by target ids
    std::vector<int> gold;    // target ids with trailing EOS
    int mask_idx = -1;        // into TrainData::masks, -1 for plain CE
};

struct TrainData {
    std::vector<TrainExample> examples;
    std::vector<ConstraintMask> masks;
};

struct TrainResult {
    std::vector<double> loss_history;  // mean per-token loss, one entry per step
};

// Encodes a tokenized bitext; pairs that exceed max_len (after BOS/EOS) are
// skipped and counted. When a constraint table is given, each example carries
// the mask induced by its source words; identical sources share one mask.
inline TrainData prepare_train_data(const Bitext& bitext, const Vocabulary& src_vocab,
                                    const Vocabulary& tgt_vocab, const ConstraintTable* table, int max_len,
                                    size_t* skipped = nullptr) {
    TrainData data;
    std::map<std::string, int> mask_by_source;
    size_t dropped = 0;
    for (const auto& [src, tgt] : bitext) {
        if (static_cast<int>(src.tokens.size()) + 1 > max_len ||
            static_cast<int>(tgt.tokens.size()) + 1 > max_len) {
            ++dropped;
            continue;
        }
        TrainExample ex;
        ex.src = src_vocab.encode(src.tokens);
        ex.src.push_back(Vocabulary::kEos);
        const std::vector<int> tgt_ids = tgt_vocab.encode(tgt.tokens);
        ex.dec_in.push_back(Vocabulary::kBos);
        ex.dec_in.insert(ex.dec_in.end(), tgt_ids.begin(), tgt_ids.end());
        ex.gold = tgt_ids;
        ex.gold.push_back(Vocabulary::kEos);

        if (table) {
            const std::string key = join(src.tokens, " ");
            auto it = mask_by_source.find(key);
            if (it == mask_by_source.end()) {
                data.masks.push_back(query_constraint_mask(*table, src.tokens, tgt_vocab));
                it = mask_by_source.emplace(key, static_cast<int>(data.masks.size()) - 1).first;
            }
            ex.mask_idx = it->second;
        }
        data.examples.push_back(std::move(ex));
    }
    if (skipped) *skipped = dropped;
    if (data.examples.empty()) throw SchemaError("prepare_train_data: no pair fits within max_len");
    return data;
}

// One optimizer step per token-budget batch; batches are drawn from a freshly
// shuffled epoch order whenever the previous epoch is exhausted. The loss is
// the mean over non-PAD gold positions in the batch. A non-finite batch loss
// aborts training.
inline TrainResult train(TransformerParams& params, Rng& rng, const TrainData& data, const TrainConfig& cfg,
                         const std::function<void(int, const TransformerParams&)>& on_checkpoint = {}) {
    if (cfg.steps < 1) throw SchemaError("train: steps must be >= 1");
    if (cfg.batch_tokens < 1) throw SchemaError("train: batch_tokens must be >= 1");
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw SchemaError("train: alpha must be in [0,1]");
    if (data.examples.empty()) throw SchemaError("train: no training examples");

    ConstraintMask full;
    full.fallback_full = true;

    AdamState adam(params);
    TrainResult result;
    std::vector<size_t> order(data.examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    size_t cursor = 0;

    for (int step = 1; step <= cfg.steps; ++step) {
        // Assemble the batch.
        std::vector<size_t> batch;
        int budget = 0;
        while (true) {
            if (cursor >= order.size()) {
                if (!batch.empty()) break;
                rng.shuffle(order);
                cursor = 0;
            }
            const TrainExample& ex = data.examples[order[cursor]];
            const int cost = static_cast<int>(ex.src.size() + ex.dec_in.size());
            if (!batch.empty() && budget + cost > cfg.batch_tokens) break;
            batch.push_back(order[cursor]);
            budget += cost;
            ++cursor;
            if (budget >= cfg.batch_tokens) break;
        }

        size_t total_positions = 0;
        for (size_t idx : batch)
            for (int g : data.examples[idx].gold)
                if (g != Vocabulary::kPad) ++total_positions;

        params.zero_grads();
        double total_loss = 0.0;
        const double scale = 1.0 / static_cast<double>(total_positions);
        std::vector<double> row;
        for (size_t idx : batch) {
            const TrainExample& ex = data.examples[idx];
            const ConstraintMask& mask =
                (cfg.smoothing && ex.mask_idx >= 0) ? data.masks[static_cast<size_t>(ex.mask_idx)] : full;
            const double alpha = (cfg.smoothing && ex.mask_idx >= 0) ? cfg.alpha : 1.0;

            ForwardCache cache;
            const Mat logits = forward(params, ex.src, ex.dec_in, cache);
            Mat dlogits(logits.rows, logits.cols);
            for (size_t t = 0; t < ex.gold.size(); ++t) {
                if (ex.gold[t] == Vocabulary::kPad) continue;
                row.assign(logits.row(t), logits.row(t) + logits.cols);
                LossResult lr = candidate_smoothed_loss(row, ex.gold[t], mask, alpha);
                total_loss += lr.loss;
                double* dr = dlogits.row(t);
                for (size_t v = 0; v < logits.cols; ++v) dr[v] = lr.dlogits[v] * scale;
            }
            backward(params, cache, dlogits);
        }

        const double mean_loss = total_loss * scale;
        if (!std::isfinite(mean_loss))
            throw DivergenceError(step, "batch loss is not finite at step " + std::to_string(step));
        result.loss_history.push_back(mean_loss);

        adam_step(params, adam, lr_schedule(params.dims.d_model, step, cfg.warmup_steps), cfg.adam);

        if (on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
            step != cfg.steps)
            on_checkpoint(step, params);
    }
    if (on_checkpoint) on_checkpoint(cfg.steps, params);
    return result;
}

// Fresh model, seeded initialization, full training run; one RNG stream
// drives both the initialization and the batch order.
inline TransformerParams train_model(const ModelDims& dims, const TrainData& data, const TrainConfig& cfg,
                                     TrainResult* result = nullptr,
                                     const std::function<void(int, const TransformerParams&)>& hook = {}) {
    TransformerParams params(dims);
    Rng rng(cfg.seed);
    params.init(rng, cfg.init_std);
    TrainResult r = train(params, rng, data, cfg, hook);
    if (result) *result = std::move(r);
    return params;
}

}  // namespace qtc
