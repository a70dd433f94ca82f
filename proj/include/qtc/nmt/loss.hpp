#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/mine.hpp"

namespace qtc {

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
    double max_l = -std::numeric_limits<double>::infinity();
    for (double v : logits)
        if (v > max_l) max_l = v;
    double z = 0.0;
    for (double v : logits) z += std::exp(v - max_l);
    const double log_z = std::log(z) + max_l;
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    std::vector<double> out = log_softmax(logits);
    for (double& v : out) v = std::exp(v);
    return out;
}

// Softmax renormalized over the mask alone: probabilities outside the mask
// are exactly zero. A full-fallback mask reduces to the plain softmax.
inline std::vector<double> constrained_softmax(const std::vector<double>& logits,
                                               const ConstraintMask& mask) {
    if (mask.fallback_full) return softmax(logits);
    if (mask.bitmap.size() != logits.size())
        throw SchemaError("constrained_softmax: mask built for a different vocabulary size");
    std::vector<double> out(logits.size(), 0.0);
    double max_l = -std::numeric_limits<double>::infinity();
    for (int id : mask.ids)
        if (logits[static_cast<size_t>(id)] > max_l) max_l = logits[static_cast<size_t>(id)];
    double z = 0.0;
    for (int id : mask.ids) {
        const double e = std::exp(logits[static_cast<size_t>(id)] - max_l);
        out[static_cast<size_t>(id)] = e;
        z += e;
    }
    for (int id : mask.ids) out[static_cast<size_t>(id)] /= z;
    return out;
}

struct LossResult {
    double loss = 0.0;
    std::vector<double> dlogits;  // gradient of the loss w.r.t. the logits
};

// Cross entropy against a distribution that puts alpha on the gold token and
// spreads 1 - alpha uniformly over the remaining masked candidates:
//
//   loss = -( alpha * log p(gold) + (1-alpha)/M * sum_{v in mask, v != gold} log p(v) )
//
// with M = |mask \ {gold}| and p the full-vocabulary softmax. The gradient is
// p - w where w is that target distribution (it sums to one). A full-fallback
// or gold-only mask degenerates to plain cross entropy, as does alpha = 1.
inline LossResult candidate_smoothed_loss(const std::vector<double>& logits, int gold,
                                          const ConstraintMask& mask, double alpha) {
    if (gold < 0 || static_cast<size_t>(gold) >= logits.size())
        throw SchemaError("candidate_smoothed_loss: gold id outside the vocabulary");
    if (alpha < 0.0 || alpha > 1.0) throw SchemaError("candidate_smoothed_loss: alpha must be in [0,1]");

    const std::vector<double> logp = log_softmax(logits);
    LossResult r;
    r.dlogits.resize(logits.size());

    size_t m_eff = 0;
    if (!mask.fallback_full && alpha < 1.0) {
        for (int id : mask.ids)
            if (id != gold) ++m_eff;
    }

    if (m_eff == 0) {
        r.loss = -logp[static_cast<size_t>(gold)];
        for (size_t i = 0; i < logits.size(); ++i) r.dlogits[i] = std::exp(logp[i]);
        r.dlogits[static_cast<size_t>(gold)] -= 1.0;
        return r;
    }

    const double spread = (1.0 - alpha) / static_cast<double>(m_eff);
    double loss = -alpha * logp[static_cast<size_t>(gold)];
    for (int id : mask.ids)
        if (id != gold) loss -= spread * logp[static_cast<size_t>(id)];
    r.loss = loss;

    for (size_t i = 0; i < logits.size(); ++i) r.dlogits[i] = std::exp(logp[i]);
    r.dlogits[static_cast<size_t>(gold)] -= alpha;
    for (int id : mask.ids)
        if (id != gold) r.dlogits[static_cast<size_t>(id)] -= spread;
    return r;
}

inline LossResult cross_entropy_loss(const std::vector<double>& logits, int gold) {
    ConstraintMask full;
    full.fallback_full = true;
    return candidate_smoothed_loss(logits, gold, full, 1.0);
}

}  // namespace qtc
