#pragma once

#include <cmath>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/nmt/model.hpp"

namespace qtc {

// Inverse-square-root schedule with linear warmup, scaled by d_model^-0.5;
// step is 1-based.
inline double lr_schedule(int d_model, int step, int warmup_steps) {
    if (step < 1) throw SchemaError("lr_schedule: step is 1-based");
    if (warmup_steps < 1) throw SchemaError("lr_schedule: warmup_steps must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return (1.0 / std::sqrt(static_cast<double>(d_model))) *
           std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

// First/second moment buffers, one pair per tensor in enumeration order.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    long long t = 0;

    explicit AdamState(TransformerParams& params) {
        for (Tensor* tensor : params.tensors()) {
            m.emplace_back(tensor->size(), 0.0);
            v.emplace_back(tensor->size(), 0.0);
        }
    }
};

inline void adam_step(TransformerParams& params, AdamState& state, double lr, const AdamConfig& cfg) {
    std::vector<Tensor*> tensors = params.tensors();
    if (tensors.size() != state.m.size())
        throw SchemaError("adam_step: optimizer state does not match the parameter set");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < tensors.size(); ++i) {
        Tensor& p = *tensors[i];
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (size_t j = 0; j < p.v.size(); ++j) {
            const double g = p.g[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.v[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace qtc
