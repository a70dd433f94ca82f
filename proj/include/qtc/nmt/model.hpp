#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "qtc/common.hpp"
#include "qtc/rng.hpp"
#include "qtc/vocab.hpp"

namespace qtc {

struct ModelDims {
    int n_layers = 2;
    int d_model = 32;
    int n_heads = 2;
    int d_ff = 64;
    int src_vocab = 0;
    int tgt_vocab = 0;
    int max_len = 32;

    void validate() const {
        if (n_layers < 1) throw SchemaError("model dims: n_layers must be >= 1");
        if (d_model < 2 || d_model % 2 != 0) throw SchemaError("model dims: d_model must be even and >= 2");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw SchemaError("model dims: d_model must be divisible by n_heads");
        if (d_ff < 1) throw SchemaError("model dims: d_ff must be >= 1");
        if (src_vocab < 5 || tgt_vocab < 5)
            throw SchemaError("model dims: vocabularies must include the four specials plus content");
        if (max_len < 2) throw SchemaError("model dims: max_len must be >= 2");
    }
};

// Activation matrix, row-major.
struct Mat {
    size_t rows = 0, cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), d(r * c, 0.0) {}

    double& at(size_t r, size_t c) { return d[r * cols + c]; }
    double at(size_t r, size_t c) const { return d[r * cols + c]; }
    double* row(size_t r) { return d.data() + r * cols; }
    const double* row(size_t r) const { return d.data() + r * cols; }
};

// Named parameter with matching gradient buffer.
struct Tensor {
    std::string name;
    size_t rows = 0, cols = 0;
    std::vector<double> v, g;

    void reset(std::string n, size_t r, size_t c) {
        name = std::move(n);
        rows = r;
        cols = c;
        v.assign(r * c, 0.0);
        g.assign(r * c, 0.0);
    }

    size_t size() const { return v.size(); }
    double& at(size_t r, size_t c) { return v[r * cols + c]; }
    double at(size_t r, size_t c) const { return v[r * cols + c]; }
    const double* row(size_t r) const { return v.data() + r * cols; }
    double* grad_row(size_t r) { return g.data() + r * cols; }
};

struct AttnParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnParams {
    Tensor w1, b1, w2, b2;
};

struct EncLayerParams {
    Tensor ln1g, ln1b;
    AttnParams attn;
    Tensor ln2g, ln2b;
    FfnParams ffn;
};

struct DecLayerParams {
    Tensor ln1g, ln1b;
    AttnParams self;
    Tensor ln2g, ln2b;
    AttnParams cross;
    Tensor ln3g, ln3b;
    FfnParams ffn;
};

inline constexpr double kLayerNormEps = 1e-6;

// Pre-norm encoder/decoder stack. The target embedding doubles as the output
// projection; a separate bias completes the logits. No layer norm is applied
// after the final block, so with all attention and feed-forward weights at
// zero the network is the identity on the embedded input.
struct TransformerParams {
    ModelDims dims;
    Tensor src_emb, tgt_emb, out_bias;
    std::vector<EncLayerParams> enc;
    std::vector<DecLayerParams> dec;

    explicit TransformerParams(const ModelDims& d) : dims(d) {
        dims.validate();
        const size_t D = static_cast<size_t>(dims.d_model);
        const size_t F = static_cast<size_t>(dims.d_ff);
        src_emb.reset("src_emb", static_cast<size_t>(dims.src_vocab), D);
        tgt_emb.reset("tgt_emb", static_cast<size_t>(dims.tgt_vocab), D);
        out_bias.reset("out_bias", 1, static_cast<size_t>(dims.tgt_vocab));

        auto attn_reset = [&](AttnParams& a, const std::string& prefix) {
            a.wq.reset(prefix + ".wq", D, D);
            a.bq.reset(prefix + ".bq", 1, D);
            a.wk.reset(prefix + ".wk", D, D);
            a.bk.reset(prefix + ".bk", 1, D);
            a.wv.reset(prefix + ".wv", D, D);
            a.bv.reset(prefix + ".bv", 1, D);
            a.wo.reset(prefix + ".wo", D, D);
            a.bo.reset(prefix + ".bo", 1, D);
        };
        auto ffn_reset = [&](FfnParams& f, const std::string& prefix) {
            f.w1.reset(prefix + ".w1", D, F);
            f.b1.reset(prefix + ".b1", 1, F);
            f.w2.reset(prefix + ".w2", F, D);
            f.b2.reset(prefix + ".b2", 1, D);
        };

        enc.resize(static_cast<size_t>(dims.n_layers));
        for (int l = 0; l < dims.n_layers; ++l) {
            const std::string p = "enc." + std::to_string(l);
            EncLayerParams& layer = enc[static_cast<size_t>(l)];
            layer.ln1g.reset(p + ".ln1.g", 1, D);
            layer.ln1b.reset(p + ".ln1.b", 1, D);
            attn_reset(layer.attn, p + ".attn");
            layer.ln2g.reset(p + ".ln2.g", 1, D);
            layer.ln2b.reset(p + ".ln2.b", 1, D);
            ffn_reset(layer.ffn, p + ".ffn");
        }
        dec.resize(static_cast<size_t>(dims.n_layers));
        for (int l = 0; l < dims.n_layers; ++l) {
            const std::string p = "dec." + std::to_string(l);
            DecLayerParams& layer = dec[static_cast<size_t>(l)];
            layer.ln1g.reset(p + ".ln1.g", 1, D);
            layer.ln1b.reset(p + ".ln1.b", 1, D);
            attn_reset(layer.self, p + ".self");
            layer.ln2g.reset(p + ".ln2.g", 1, D);
            layer.ln2b.reset(p + ".ln2.b", 1, D);
            attn_reset(layer.cross, p + ".cross");
            layer.ln3g.reset(p + ".ln3.g", 1, D);
            layer.ln3b.reset(p + ".ln3.b", 1, D);
            ffn_reset(layer.ffn, p + ".ffn");
        }
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out{&src_emb, &tgt_emb, &out_bias};
        auto push_attn = [&](AttnParams& a) {
            out.push_back(&a.wq);
            out.push_back(&a.bq);
            out.push_back(&a.wk);
            out.push_back(&a.bk);
            out.push_back(&a.wv);
            out.push_back(&a.bv);
            out.push_back(&a.wo);
            out.push_back(&a.bo);
        };
        auto push_ffn = [&](FfnParams& f) {
            out.push_back(&f.w1);
            out.push_back(&f.b1);
            out.push_back(&f.w2);
            out.push_back(&f.b2);
        };
        for (EncLayerParams& layer : enc) {
            out.push_back(&layer.ln1g);
            out.push_back(&layer.ln1b);
            push_attn(layer.attn);
            out.push_back(&layer.ln2g);
            out.push_back(&layer.ln2b);
            push_ffn(layer.ffn);
        }
        for (DecLayerParams& layer : dec) {
            out.push_back(&layer.ln1g);
            out.push_back(&layer.ln1b);
            push_attn(layer.self);
            out.push_back(&layer.ln2g);
            out.push_back(&layer.ln2b);
            push_attn(layer.cross);
            out.push_back(&layer.ln3g);
            out.push_back(&layer.ln3b);
            push_ffn(layer.ffn);
        }
        return out;
    }

    std::vector<const Tensor*> tensors() const {
        std::vector<Tensor*> mut = const_cast<TransformerParams*>(this)->tensors();
        return {mut.begin(), mut.end()};
    }

    // Weight matrices draw from N(0, std_dev^2); biases start at zero and
    // layer-norm gains at one. Every row vector in the model is one of the
    // latter two, so shape plus the ".ln*.g" suffix classifies everything.
    void init(Rng& rng, double std_dev = 0.02) {
        for (Tensor* t : tensors()) {
            if (t->rows > 1) {
                for (double& x : t->v) x = rng.gaussian(0.0, std_dev);
            } else {
                const bool ln_gain = t->name.ends_with(".g") && t->name.find(".ln") != std::string::npos;
                std::fill(t->v.begin(), t->v.end(), ln_gain ? 1.0 : 0.0);
            }
        }
    }

    void zero_grads() {
        for (Tensor* t : tensors()) std::fill(t->g.begin(), t->g.end(), 0.0);
    }
};

namespace detail {

inline Mat linear(const Mat& x, const Tensor& w, const Tensor& b) {
    Mat y(x.rows, w.cols);
    for (size_t r = 0; r < x.rows; ++r) {
        double* yr = y.row(r);
        for (size_t c = 0; c < w.cols; ++c) yr[c] = b.v[c];
        const double* xr = x.row(r);
        for (size_t k = 0; k < x.cols; ++k) {
            const double xv = xr[k];
            const double* wr = w.row(k);
            for (size_t c = 0; c < w.cols; ++c) yr[c] += xv * wr[c];
        }
    }
    return y;
}

// dx = dy W^T ; dW += x^T dy ; db += column sums of dy.
inline Mat linear_backward(const Mat& x, Tensor& w, Tensor& b, const Mat& dy) {
    Mat dx(x.rows, x.cols);
    for (size_t r = 0; r < x.rows; ++r) {
        const double* dyr = dy.row(r);
        const double* xr = x.row(r);
        double* dxr = dx.row(r);
        for (size_t c = 0; c < dy.cols; ++c) b.g[c] += dyr[c];
        for (size_t k = 0; k < x.cols; ++k) {
            const double* wr = w.row(k);
            double* gwr = w.grad_row(k);
            double acc = 0.0;
            const double xv = xr[k];
            for (size_t c = 0; c < dy.cols; ++c) {
                acc += dyr[c] * wr[c];
                gwr[c] += xv * dyr[c];
            }
            dxr[k] = acc;
        }
    }
    return dx;
}

struct LnCache {
    Mat xhat, out;
    std::vector<double> rstd;
};

inline Mat layer_norm(const Mat& x, const Tensor& gamma, const Tensor& beta, LnCache& cache) {
    const size_t D = x.cols;
    cache.xhat = Mat(x.rows, D);
    cache.out = Mat(x.rows, D);
    cache.rstd.assign(x.rows, 0.0);
    for (size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double mean = 0.0;
        for (size_t c = 0; c < D; ++c) mean += xr[c];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (size_t c = 0; c < D; ++c) {
            const double dv = xr[c] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(D);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.rstd[r] = rstd;
        double* xh = cache.xhat.row(r);
        double* outr = cache.out.row(r);
        for (size_t c = 0; c < D; ++c) {
            xh[c] = (xr[c] - mean) * rstd;
            outr[c] = gamma.v[c] * xh[c] + beta.v[c];
        }
    }
    return cache.out;
}

inline Mat layer_norm_backward(const LnCache& cache, Tensor& gamma, Tensor& beta, const Mat& dy) {
    const size_t D = dy.cols;
    Mat dx(dy.rows, D);
    for (size_t r = 0; r < dy.rows; ++r) {
        const double* dyr = dy.row(r);
        const double* xh = cache.xhat.row(r);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (size_t c = 0; c < D; ++c) {
            const double dxhat = dyr[c] * gamma.v[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[c];
            gamma.g[c] += dyr[c] * xh[c];
            beta.g[c] += dyr[c];
        }
        const double inv_d = 1.0 / static_cast<double>(D);
        double* dxr = dx.row(r);
        for (size_t c = 0; c < D; ++c) {
            const double dxhat = dyr[c] * gamma.v[c];
            dxr[c] = cache.rstd[r] * (dxhat - inv_d * sum_dxhat - xh[c] * inv_d * sum_dxhat_xhat);
        }
    }
    return dx;
}

struct AttnCache {
    Mat q, k, v;              // projected activations
    std::vector<Mat> probs;   // per-head softmax rows; disallowed keys stay 0
    Mat concat;               // heads reassembled, input to the output projection
};

// Scaled dot-product attention over n_heads slices of the model dimension.
// Causality is enforced structurally: for query position i only keys j <= i
// are ever touched, so future positions cannot leak in. key_mask (optional)
// marks source positions that may be attended to.
inline Mat attention(const Mat& q_in, const Mat& kv_in, const AttnParams& p, int n_heads, bool causal,
                     const std::vector<uint8_t>* key_mask, AttnCache& cache) {
    const size_t D = q_in.cols;
    const size_t dh = D / static_cast<size_t>(n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const size_t tq = q_in.rows, tk = kv_in.rows;

    cache.q = linear(q_in, p.wq, p.bq);
    cache.k = linear(kv_in, p.wk, p.bk);
    cache.v = linear(kv_in, p.wv, p.bv);
    cache.probs.assign(static_cast<size_t>(n_heads), Mat(tq, tk));
    cache.concat = Mat(tq, D);

    std::vector<double> scores(tk);
    for (int h = 0; h < n_heads; ++h) {
        const size_t off = static_cast<size_t>(h) * dh;
        Mat& probs = cache.probs[static_cast<size_t>(h)];
        for (size_t i = 0; i < tq; ++i) {
            const size_t limit = causal ? i + 1 : tk;
            const double* qr = cache.q.row(i) + off;
            double max_s = -std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < limit; ++j) {
                if (key_mask && !(*key_mask)[j]) continue;
                const double* kr = cache.k.row(j) + off;
                double s = 0.0;
                for (size_t c = 0; c < dh; ++c) s += qr[c] * kr[c];
                s *= scale;
                scores[j] = s;
                if (s > max_s) max_s = s;
            }
            if (max_s == -std::numeric_limits<double>::infinity()) continue;  // no allowed key
            double z = 0.0;
            double* pr = probs.row(i);
            for (size_t j = 0; j < limit; ++j) {
                if (key_mask && !(*key_mask)[j]) continue;
                pr[j] = std::exp(scores[j] - max_s);
                z += pr[j];
            }
            double* outr = cache.concat.row(i) + off;
            for (size_t j = 0; j < limit; ++j) {
                if (pr[j] == 0.0) continue;
                pr[j] /= z;
                const double* vr = cache.v.row(j) + off;
                for (size_t c = 0; c < dh; ++c) outr[c] += pr[j] * vr[c];
            }
        }
    }
    return linear(cache.concat, p.wo, p.bo);
}

// Returns (dq_in, dkv_in); parameter gradients accumulate into p.
inline std::pair<Mat, Mat> attention_backward(const Mat& q_in, const Mat& kv_in, AttnParams& p, int n_heads,
                                              bool causal, const std::vector<uint8_t>* key_mask,
                                              AttnCache& cache, const Mat& dout) {
    const size_t D = q_in.cols;
    const size_t dh = D / static_cast<size_t>(n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const size_t tq = q_in.rows, tk = kv_in.rows;

    const Mat dconcat = linear_backward(cache.concat, p.wo, p.bo, dout);
    Mat dq(tq, D), dk(tk, D), dv(tk, D);

    std::vector<double> dp(tk), ds(tk);
    for (int h = 0; h < n_heads; ++h) {
        const size_t off = static_cast<size_t>(h) * dh;
        const Mat& probs = cache.probs[static_cast<size_t>(h)];
        for (size_t i = 0; i < tq; ++i) {
            const size_t limit = causal ? i + 1 : tk;
            const double* dc = dconcat.row(i) + off;
            const double* pr = probs.row(i);

            // dv and dp over keys with nonzero probability; p == 0 means the
            // key was disallowed, and its dv and softmax gradients vanish.
            double dot = 0.0;
            for (size_t j = 0; j < limit; ++j) {
                if (pr[j] == 0.0) {
                    dp[j] = 0.0;
                    continue;
                }
                const double* vr = cache.v.row(j) + off;
                double d = 0.0;
                for (size_t c = 0; c < dh; ++c) {
                    d += dc[c] * vr[c];
                    dv.at(j, off + c) += pr[j] * dc[c];
                }
                dp[j] = d;
                dot += d * pr[j];
            }
            // softmax backward, then chain to q and k
            const double* qr = cache.q.row(i) + off;
            for (size_t j = 0; j < limit; ++j) {
                if (pr[j] == 0.0) continue;
                ds[j] = pr[j] * (dp[j] - dot) * scale;
                const double* kr = cache.k.row(j) + off;
                double* dqr = dq.row(i) + off;
                double* dkr = dk.row(j) + off;
                for (size_t c = 0; c < dh; ++c) {
                    dqr[c] += ds[j] * kr[c];
                    dkr[c] += ds[j] * qr[c];
                }
            }
        }
    }

    Mat dq_in = linear_backward(q_in, p.wq, p.bq, dq);
    Mat dkv_in = linear_backward(kv_in, p.wk, p.bk, dk);
    const Mat dkv2 = linear_backward(kv_in, p.wv, p.bv, dv);
    for (size_t idx = 0; idx < dkv_in.d.size(); ++idx) dkv_in.d[idx] += dkv2.d[idx];
    return {std::move(dq_in), std::move(dkv_in)};
}

struct FfnCache {
    Mat pre;  // before the ReLU
    Mat act;  // after it
};

inline Mat ffn(const Mat& x, const FfnParams& p, FfnCache& cache) {
    cache.pre = linear(x, p.w1, p.b1);
    cache.act = cache.pre;
    for (double& v : cache.act.d) v = v > 0.0 ? v : 0.0;
    return linear(cache.act, p.w2, p.b2);
}

inline Mat ffn_backward(const Mat& x, FfnParams& p, FfnCache& cache, const Mat& dout) {
    Mat dact = linear_backward(cache.act, p.w2, p.b2, dout);
    for (size_t i = 0; i < dact.d.size(); ++i)
        if (cache.pre.d[i] <= 0.0) dact.d[i] = 0.0;
    return linear_backward(x, p.w1, p.b1, dact);
}

inline void add_positional_encoding(Mat& x, int d_model) {
    for (size_t pos = 0; pos < x.rows; ++pos) {
        double* r = x.row(pos);
        for (int i = 0; i * 2 < d_model; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, (2.0 * static_cast<double>(i)) / static_cast<double>(d_model));
            r[2 * i] += std::sin(angle);
            r[2 * i + 1] += std::cos(angle);
        }
    }
}

inline Mat embed(const std::vector<int>& ids, const Tensor& emb, int d_model) {
    Mat x(ids.size(), static_cast<size_t>(d_model));
    const double scale = std::sqrt(static_cast<double>(d_model));
    for (size_t t = 0; t < ids.size(); ++t) {
        const int id = ids[t];
        if (id < 0 || static_cast<size_t>(id) >= emb.rows)
            throw SchemaError("token id " + std::to_string(id) + " outside embedding of " +
                              std::to_string(emb.rows));
        const double* er = emb.row(static_cast<size_t>(id));
        double* xr = x.row(t);
        for (int c = 0; c < d_model; ++c) xr[c] = er[c] * scale;
    }
    add_positional_encoding(x, d_model);
    return x;
}

inline void embed_backward(const std::vector<int>& ids, Tensor& emb, int d_model, const Mat& dx) {
    const double scale = std::sqrt(static_cast<double>(d_model));
    for (size_t t = 0; t < ids.size(); ++t) {
        double* gr = emb.grad_row(static_cast<size_t>(ids[t]));
        const double* dr = dx.row(t);
        for (int c = 0; c < d_model; ++c) gr[c] += dr[c] * scale;
    }
}

struct EncLayerCache {
    Mat x_in;
    LnCache ln1;
    AttnCache attn;
    Mat x_mid;
    LnCache ln2;
    FfnCache ffn;
};

struct DecLayerCache {
    Mat x_in;
    LnCache ln1;
    AttnCache self;
    Mat x_mid;
    LnCache ln2;
    AttnCache cross;
    Mat x_mid2;
    LnCache ln3;
    FfnCache ffn;
};

inline void add_into(Mat& acc, const Mat& delta) {
    for (size_t i = 0; i < acc.d.size(); ++i) acc.d[i] += delta.d[i];
}

}  // namespace detail

// Everything the backward pass needs from one (source, target) forward pass.
struct ForwardCache {
    std::vector<int> src_ids, dec_in;
    std::vector<uint8_t> src_mask;  // 1 = attendable source position
    std::vector<detail::EncLayerCache> enc_layers;
    std::vector<detail::DecLayerCache> dec_layers;
    Mat enc_out, dec_out;
};

// Encoder output for a source sentence; PAD positions (if any) are masked out
// of every attention that reads the encoder.
inline Mat encode(const TransformerParams& params, const std::vector<int>& src_ids,
                  ForwardCache* cache = nullptr) {
    Mat x = detail::embed(src_ids, params.src_emb, params.dims.d_model);
    std::vector<uint8_t> mask(src_ids.size(), 1);
    for (size_t i = 0; i < src_ids.size(); ++i)
        if (src_ids[i] == Vocabulary::kPad) mask[i] = 0;
    if (cache) {
        cache->src_ids = src_ids;
        cache->src_mask = mask;
        cache->enc_layers.resize(params.enc.size());
    }

    detail::LnCache ln_tmp;
    detail::AttnCache attn_tmp;
    detail::FfnCache ffn_tmp;
    for (size_t l = 0; l < params.enc.size(); ++l) {
        const EncLayerParams& p = params.enc[l];
        detail::EncLayerCache* c = cache ? &cache->enc_layers[l] : nullptr;
        detail::LnCache& ln1 = c ? c->ln1 : ln_tmp;
        detail::AttnCache& ac = c ? c->attn : attn_tmp;
        detail::LnCache& ln2 = c ? c->ln2 : ln_tmp;
        detail::FfnCache& fc = c ? c->ffn : ffn_tmp;

        if (c) c->x_in = x;
        const Mat normed = detail::layer_norm(x, p.ln1g, p.ln1b, ln1);
        const Mat attn_out = detail::attention(normed, normed, p.attn, params.dims.n_heads,
                                               /*causal=*/false, &mask, ac);
        detail::add_into(x, attn_out);
        if (c) c->x_mid = x;
        const Mat normed2 = detail::layer_norm(x, p.ln2g, p.ln2b, ln2);
        const Mat ffn_out = detail::ffn(normed2, p.ffn, fc);
        detail::add_into(x, ffn_out);
    }
    if (cache) cache->enc_out = x;
    return x;
}

// Decoder stack over a (BOS-prefixed) target prefix; returns the hidden state
// at every position. Self-attention is causal by construction.
inline Mat decode_hidden(const TransformerParams& params, const Mat& enc_out,
                         const std::vector<uint8_t>& src_mask, const std::vector<int>& dec_in,
                         ForwardCache* cache = nullptr) {
    Mat x = detail::embed(dec_in, params.tgt_emb, params.dims.d_model);
    if (cache) {
        cache->dec_in = dec_in;
        cache->dec_layers.resize(params.dec.size());
    }

    detail::LnCache ln_tmp;
    detail::AttnCache attn_tmp;
    detail::FfnCache ffn_tmp;
    for (size_t l = 0; l < params.dec.size(); ++l) {
        const DecLayerParams& p = params.dec[l];
        detail::DecLayerCache* c = cache ? &cache->dec_layers[l] : nullptr;
        detail::LnCache& ln1 = c ? c->ln1 : ln_tmp;
        detail::AttnCache& sc = c ? c->self : attn_tmp;
        detail::LnCache& ln2 = c ? c->ln2 : ln_tmp;
        detail::AttnCache& cc = c ? c->cross : attn_tmp;
        detail::LnCache& ln3 = c ? c->ln3 : ln_tmp;
        detail::FfnCache& fc = c ? c->ffn : ffn_tmp;

        if (c) c->x_in = x;
        const Mat normed = detail::layer_norm(x, p.ln1g, p.ln1b, ln1);
        const Mat self_out =
            detail::attention(normed, normed, p.self, params.dims.n_heads, /*causal=*/true, nullptr, sc);
        detail::add_into(x, self_out);
        if (c) c->x_mid = x;
        const Mat normed2 = detail::layer_norm(x, p.ln2g, p.ln2b, ln2);
        const Mat cross_out = detail::attention(normed2, enc_out, p.cross, params.dims.n_heads,
                                                /*causal=*/false, &src_mask, cc);
        detail::add_into(x, cross_out);
        if (c) c->x_mid2 = x;
        const Mat normed3 = detail::layer_norm(x, p.ln3g, p.ln3b, ln3);
        const Mat ffn_out = detail::ffn(normed3, p.ffn, fc);
        detail::add_into(x, ffn_out);
    }
    if (cache) cache->dec_out = x;
    return x;
}

// Logits via the tied target embedding plus bias: logits = h E^T + b.
inline Mat output_logits(const TransformerParams& params, const Mat& hidden) {
    const size_t V = params.tgt_emb.rows;
    Mat logits(hidden.rows, V);
    for (size_t t = 0; t < hidden.rows; ++t) {
        const double* hr = hidden.row(t);
        double* lr = logits.row(t);
        for (size_t v = 0; v < V; ++v) {
            const double* er = params.tgt_emb.row(v);
            double acc = params.out_bias.v[v];
            for (size_t c = 0; c < hidden.cols; ++c) acc += hr[c] * er[c];
            lr[v] = acc;
        }
    }
    return logits;
}

// Full training-mode forward pass: logits for every target position.
inline Mat forward(const TransformerParams& params, const std::vector<int>& src_ids,
                   const std::vector<int>& dec_in, ForwardCache& cache) {
    if (static_cast<int>(src_ids.size()) > params.dims.max_len ||
        static_cast<int>(dec_in.size()) > params.dims.max_len)
        throw SchemaError("sequence longer than max_len " + std::to_string(params.dims.max_len));
    const Mat enc_out = encode(params, src_ids, &cache);
    const Mat hidden = decode_hidden(params, enc_out, cache.src_mask, dec_in, &cache);
    return output_logits(params, hidden);
}

// Backward from dlogits; parameter gradients accumulate into params.
inline void backward(TransformerParams& params, ForwardCache& cache, const Mat& dlogits) {
    const size_t D = static_cast<size_t>(params.dims.d_model);
    const size_t tq = cache.dec_out.rows;

    // Tied-projection backward: dh = dlogits E, dE += dlogits^T h, db += sums.
    Mat dhidden(tq, D);
    for (size_t t = 0; t < tq; ++t) {
        const double* dlr = dlogits.row(t);
        const double* hr = cache.dec_out.row(t);
        double* dhr = dhidden.row(t);
        for (size_t v = 0; v < params.tgt_emb.rows; ++v) {
            const double dl = dlr[v];
            if (dl == 0.0) continue;
            params.out_bias.g[v] += dl;
            const double* er = params.tgt_emb.row(v);
            double* ger = params.tgt_emb.grad_row(v);
            for (size_t c = 0; c < D; ++c) {
                dhr[c] += dl * er[c];
                ger[c] += dl * hr[c];
            }
        }
    }

    Mat denc(cache.enc_out.rows, D);
    Mat dx = std::move(dhidden);
    for (size_t li = params.dec.size(); li-- > 0;) {
        DecLayerParams& p = params.dec[li];
        detail::DecLayerCache& c = cache.dec_layers[li];

        Mat dffn_in = detail::ffn_backward(c.ln3.out, p.ffn, c.ffn, dx);
        detail::add_into(dx, detail::layer_norm_backward(c.ln3, p.ln3g, p.ln3b, dffn_in));

        auto [dq_cross, dkv_cross] =
            detail::attention_backward(c.ln2.out, cache.enc_out, p.cross, params.dims.n_heads,
                                       /*causal=*/false, &cache.src_mask, c.cross, dx);
        detail::add_into(denc, dkv_cross);
        detail::add_into(dx, detail::layer_norm_backward(c.ln2, p.ln2g, p.ln2b, dq_cross));

        auto [dq_self, dkv_self] = detail::attention_backward(c.ln1.out, c.ln1.out, p.self,
                                                              params.dims.n_heads,
                                                              /*causal=*/true, nullptr, c.self, dx);
        detail::add_into(dq_self, dkv_self);
        detail::add_into(dx, detail::layer_norm_backward(c.ln1, p.ln1g, p.ln1b, dq_self));
    }
    detail::embed_backward(cache.dec_in, params.tgt_emb, params.dims.d_model, dx);

    dx = std::move(denc);
    for (size_t li = params.enc.size(); li-- > 0;) {
        EncLayerParams& p = params.enc[li];
        detail::EncLayerCache& c = cache.enc_layers[li];

        Mat dffn_in = detail::ffn_backward(c.ln2.out, p.ffn, c.ffn, dx);
        detail::add_into(dx, detail::layer_norm_backward(c.ln2, p.ln2g, p.ln2b, dffn_in));

        auto [dq_attn, dkv_attn] =
            detail::attention_backward(c.ln1.out, c.ln1.out, p.attn, params.dims.n_heads,
                                       /*causal=*/false, &cache.src_mask, c.attn, dx);
        detail::add_into(dq_attn, dkv_attn);
        detail::add_into(dx, detail::layer_norm_backward(c.ln1, p.ln1g, p.ln1b, dq_attn));
    }
    detail::embed_backward(cache.src_ids, params.src_emb, params.dims.d_model, dx);
}

// Logits for the next token after a decoder prefix (inference path). Only the
// final position is projected to the vocabulary.
inline std::vector<double> decode_step(const TransformerParams& params, const Mat& enc_out,
                                       const std::vector<uint8_t>& src_mask,
                                       const std::vector<int>& dec_in) {
    const Mat hidden = decode_hidden(params, enc_out, src_mask, dec_in, nullptr);
    const double* hr = hidden.row(hidden.rows - 1);
    std::vector<double> logits(params.tgt_emb.rows);
    for (size_t v = 0; v < params.tgt_emb.rows; ++v) {
        const double* er = params.tgt_emb.row(v);
        double acc = params.out_bias.v[v];
        for (size_t c = 0; c < hidden.cols; ++c) acc += hr[c] * er[c];
        logits[v] = acc;
    }
    return logits;
}

}  // namespace qtc
