#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <unordered_set>
#include <vector>

#include "defemb/error.hpp"
#include "defemb/matrix.hpp"
#include "defemb/rng.hpp"

namespace defemb {

// Toy pre-norm transformer with GELU FFNs, learned positional embeddings and
// hand-written exact gradients. Supports an encoder-only stack (masked-LM
// style) and an encoder-decoder stack (denoising style), optional weight
// tying (the LM head then literally reads the embedding table), an input /
// output projection pair when the embedding width differs from the model
// width, and an optional mimicking head W (h_e × h_s) that maps final hidden
// states into embedding space.

enum class ModelMode : uint8_t { encoder, encoder_decoder };
enum class Precision : uint8_t { f32, f64 };

struct ModelConfig {
    int vocab_size = 0;
    int h_e = 32;      // embedding width
    int h_s = 32;      // model width
    int layers = 2;
    int heads = 2;
    int ffn = 64;
    int max_seq = 128;
    ModelMode mode = ModelMode::encoder;
    bool tie_lm_head = true;
    bool mimic_head = false;
    Precision precision = Precision::f32;

    bool uses_projection() const { return h_e != h_s; }
    void validate() const;
};

template <class S>
struct AttnParams {
    Mat<S> wq, wk, wv, wo;  // each h_s × h_s, rows = output neurons
    Mat<S> bq, bk, bv, bo;  // 1 × h_s
};

template <class S>
struct LayerParams {
    Mat<S> ln1_gain, ln1_bias;
    AttnParams<S> attn;
    // decoder layers only:
    Mat<S> lnx_gain, lnx_bias;
    AttnParams<S> cross;
    Mat<S> ln2_gain, ln2_bias;
    Mat<S> w1, b1;  // ffn × h_s, 1 × ffn
    Mat<S> w2, b2;  // h_s × ffn, 1 × h_s
};

template <class S>
struct Params {
    ModelConfig cfg;
    Mat<S> tok_emb;            // V × h_e
    Mat<S> pos_enc;            // max_seq × h_s
    Mat<S> pos_dec;            // max_seq × h_s (encoder_decoder only)
    Mat<S> in_proj;            // h_s × h_e   (h_e != h_s only)
    Mat<S> out_proj;           // h_e × h_s   (h_e != h_s only)
    std::vector<LayerParams<S>> enc, dec;
    Mat<S> enc_lnf_gain, enc_lnf_bias;
    Mat<S> dec_lnf_gain, dec_lnf_bias;
    Mat<S> lm_head;            // V × h_e (untied only; tied reads tok_emb)
    Mat<S> lm_bias;            // 1 × V
    Mat<S> mimic_w;            // h_e × h_s

    // The LM head weight; with tying this is the embedding table itself.
    Mat<S>& head() { return cfg.tie_lm_head ? tok_emb : lm_head; }
    const Mat<S>& head() const { return cfg.tie_lm_head ? tok_emb : lm_head; }
};

// Visits every trainable tensor in a fixed order with a stable name. The
// order defines optimizer-state layout, init randomness consumption and the
// checkpoint tensor table.
template <class S, class F>
void visit_tensors(Params<S>& p, F&& f) {
    const ModelConfig& c = p.cfg;
    f("tok_emb.weight", p.tok_emb);
    f("pos_enc.weight", p.pos_enc);
    if (c.mode == ModelMode::encoder_decoder) f("pos_dec.weight", p.pos_dec);
    if (c.uses_projection()) {
        f("in_proj.weight", p.in_proj);
        f("out_proj.weight", p.out_proj);
    }
    auto visit_attn = [&](const std::string& prefix, AttnParams<S>& a) {
        f(prefix + ".wq.weight", a.wq);
        f(prefix + ".wq.bias", a.bq);
        f(prefix + ".wk.weight", a.wk);
        f(prefix + ".wk.bias", a.bk);
        f(prefix + ".wv.weight", a.wv);
        f(prefix + ".wv.bias", a.bv);
        f(prefix + ".wo.weight", a.wo);
        f(prefix + ".wo.bias", a.bo);
    };
    auto visit_layer = [&](const std::string& prefix, LayerParams<S>& l, bool cross) {
        f(prefix + ".ln1.gain", l.ln1_gain);
        f(prefix + ".ln1.bias", l.ln1_bias);
        visit_attn(prefix + ".attn", l.attn);
        if (cross) {
            f(prefix + ".lnx.gain", l.lnx_gain);
            f(prefix + ".lnx.bias", l.lnx_bias);
            visit_attn(prefix + ".cross", l.cross);
        }
        f(prefix + ".ln2.gain", l.ln2_gain);
        f(prefix + ".ln2.bias", l.ln2_bias);
        f(prefix + ".ffn.w1.weight", l.w1);
        f(prefix + ".ffn.w1.bias", l.b1);
        f(prefix + ".ffn.w2.weight", l.w2);
        f(prefix + ".ffn.w2.bias", l.b2);
    };
    for (size_t i = 0; i < p.enc.size(); ++i)
        visit_layer("enc." + std::to_string(i), p.enc[i], false);
    f("enc_lnf.gain", p.enc_lnf_gain);
    f("enc_lnf.bias", p.enc_lnf_bias);
    for (size_t i = 0; i < p.dec.size(); ++i)
        visit_layer("dec." + std::to_string(i), p.dec[i], true);
    if (c.mode == ModelMode::encoder_decoder) {
        f("dec_lnf.gain", p.dec_lnf_gain);
        f("dec_lnf.bias", p.dec_lnf_bias);
    }
    if (!c.tie_lm_head) f("lm_head.weight", p.lm_head);
    f("lm_head.bias", p.lm_bias);
    if (c.mimic_head) f("mimic_w.weight", p.mimic_w);
}

template <class S, class F>
void visit_tensors(const Params<S>& p, F&& f) {
    visit_tensors(const_cast<Params<S>&>(p),
                  [&](const std::string& n, Mat<S>& t) { f(n, const_cast<const Mat<S>&>(t)); });
}

inline void ModelConfig::validate() const {
    if (vocab_size <= 0) throw Error::usage("model: vocab_size must be positive");
    if (h_e <= 0 || h_s <= 0 || layers <= 0 || ffn <= 0 || max_seq <= 0)
        throw Error::usage("model: dimensions must be positive");
    if (heads <= 0 || h_s % heads != 0)
        throw Error::usage("model: heads must divide h_s (" + std::to_string(heads) + " vs " +
                           std::to_string(h_s) + ")");
}

namespace detail {

template <class S>
void shape_params(Params<S>& p) {
    const ModelConfig& c = p.cfg;
    const auto he = size_t(c.h_e), hs = size_t(c.h_s), fn = size_t(c.ffn);
    p.tok_emb = Mat<S>(size_t(c.vocab_size), he);
    p.pos_enc = Mat<S>(size_t(c.max_seq), hs);
    if (c.mode == ModelMode::encoder_decoder) p.pos_dec = Mat<S>(size_t(c.max_seq), hs);
    if (c.uses_projection()) {
        p.in_proj = Mat<S>(hs, he);
        p.out_proj = Mat<S>(he, hs);
    }
    auto shape_attn = [&](AttnParams<S>& a) {
        a.wq = Mat<S>(hs, hs);
        a.wk = Mat<S>(hs, hs);
        a.wv = Mat<S>(hs, hs);
        a.wo = Mat<S>(hs, hs);
        a.bq = Mat<S>(1, hs);
        a.bk = Mat<S>(1, hs);
        a.bv = Mat<S>(1, hs);
        a.bo = Mat<S>(1, hs);
    };
    auto shape_layer = [&](LayerParams<S>& l, bool cross) {
        l.ln1_gain = Mat<S>(1, hs);
        l.ln1_bias = Mat<S>(1, hs);
        shape_attn(l.attn);
        if (cross) {
            l.lnx_gain = Mat<S>(1, hs);
            l.lnx_bias = Mat<S>(1, hs);
            shape_attn(l.cross);
        }
        l.ln2_gain = Mat<S>(1, hs);
        l.ln2_bias = Mat<S>(1, hs);
        l.w1 = Mat<S>(fn, hs);
        l.b1 = Mat<S>(1, fn);
        l.w2 = Mat<S>(hs, fn);
        l.b2 = Mat<S>(1, hs);
    };
    p.enc.resize(size_t(c.layers));
    for (auto& l : p.enc) shape_layer(l, false);
    p.enc_lnf_gain = Mat<S>(1, hs);
    p.enc_lnf_bias = Mat<S>(1, hs);
    if (c.mode == ModelMode::encoder_decoder) {
        p.dec.resize(size_t(c.layers));
        for (auto& l : p.dec) shape_layer(l, true);
        p.dec_lnf_gain = Mat<S>(1, hs);
        p.dec_lnf_bias = Mat<S>(1, hs);
    }
    if (!c.tie_lm_head) p.lm_head = Mat<S>(size_t(c.vocab_size), he);
    p.lm_bias = Mat<S>(1, size_t(c.vocab_size));
    if (c.mimic_head) p.mimic_w = Mat<S>(he, hs);
}

inline bool name_is_gain(const std::string& n) {
    return n.size() >= 5 && n.compare(n.size() - 5, 5, ".gain") == 0;
}
inline bool name_is_bias(const std::string& n) {
    return n.size() >= 5 && n.compare(n.size() - 5, 5, ".bias") == 0;
}

}  // namespace detail

// N(0, 0.02²) weights, zero biases, unit layer-norm gains; randomness is
// consumed in visit order, so identical (config, seed) gives identical bytes.
template <class S>
Params<S> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Params<S> p;
    p.cfg = cfg;
    detail::shape_params(p);
    Rng rng(seed);
    visit_tensors(p, [&](const std::string& name, Mat<S>& t) {
        if (detail::name_is_gain(name)) {
            std::fill(t.a.begin(), t.a.end(), S(1));
        } else if (detail::name_is_bias(name)) {
            t.zero();
        } else {
            for (S& x : t.a) x = S(0.02 * rng.normal());
        }
    });
    return p;
}

// gradient holder with the same shapes
template <class S>
Params<S> zero_like(const Params<S>& p) {
    Params<S> g;
    g.cfg = p.cfg;
    detail::shape_params(g);
    return g;
}

// ---------------------------------------------------------------------------
// forward / backward

enum class Objective : uint8_t { cross_entropy, mimic_mse };

template <class S>
struct Example {
    std::vector<int> src;
    std::vector<int> dec_in;                  // encoder_decoder only
    std::vector<size_t> positions;            // state positions read by the head
    std::vector<int> target_ids;              // cross_entropy: aligned with positions
    std::vector<std::vector<S>> target_vecs;  // mimic_mse: aligned with positions
};

namespace detail {

constexpr double kLnEps = 1e-5;

template <class S>
struct LnActs {
    Mat<S> xhat;               // s × h
    std::vector<S> mu, rstd;   // per row
    Mat<S> out;
};

template <class S>
struct LayerActs {
    LnActs<S> ln1;
    Mat<S> q, k, v;  // s × h
    Mat<S> probs;    // (heads*s_q) × s_k
    Mat<S> ctx;      // s × h
    Mat<S> attn_out;
    Mat<S> r1;
    LnActs<S> lnx;   // cross-attn block (decoder)
    Mat<S> xq, xk, xv;
    Mat<S> xprobs;   // (heads*s_q) × s_enc
    Mat<S> xctx;
    Mat<S> cross_out;
    Mat<S> rx;
    LnActs<S> ln2;
    Mat<S> ffn_pre;  // s × ffn
    Mat<S> ffn_act;
    Mat<S> ffn_out;
    Mat<S> r2;       // layer output
};

template <class S>
struct StreamActs {
    Mat<S> emb;   // s × h_e (gathered rows)
    Mat<S> x0;    // s × h_s (after projection + positions)
    std::vector<LayerActs<S>> layers;
    LnActs<S> lnf;
    Mat<S> y;     // final states, s × h_s
};

template <class S>
void layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, LnActs<S>& a) {
    const size_t s = x.rows, h = x.cols;
    a.xhat = Mat<S>(s, h);
    a.out = Mat<S>(s, h);
    a.mu.resize(s);
    a.rstd.resize(s);
    for (size_t i = 0; i < s; ++i) {
        const S* xi = x[i];
        S mu = 0;
        for (size_t j = 0; j < h; ++j) mu += xi[j];
        mu /= S(h);
        S var = 0;
        for (size_t j = 0; j < h; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= S(h);
        const S rstd = S(1) / std::sqrt(var + S(kLnEps));
        a.mu[i] = mu;
        a.rstd[i] = rstd;
        for (size_t j = 0; j < h; ++j) {
            const S xh = (xi[j] - mu) * rstd;
            a.xhat[i][j] = xh;
            a.out[i][j] = gain[0][j] * xh + bias[0][j];
        }
    }
}

template <class S>
void layer_norm_backward(const LnActs<S>& a, const Mat<S>& gain, const Mat<S>& dout, Mat<S>& dx,
                         Mat<S>& dgain, Mat<S>& dbias) {
    const size_t s = a.xhat.rows, h = a.xhat.cols;
    for (size_t i = 0; i < s; ++i) {
        S mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (size_t j = 0; j < h; ++j) {
            const S dxh = dout[i][j] * gain[0][j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * a.xhat[i][j];
            dgain[0][j] += dout[i][j] * a.xhat[i][j];
            dbias[0][j] += dout[i][j];
        }
        mean_dxhat /= S(h);
        mean_dxhat_xhat /= S(h);
        for (size_t j = 0; j < h; ++j) {
            const S dxh = dout[i][j] * gain[0][j];
            dx[i][j] += a.rstd[i] * (dxh - mean_dxhat - a.xhat[i][j] * mean_dxhat_xhat);
        }
    }
}

// y = x·Wᵀ + b
template <class S>
void linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b, Mat<S>& y) {
    y = Mat<S>(x.rows, w.rows);
    matmul_nt(x, w, y);
    for (size_t i = 0; i < y.rows; ++i)
        for (size_t j = 0; j < y.cols; ++j) y[i][j] += b[0][j];
}

template <class S>
void linear_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>& dx, Mat<S>& dw,
                     Mat<S>& db) {
    matmul_nn(dy, w, dx, /*accumulate=*/true);
    matmul_tn(dy, x, dw, /*accumulate=*/true);
    for (size_t i = 0; i < dy.rows; ++i)
        for (size_t j = 0; j < dy.cols; ++j) db[0][j] += dy[i][j];
}

template <class S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(std::numbers::sqrt2 / 2.0)));
}

template <class S>
S gelu_grad(S x) {
    const S cdf = S(0.5) * (S(1) + std::erf(x * S(std::numbers::sqrt2 / 2.0)));
    const S pdf = std::exp(S(-0.5) * x * x) * S(1.0 / std::sqrt(2.0 * std::numbers::pi));
    return cdf + x * pdf;
}

// multi-head attention: q from `qin`, k/v from `kvin`; causal masks future
// positions of the query's own stream (requires s_q == s_k)
template <class S>
void attention(const AttnParams<S>& ap, const Mat<S>& qin, const Mat<S>& kvin, int heads,
               bool causal, Mat<S>& q, Mat<S>& k, Mat<S>& v, Mat<S>& probs, Mat<S>& ctx,
               Mat<S>& out) {
    const size_t h = qin.cols, sq = qin.rows, sk = kvin.rows;
    const size_t dh = h / size_t(heads);
    const S scale = S(1) / std::sqrt(S(dh));
    linear(qin, ap.wq, ap.bq, q);
    linear(kvin, ap.wk, ap.bk, k);
    linear(kvin, ap.wv, ap.bv, v);
    probs = Mat<S>(size_t(heads) * sq, sk);
    ctx = Mat<S>(sq, h);
    std::vector<S> scores(sk);
    for (int a = 0; a < heads; ++a) {
        const size_t off = size_t(a) * dh;
        for (size_t i = 0; i < sq; ++i) {
            const size_t limit = causal ? i + 1 : sk;
            S mx = -std::numeric_limits<S>::infinity();
            for (size_t j = 0; j < limit; ++j) {
                S s = 0;
                for (size_t t = 0; t < dh; ++t) s += q[i][off + t] * k[j][off + t];
                s *= scale;
                scores[j] = s;
                mx = std::max(mx, s);
            }
            S denom = 0;
            for (size_t j = 0; j < limit; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                denom += scores[j];
            }
            S* prow = probs[size_t(a) * sq + i];
            for (size_t j = 0; j < sk; ++j) prow[j] = (j < limit) ? scores[j] / denom : S(0);
            for (size_t t = 0; t < dh; ++t) {
                S acc = 0;
                for (size_t j = 0; j < limit; ++j) acc += prow[j] * v[j][off + t];
                ctx[i][off + t] = acc;
            }
        }
    }
    linear(ctx, ap.wo, ap.bo, out);
}

template <class S>
void attention_backward(const AttnParams<S>& ap, AttnParams<S>& g, const Mat<S>& qin,
                        const Mat<S>& kvin, int heads, bool causal, const Mat<S>& q,
                        const Mat<S>& k, const Mat<S>& v, const Mat<S>& probs, const Mat<S>& ctx,
                        const Mat<S>& dout, Mat<S>& dqin, Mat<S>& dkvin) {
    const size_t h = qin.cols, sq = qin.rows, sk = kvin.rows;
    const size_t dh = h / size_t(heads);
    const S scale = S(1) / std::sqrt(S(dh));

    Mat<S> dctx(sq, h);
    linear_backward(ctx, ap.wo, dout, dctx, g.wo, g.bo);

    Mat<S> dq(sq, h), dk(sk, h), dv(sk, h);
    std::vector<S> dprob(sk), dscore(sk);
    for (int a = 0; a < heads; ++a) {
        const size_t off = size_t(a) * dh;
        for (size_t i = 0; i < sq; ++i) {
            const size_t limit = causal ? i + 1 : sk;
            const S* prow = probs[size_t(a) * sq + i];
            // dprobs = dctx · Vᵀ ; dV += probsᵀ · dctx
            for (size_t j = 0; j < limit; ++j) {
                S s = 0;
                for (size_t t = 0; t < dh; ++t) s += dctx[i][off + t] * v[j][off + t];
                dprob[j] = s;
                for (size_t t = 0; t < dh; ++t) dv[j][off + t] += prow[j] * dctx[i][off + t];
            }
            S dot = 0;
            for (size_t j = 0; j < limit; ++j) dot += dprob[j] * prow[j];
            for (size_t j = 0; j < limit; ++j) dscore[j] = (dprob[j] - dot) * prow[j];
            for (size_t j = 0; j < limit; ++j) {
                const S ds = dscore[j] * scale;
                for (size_t t = 0; t < dh; ++t) {
                    dq[i][off + t] += ds * k[j][off + t];
                    dk[j][off + t] += ds * q[i][off + t];
                }
            }
        }
    }
    linear_backward(qin, ap.wq, dq, dqin, g.wq, g.bq);
    linear_backward(kvin, ap.wk, dk, dkvin, g.wk, g.bk);
    linear_backward(kvin, ap.wv, dv, dkvin, g.wv, g.bv);
}

template <class S>
void ffn_forward(const LayerParams<S>& l, const Mat<S>& x, LayerActs<S>& a) {
    linear(x, l.w1, l.b1, a.ffn_pre);
    a.ffn_act = Mat<S>(a.ffn_pre.rows, a.ffn_pre.cols);
    for (size_t i = 0; i < a.ffn_pre.size(); ++i) a.ffn_act.a[i] = gelu(a.ffn_pre.a[i]);
    linear(a.ffn_act, l.w2, l.b2, a.ffn_out);
}

// embeds ids, applies the input projection and positional rows
template <class S>
void embed_stream(const Params<S>& p, const std::vector<int>& ids, const Mat<S>& pos,
                  StreamActs<S>& acts) {
    const ModelConfig& c = p.cfg;
    const size_t s = ids.size();
    if (s == 0) throw Error::runtime("model: empty input sequence");
    if (s > size_t(c.max_seq))
        throw Error::runtime("model: sequence length " + std::to_string(s) +
                             " exceeds positional table " + std::to_string(c.max_seq));
    acts.emb = Mat<S>(s, size_t(c.h_e));
    for (size_t i = 0; i < s; ++i) {
        if (ids[i] < 0 || ids[i] >= c.vocab_size)
            throw Error::runtime("model: token id " + std::to_string(ids[i]) +
                                 " out of range at position " + std::to_string(i));
        std::memcpy(acts.emb[i], p.tok_emb[size_t(ids[i])], sizeof(S) * size_t(c.h_e));
    }
    if (c.uses_projection()) {
        acts.x0 = Mat<S>(s, size_t(c.h_s));
        matmul_nt(acts.emb, p.in_proj, acts.x0);
    } else {
        acts.x0 = acts.emb;
    }
    for (size_t i = 0; i < s; ++i)
        for (size_t j = 0; j < size_t(c.h_s); ++j) acts.x0[i][j] += pos[i][j];
}

// one pre-norm transformer layer; enc_out non-null enables the cross block
template <class S>
void layer_forward(const LayerParams<S>& l, int heads, bool causal, const Mat<S>& x,
                   const Mat<S>* enc_out, LayerActs<S>& a) {
    layer_norm(x, l.ln1_gain, l.ln1_bias, a.ln1);
    attention(l.attn, a.ln1.out, a.ln1.out, heads, causal, a.q, a.k, a.v, a.probs, a.ctx,
              a.attn_out);
    a.r1 = Mat<S>(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) a.r1.a[i] = x.a[i] + a.attn_out.a[i];

    const Mat<S>* ffn_in = &a.r1;
    if (enc_out != nullptr) {
        layer_norm(a.r1, l.lnx_gain, l.lnx_bias, a.lnx);
        attention(l.cross, a.lnx.out, *enc_out, heads, false, a.xq, a.xk, a.xv, a.xprobs, a.xctx,
                  a.cross_out);
        a.rx = Mat<S>(a.r1.rows, a.r1.cols);
        for (size_t i = 0; i < a.r1.size(); ++i) a.rx.a[i] = a.r1.a[i] + a.cross_out.a[i];
        ffn_in = &a.rx;
    }
    layer_norm(*ffn_in, l.ln2_gain, l.ln2_bias, a.ln2);
    ffn_forward(l, a.ln2.out, a);
    a.r2 = Mat<S>(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) a.r2.a[i] = (*ffn_in).a[i] + a.ffn_out.a[i];
}

template <class S>
void stream_forward(const Params<S>& p, const std::vector<int>& ids, bool decoder,
                    const Mat<S>* enc_out, StreamActs<S>& acts) {
    const ModelConfig& c = p.cfg;
    embed_stream(p, ids, decoder ? p.pos_dec : p.pos_enc, acts);
    const auto& layers = decoder ? p.dec : p.enc;
    acts.layers.resize(layers.size());
    const Mat<S>* x = &acts.x0;
    for (size_t li = 0; li < layers.size(); ++li) {
        layer_forward(layers[li], c.heads, decoder, *x, decoder ? enc_out : nullptr,
                      acts.layers[li]);
        x = &acts.layers[li].r2;
    }
    layer_norm(*x, decoder ? p.dec_lnf_gain : p.enc_lnf_gain,
               decoder ? p.dec_lnf_bias : p.enc_lnf_bias, acts.lnf);
    acts.y = acts.lnf.out;
}

// backward through one stream: dy is the gradient on acts.y; gradients flow
// into g, and for decoder streams also into denc_out
template <class S>
void stream_backward(const Params<S>& p, Params<S>& g, const std::vector<int>& ids, bool decoder,
                     const Mat<S>* enc_out, Mat<S>* denc_out, const StreamActs<S>& acts,
                     const Mat<S>& dy) {
    const ModelConfig& c = p.cfg;
    const auto& layers = decoder ? p.dec : p.enc;
    auto& glayers = decoder ? g.dec : g.enc;

    const size_t s = ids.size();
    Mat<S> dx(s, size_t(c.h_s));
    layer_norm_backward(acts.lnf, decoder ? p.dec_lnf_gain : p.enc_lnf_gain, dy, dx,
                        decoder ? g.dec_lnf_gain : g.enc_lnf_gain,
                        decoder ? g.dec_lnf_bias : g.enc_lnf_bias);

    for (size_t li = layers.size(); li-- > 0;) {
        const LayerParams<S>& l = layers[li];
        LayerParams<S>& gl = glayers[li];
        const LayerActs<S>& a = acts.layers[li];
        const bool cross = decoder;

        // r2 = ffn_in + ffn_out
        Mat<S> dffn_in(s, size_t(c.h_s));
        {
            // back through ffn: w2, gelu, w1
            Mat<S> dact(s, size_t(c.ffn));
            linear_backward(a.ffn_act, l.w2, dx, dact, gl.w2, gl.b2);
            Mat<S> dpre(s, size_t(c.ffn));
            for (size_t i = 0; i < dpre.size(); ++i)
                dpre.a[i] = dact.a[i] * gelu_grad(a.ffn_pre.a[i]);
            Mat<S> dln2(s, size_t(c.h_s));
            linear_backward(a.ln2.out, l.w1, dpre, dln2, gl.w1, gl.b1);
            dffn_in = dx;  // residual path
            layer_norm_backward(a.ln2, l.ln2_gain, dln2, dffn_in, gl.ln2_gain, gl.ln2_bias);
        }

        Mat<S> dr1(s, size_t(c.h_s));
        if (cross) {
            // rx = r1 + cross_out
            dr1 = dffn_in;  // residual path
            Mat<S> dlnx_out(s, size_t(c.h_s));
            attention_backward(l.cross, gl.cross, a.lnx.out, *enc_out, c.heads, false, a.xq, a.xk,
                               a.xv, a.xprobs, a.xctx, dffn_in, dlnx_out, *denc_out);
            layer_norm_backward(a.lnx, l.lnx_gain, dlnx_out, dr1, gl.lnx_gain, gl.lnx_bias);
        } else {
            dr1 = dffn_in;
        }

        // r1 = in + attn_out
        Mat<S> din = dr1;  // residual path
        {
            Mat<S> dln1_out(s, size_t(c.h_s));
            attention_backward(l.attn, gl.attn, a.ln1.out, a.ln1.out, c.heads, decoder, a.q, a.k,
                               a.v, a.probs, a.ctx, dr1, dln1_out, dln1_out);
            layer_norm_backward(a.ln1, l.ln1_gain, dln1_out, din, gl.ln1_gain, gl.ln1_bias);
        }
        dx = std::move(din);
    }

    // x0 = emb·(in_projᵀ)? + pos
    Mat<S>& gpos = decoder ? g.pos_dec : g.pos_enc;
    for (size_t i = 0; i < s; ++i)
        for (size_t j = 0; j < size_t(c.h_s); ++j) gpos[i][j] += dx[i][j];
    Mat<S> demb;
    if (c.uses_projection()) {
        demb = Mat<S>(s, size_t(c.h_e));
        matmul_nn(dx, p.in_proj, demb);
        matmul_tn(dx, acts.emb, g.in_proj, /*accumulate=*/true);
    } else {
        demb = dx;
    }
    for (size_t i = 0; i < s; ++i) {
        S* grow = g.tok_emb[size_t(ids[i])];
        for (size_t j = 0; j < size_t(c.h_e); ++j) grow[j] += demb[i][j];
    }
}

}  // namespace detail

// Final hidden states for one example (both streams in encoder_decoder mode).
template <class S>
struct ForwardStates {
    Mat<S> enc;  // s_src × h_s
    Mat<S> dec;  // s_dec × h_s (encoder_decoder only)
    const Mat<S>& read() const { return dec.rows > 0 ? dec : enc; }
};

template <class S>
ForwardStates<S> forward_states(const Params<S>& p, const std::vector<int>& src,
                                const std::vector<int>& dec_in = {}) {
    p.cfg.validate();
    detail::StreamActs<S> enc_acts;
    detail::stream_forward<S>(p, src, false, nullptr, enc_acts);
    ForwardStates<S> out;
    out.enc = enc_acts.y;
    if (p.cfg.mode == ModelMode::encoder_decoder) {
        if (dec_in.empty()) throw Error::runtime("model: encoder_decoder forward needs dec_in");
        detail::StreamActs<S> dec_acts;
        detail::stream_forward(p, dec_in, true, &enc_acts.y, dec_acts);
        out.dec = dec_acts.y;
    } else if (!dec_in.empty()) {
        throw Error::runtime("model: dec_in supplied to an encoder-only model");
    }
    return out;
}

// ẽ = W · s for one final state
template <class S>
std::vector<S> mimic_predict(const Params<S>& p, const S* state) {
    if (!p.cfg.mimic_head) throw Error::runtime("model: mimic head not enabled");
    std::vector<S> e(size_t(p.cfg.h_e), S(0));
    for (int i = 0; i < p.cfg.h_e; ++i) {
        S s = 0;
        for (int j = 0; j < p.cfg.h_s; ++j) s += p.mimic_w[size_t(i)][size_t(j)] * state[size_t(j)];
        e[size_t(i)] = s;
    }
    return e;
}

template <class S>
struct LossResult {
    double loss = 0.0;
    Params<S> grads;
};

// Loss (+ exact gradients) over a batch.
//   cross_entropy: mean CE over all read positions in the batch.
//   mimic_mse:     mean over examples of the per-example mean squared L2
//                  error over its read positions (targets in target_vecs).
template <class S>
LossResult<S> loss_and_grads(const Params<S>& p, const std::vector<Example<S>>& batch,
                             Objective obj, bool compute_grads = true) {
    p.cfg.validate();
    if (batch.empty()) throw Error::usage("loss_and_grads: empty batch");
    const ModelConfig& c = p.cfg;
    const bool enc_dec = c.mode == ModelMode::encoder_decoder;

    size_t total_positions = 0;
    for (const auto& ex : batch) {
        if (ex.positions.empty()) throw Error::runtime("loss_and_grads: example reads no positions");
        if (obj == Objective::cross_entropy && ex.target_ids.size() != ex.positions.size())
            throw Error::runtime("loss_and_grads: target_ids misaligned with positions");
        if (obj == Objective::mimic_mse && ex.target_vecs.size() != ex.positions.size())
            throw Error::runtime("loss_and_grads: target_vecs misaligned with positions");
        total_positions += ex.positions.size();
    }

    LossResult<S> res;
    res.grads = zero_like(p);
    double loss = 0.0;

    const Mat<S>& head_w = p.head();
    Mat<S>& ghead = res.grads.cfg.tie_lm_head ? res.grads.tok_emb : res.grads.lm_head;

    std::vector<double> logits(size_t(c.vocab_size));
    for (const auto& ex : batch) {
        detail::StreamActs<S> enc_acts, dec_acts;
        detail::stream_forward<S>(p, ex.src, false, nullptr, enc_acts);
        if (enc_dec) {
            if (ex.dec_in.empty())
                throw Error::runtime("loss_and_grads: encoder_decoder example lacks dec_in");
            detail::stream_forward(p, ex.dec_in, true, &enc_acts.y, dec_acts);
        }
        const detail::StreamActs<S>& read_acts = enc_dec ? dec_acts : enc_acts;
        const Mat<S>& y = read_acts.y;

        Mat<S> dy(y.rows, y.cols);
        const double w_ce = 1.0 / double(total_positions);
        const double w_mimic = 1.0 / (double(batch.size()) * double(ex.positions.size()));

        for (size_t pi = 0; pi < ex.positions.size(); ++pi) {
            const size_t pos = ex.positions[pi];
            if (pos >= y.rows)
                throw Error::runtime("loss_and_grads: read position " + std::to_string(pos) +
                                     " out of range");
            const S* state = y[pos];

            if (obj == Objective::cross_entropy) {
                // u = out_proj·state when projecting, else the state itself
                std::vector<S> u(size_t(c.h_e));
                if (c.uses_projection()) {
                    for (int i = 0; i < c.h_e; ++i) {
                        S s = 0;
                        for (int j = 0; j < c.h_s; ++j)
                            s += p.out_proj[size_t(i)][size_t(j)] * state[size_t(j)];
                        u[size_t(i)] = s;
                    }
                } else {
                    std::copy(state, state + c.h_s, u.begin());
                }
                double mx = -std::numeric_limits<double>::infinity();
                for (int t = 0; t < c.vocab_size; ++t) {
                    double s = double(p.lm_bias[0][size_t(t)]);
                    const S* hw = head_w[size_t(t)];
                    for (int j = 0; j < c.h_e; ++j) s += double(hw[size_t(j)]) * double(u[size_t(j)]);
                    logits[size_t(t)] = s;
                    mx = std::max(mx, s);
                }
                double denom = 0.0;
                for (int t = 0; t < c.vocab_size; ++t) {
                    logits[size_t(t)] = std::exp(logits[size_t(t)] - mx);
                    denom += logits[size_t(t)];
                }
                const int tgt = ex.target_ids[pi];
                if (tgt < 0 || tgt >= c.vocab_size)
                    throw Error::runtime("loss_and_grads: target id out of range");
                const double p_tgt = logits[size_t(tgt)] / denom;
                loss += -std::log(std::max(p_tgt, 1e-300)) * w_ce;

                if (compute_grads) {
                    std::vector<S> du(size_t(c.h_e), S(0));
                    for (int t = 0; t < c.vocab_size; ++t) {
                        double dl = logits[size_t(t)] / denom;
                        if (t == tgt) dl -= 1.0;
                        dl *= w_ce;
                        res.grads.lm_bias[0][size_t(t)] += S(dl);
                        const S* hw = head_w[size_t(t)];
                        S* ghw = ghead[size_t(t)];
                        for (int j = 0; j < c.h_e; ++j) {
                            du[size_t(j)] += S(dl) * hw[size_t(j)];
                            ghw[size_t(j)] += S(dl) * u[size_t(j)];
                        }
                    }
                    if (c.uses_projection()) {
                        for (int i = 0; i < c.h_e; ++i)
                            for (int j = 0; j < c.h_s; ++j) {
                                res.grads.out_proj[size_t(i)][size_t(j)] +=
                                    du[size_t(i)] * state[size_t(j)];
                                dy[pos][size_t(j)] +=
                                    du[size_t(i)] * p.out_proj[size_t(i)][size_t(j)];
                            }
                    } else {
                        for (int j = 0; j < c.h_s; ++j) dy[pos][size_t(j)] += du[size_t(j)];
                    }
                }
            } else {
                if (!c.mimic_head) throw Error::runtime("loss_and_grads: mimic head not enabled");
                const auto& tgt = ex.target_vecs[pi];
                if (tgt.size() != size_t(c.h_e))
                    throw Error::runtime("loss_and_grads: mimic target width mismatch");
                std::vector<S> pred = mimic_predict(p, state);
                for (int i = 0; i < c.h_e; ++i) {
                    const double diff = double(pred[size_t(i)]) - double(tgt[size_t(i)]);
                    loss += diff * diff * w_mimic;
                    if (compute_grads) {
                        const S dpred = S(2.0 * w_mimic * diff);
                        for (int j = 0; j < c.h_s; ++j) {
                            res.grads.mimic_w[size_t(i)][size_t(j)] += dpred * state[size_t(j)];
                            dy[pos][size_t(j)] += dpred * p.mimic_w[size_t(i)][size_t(j)];
                        }
                    }
                }
            }
        }

        if (compute_grads) {
            if (enc_dec) {
                Mat<S> denc(enc_acts.y.rows, enc_acts.y.cols);
                detail::stream_backward<S>(p, res.grads, ex.dec_in, true, &enc_acts.y, &denc,
                                           dec_acts, dy);
                detail::stream_backward<S>(p, res.grads, ex.src, false, nullptr, nullptr,
                                           enc_acts, denc);
            } else {
                detail::stream_backward<S>(p, res.grads, ex.src, false, nullptr, nullptr,
                                           enc_acts, dy);
            }
        }
    }
    res.loss = loss;
    return res;
}

// ---------------------------------------------------------------------------
// Adam with warmup + inverse-square-root decay.
//
// Convention: lr(t) = base_lr · min(t · warmup^(-1.5), t^(-0.5)), with the
// step counter incremented before the rate is computed (the first step sees
// t = 1, and lr(warmup) = base_lr · warmup^(-0.5)).

struct OptimizerState {
    int64_t t = 0;
    double base_lr = 1e-3;
    int warmup = 100;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::vector<double>> m, v;  // visit order
    std::unordered_set<std::string> frozen;
};

inline double lr_at(double base_lr, int warmup, int64_t t) {
    const double td = double(t);
    const double w = double(warmup);
    return base_lr * std::min(td * std::pow(w, -1.5), 1.0 / std::sqrt(td));
}

template <class S>
OptimizerState init_optimizer(const Params<S>& p, double base_lr, int warmup) {
    if (warmup <= 0) throw Error::usage("optimizer: warmup must be positive");
    OptimizerState st;
    st.base_lr = base_lr;
    st.warmup = warmup;
    visit_tensors(p, [&](const std::string&, const Mat<S>& t) {
        st.m.emplace_back(t.size(), 0.0);
        st.v.emplace_back(t.size(), 0.0);
    });
    return st;
}

template <class S>
double adam_step(Params<S>& p, const Params<S>& grads, OptimizerState& st) {
    ++st.t;
    const double lr = lr_at(st.base_lr, st.warmup, st.t);
    const double bc1 = 1.0 - std::pow(st.beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, double(st.t));

    std::vector<std::pair<std::string, Mat<S>*>> ptensors;
    visit_tensors(p, [&](const std::string& n, Mat<S>& t) { ptensors.emplace_back(n, &t); });
    std::vector<const Mat<S>*> gtensors;
    visit_tensors(grads, [&](const std::string&, const Mat<S>& t) { gtensors.push_back(&t); });
    if (ptensors.size() != gtensors.size() || ptensors.size() != st.m.size())
        throw Error::runtime("adam_step: tensor layout mismatch");

    for (size_t ti = 0; ti < ptensors.size(); ++ti) {
        Mat<S>& t = *ptensors[ti].second;
        const Mat<S>& gt = *gtensors[ti];
        if (t.size() != gt.size() || t.size() != st.m[ti].size())
            throw Error::runtime("adam_step: tensor size mismatch at " + ptensors[ti].first);
        if (st.frozen.count(ptensors[ti].first)) continue;
        auto& m = st.m[ti];
        auto& v = st.v[ti];
        for (size_t i = 0; i < t.size(); ++i) {
            const double gi = double(gt.a[i]);
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t.a[i] = S(double(t.a[i]) - lr * mhat / (std::sqrt(vhat) + st.eps));
        }
    }
    return lr;
}

// ---------------------------------------------------------------------------
// finite-difference gradient check (central differences)

struct GradCheckReport {
    double max_err = 0.0;        // max over coords of the per-coord error
    size_t coords_checked = 0;
    std::string worst_tensor;
    // per-coordinate error |a - n| / max(|a|, |n|, 1e-3): relative at real
    // gradient magnitudes, absolute (scaled by 1e-3) below. The floor keeps
    // the central-difference noise floor (~1e-11 absolute in double) from
    // registering as huge "relative" error on near-zero coordinates.
};

template <class S>
GradCheckReport grad_check(Params<S>& p, const std::vector<Example<S>>& batch, Objective obj,
                           size_t coords, double eps, uint64_t seed) {
    const LossResult<S> base = loss_and_grads(p, batch, obj, /*compute_grads=*/true);

    std::vector<std::pair<std::string, Mat<S>*>> ptensors;
    visit_tensors(p, [&](const std::string& n, Mat<S>& t) { ptensors.emplace_back(n, &t); });
    std::vector<const Mat<S>*> gtensors;
    visit_tensors(base.grads,
                  [&](const std::string&, const Mat<S>& t) { gtensors.push_back(&t); });

    size_t total = 0;
    for (const auto& [n, t] : ptensors) total += t->size();
    if (total == 0) throw Error::runtime("grad_check: model has no parameters");

    Rng rng(seed);
    GradCheckReport rep;
    for (size_t c = 0; c < coords; ++c) {
        const size_t flat = size_t(rng.below(total));
        size_t ti = 0, off = flat;
        while (off >= ptensors[ti].second->size()) {
            off -= ptensors[ti].second->size();
            ++ti;
        }
        Mat<S>& t = *ptensors[ti].second;
        const double analytic = double(gtensors[ti]->a[off]);

        const S saved = t.a[off];
        t.a[off] = S(double(saved) + eps);
        const double lp = loss_and_grads(p, batch, obj, /*compute_grads=*/false).loss;
        t.a[off] = S(double(saved) - eps);
        const double lm = loss_and_grads(p, batch, obj, /*compute_grads=*/false).loss;
        t.a[off] = saved;

        const double numeric = (lp - lm) / (2.0 * eps);
        const double mag = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
        const double err = std::abs(analytic - numeric) / mag;
        if (err > rep.max_err) {
            rep.max_err = err;
            rep.worst_tensor = ptensors[ti].first;
        }
        ++rep.coords_checked;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// checkpoint io (TXF1)

Precision checkpoint_precision(const std::string& path);

template <class S>
void save_checkpoint(const Params<S>& p, const std::string& path);
template <class S>
Params<S> load_checkpoint(const std::string& path);

}  // namespace defemb
