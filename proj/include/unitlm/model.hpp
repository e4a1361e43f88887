#pragma once

// Decoder-only transformer over the unified vocabulary, with the main
// next-token loss, stop-gradient alignment, and the delayed coarse/next-code
// auxiliary heads. Forward and backward are written out by hand; the whole
// stack is templated on the scalar so gradient verification runs in float64
// while training runs in float32.
//
// Conventions: sequences are rows. Every linear layer computes y = x * W + b
// with W shaped (in x out). The alignment projection P is the one exception:
// it is stored (d_model x d_ssl) and applied to feature columns, matching its
// role as a map from feature space into model space.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/distill.hpp"
#include "unitlm/linalg.hpp"
#include "unitlm/rng.hpp"
#include "unitlm/sequence.hpp"

namespace unitlm {

struct ModelConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int max_seq_len = 160;
    int vocab_size = 0;   // from UnifiedVocab::total_size(), multiple of 8
    int n_codes = 0;      // speech block size
    int speech_base = 0;  // first speech token id
    int coarse_k = 16;    // buckets for the coarse head
    int d_ssl = 16;
    double init_std = 0.08;
    bool align_trainable = true;

    void validate() const {
        require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && d_ff >= 1 && max_seq_len >= 1,
                ErrorCode::invalid_argument, "ModelConfig: dimensions must be positive");
        require(d_model % n_heads == 0, ErrorCode::invalid_argument,
                "ModelConfig: d_model must be divisible by n_heads");
        require(vocab_size >= 1 && vocab_size % 8 == 0, ErrorCode::invalid_argument,
                "ModelConfig: vocab_size must be a positive multiple of 8");
        require(n_codes >= 1 && speech_base >= 0 && speech_base + n_codes <= vocab_size,
                ErrorCode::invalid_argument, "ModelConfig: speech block out of range");
        require(coarse_k >= 1 && d_ssl >= 1, ErrorCode::invalid_argument,
                "ModelConfig: head dims must be positive");
    }

    int head_dim() const { return d_model / n_heads; }
};

template <class T>
struct LayerParams {
    Mat<T> ln1_g, ln1_b;
    Mat<T> qkv_w, qkv_b;      // d x 3d, 1 x 3d
    Mat<T> att_out_w, att_out_b;
    Mat<T> ln2_g, ln2_b;
    Mat<T> fc_in_w, fc_in_b;  // d x dff
    Mat<T> fc_out_w, fc_out_b;
};

template <class T>
struct Parameters {
    Mat<T> tok_embed;   // V x d (speech-block rows live at [speech_base, speech_base+n_codes))
    Mat<T> pos_embed;   // max_seq x d
    std::vector<LayerParams<T>> layers;
    Mat<T> final_ln_g, final_ln_b;
    Mat<T> head_w, head_b;      // d x V, 1 x V
    Mat<T> coarse_w, coarse_b;  // d x K
    Mat<T> next_w, next_b;      // d x n_codes
    Mat<T> align_w, align_b;    // d_model x d_ssl, 1 x d_model (the projection P)

    template <class F>
    void for_each_tensor(F&& f) {
        f("tok_embed", tok_embed);
        f("pos_embed", pos_embed);
        for (size_t i = 0; i < layers.size(); ++i) {
            std::string p = "layers." + std::to_string(i) + ".";
            auto& l = layers[i];
            f(p + "ln1_g", l.ln1_g);
            f(p + "ln1_b", l.ln1_b);
            f(p + "qkv_w", l.qkv_w);
            f(p + "qkv_b", l.qkv_b);
            f(p + "att_out_w", l.att_out_w);
            f(p + "att_out_b", l.att_out_b);
            f(p + "ln2_g", l.ln2_g);
            f(p + "ln2_b", l.ln2_b);
            f(p + "fc_in_w", l.fc_in_w);
            f(p + "fc_in_b", l.fc_in_b);
            f(p + "fc_out_w", l.fc_out_w);
            f(p + "fc_out_b", l.fc_out_b);
        }
        f("final_ln_g", final_ln_g);
        f("final_ln_b", final_ln_b);
        f("head_w", head_w);
        f("head_b", head_b);
        f("coarse_w", coarse_w);
        f("coarse_b", coarse_b);
        f("next_w", next_w);
        f("next_b", next_b);
        f("align_w", align_w);
        f("align_b", align_b);
    }

    template <class F>
    void for_each_tensor(F&& f) const {
        const_cast<Parameters*>(this)->for_each_tensor(
            [&](const std::string& name, Mat<T>& m) { f(name, const_cast<const Mat<T>&>(m)); });
    }

    static Parameters shaped(const ModelConfig& c) {
        c.validate();
        Parameters p;
        p.tok_embed.setZero(c.vocab_size, c.d_model);
        p.pos_embed.setZero(c.max_seq_len, c.d_model);
        p.layers.resize(size_t(c.n_layers));
        for (auto& l : p.layers) {
            l.ln1_g.setZero(1, c.d_model);
            l.ln1_b.setZero(1, c.d_model);
            l.qkv_w.setZero(c.d_model, 3 * c.d_model);
            l.qkv_b.setZero(1, 3 * c.d_model);
            l.att_out_w.setZero(c.d_model, c.d_model);
            l.att_out_b.setZero(1, c.d_model);
            l.ln2_g.setZero(1, c.d_model);
            l.ln2_b.setZero(1, c.d_model);
            l.fc_in_w.setZero(c.d_model, c.d_ff);
            l.fc_in_b.setZero(1, c.d_ff);
            l.fc_out_w.setZero(c.d_ff, c.d_model);
            l.fc_out_b.setZero(1, c.d_model);
        }
        p.final_ln_g.setZero(1, c.d_model);
        p.final_ln_b.setZero(1, c.d_model);
        p.head_w.setZero(c.d_model, c.vocab_size);
        p.head_b.setZero(1, c.vocab_size);
        p.coarse_w.setZero(c.d_model, c.coarse_k);
        p.coarse_b.setZero(1, c.coarse_k);
        p.next_w.setZero(c.d_model, c.n_codes);
        p.next_b.setZero(1, c.n_codes);
        p.align_w.setZero(c.d_model, c.d_ssl);
        p.align_b.setZero(1, c.d_model);
        return p;
    }

    void set_zero() {
        for_each_tensor([](const std::string&, Mat<T>& m) { m.setZero(); });
    }

    uint64_t content_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for_each_tensor([&](const std::string& name, const Mat<T>& m) {
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64(m.data(), size_t(m.size()) * sizeof(T), h);
        });
        return h;
    }
};

// Weight init: N(0, init_std^2) for matrices, zero biases, unit LN gains.
// Residual-writing projections are shrunk by 1/sqrt(2 * n_layers). Every
// tensor draws from its own named stream, so init is order-independent.
template <class T>
Parameters<T> init_parameters(const ModelConfig& c, uint64_t seed) {
    Parameters<T> p = Parameters<T>::shaped(c);
    const double residual_scale = 1.0 / std::sqrt(2.0 * double(c.n_layers));
    p.for_each_tensor([&](const std::string& name, Mat<T>& m) {
        bool is_ln_gain = name.find("ln") != std::string::npos && name.size() >= 2 &&
                          name.compare(name.size() - 2, 2, "_g") == 0;
        bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, "_b") == 0 &&
                       name.find("ln") == std::string::npos;
        if (is_ln_gain) {
            m.setConstant(T(1));
            return;
        }
        if (is_bias || (name.find("ln") != std::string::npos)) {
            m.setZero();
            return;
        }
        double std_dev = c.init_std;
        if (name.find("att_out_w") != std::string::npos || name.find("fc_out_w") != std::string::npos)
            std_dev *= residual_scale;
        Rng rng(derive_seed(seed, name));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = T(std_dev * rng.gaussian());
    });
    return p;
}

// ---------------------------------------------------------------------------
// Forward pass with cached activations for backprop.
// ---------------------------------------------------------------------------

template <class T>
struct LayerCache {
    Mat<T> x_in;          // block input
    Mat<T> ln1_out;
    Vec<T> ln1_mean, ln1_rstd;
    Mat<T> qkv;           // T x 3d
    std::vector<Mat<T>> att_probs;  // per head, T x T lower-triangular
    Mat<T> att_concat;    // T x d, heads concatenated, before out proj
    Mat<T> x_mid;         // after attention residual
    Mat<T> ln2_out;
    Vec<T> ln2_mean, ln2_rstd;
    Mat<T> fc_pre;        // T x dff
    Mat<T> fc_act;        // gelu(fc_pre)
};

template <class T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    Mat<T> final_in;
    Vec<T> final_mean, final_rstd;
    std::vector<TokenId> ids;
};

template <class T>
struct ForwardResult {
    Mat<T> logits;  // T x V
    Mat<T> hidden;  // T x d, the post-final-LN states (head input)
};

inline constexpr double kLnEps = 1e-5;

template <class T>
void layer_norm_forward(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, Mat<T>& out,
                        Vec<T>& mean, Vec<T>& rstd) {
    const Eigen::Index Tn = x.rows(), d = x.cols();
    out.resize(Tn, d);
    mean.resize(Tn);
    rstd.resize(Tn);
    for (Eigen::Index t = 0; t < Tn; ++t) {
        T mu = x.row(t).mean();
        T var = (x.row(t).array() - mu).square().sum() / T(d);
        T r = T(1) / std::sqrt(var + T(kLnEps));
        mean(t) = mu;
        rstd(t) = r;
        out.row(t) = (((x.row(t).array() - mu) * r) * gain.row(0).array() + bias.row(0).array()).matrix();
    }
}

// Accumulates dx, d_gain, d_bias given upstream dy.
template <class T>
void layer_norm_backward(const Mat<T>& x, const Mat<T>& gain, const Vec<T>& mean,
                         const Vec<T>& rstd, const Mat<T>& dy, Mat<T>& dx, Mat<T>& d_gain,
                         Mat<T>& d_bias) {
    const Eigen::Index Tn = x.rows(), d = x.cols();
    dx.resize(Tn, d);
    for (Eigen::Index t = 0; t < Tn; ++t) {
        Eigen::Array<T, 1, Eigen::Dynamic> xhat = (x.row(t).array() - mean(t)) * rstd(t);
        Eigen::Array<T, 1, Eigen::Dynamic> dxhat = dy.row(t).array() * gain.row(0).array();
        d_gain.row(0).array() += dy.row(t).array() * xhat;
        d_bias.row(0).array() += dy.row(t).array();
        T m1 = dxhat.sum() / T(d);
        T m2 = (dxhat * xhat).sum() / T(d);
        dx.row(t) = (rstd(t) * (dxhat - m1 - xhat * m2)).matrix();
    }
}

template <class T>
T gelu_scalar(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <class T>
T gelu_grad_scalar(T x) {
    T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
    T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
    return cdf + x * pdf;
}

template <class T>
class Transformer {
public:
    Transformer(const ModelConfig& config) : cfg_(config) { cfg_.validate(); }

    const ModelConfig& config() const { return cfg_; }

    // Causal forward over one sequence. Attention scores, softmax, and value
    // mixing are computed row by row over j <= t only, so logits at t are a
    // function of ids[0..t] alone.
    ForwardResult<T> forward(const Parameters<T>& p, const std::vector<TokenId>& ids,
                             ForwardCache<T>* cache = nullptr) const {
        const int Tn = int(ids.size());
        require(Tn >= 1, ErrorCode::invalid_argument, "forward: empty sequence");
        require(Tn <= cfg_.max_seq_len, ErrorCode::invalid_argument,
                "forward: sequence length " + std::to_string(Tn) + " exceeds max_seq_len " +
                    std::to_string(cfg_.max_seq_len));
        for (TokenId id : ids)
            require(id >= 0 && id < cfg_.vocab_size, ErrorCode::invalid_argument,
                    "forward: token id out of range");

        const int d = cfg_.d_model, H = cfg_.n_heads, hd = cfg_.head_dim();
        const T scale = T(1) / std::sqrt(T(hd));

        Mat<T> x(Tn, d);
        for (int t = 0; t < Tn; ++t)
            x.row(t) = p.tok_embed.row(ids[size_t(t)]) + p.pos_embed.row(t);

        if (cache) {
            cache->layers.assign(size_t(cfg_.n_layers), LayerCache<T>{});
            cache->ids = ids;
        }

        for (int li = 0; li < cfg_.n_layers; ++li) {
            const auto& l = p.layers[size_t(li)];
            LayerCache<T>* lc = cache ? &cache->layers[size_t(li)] : nullptr;
            if (lc) lc->x_in = x;

            Mat<T> ln1;
            Vec<T> mu1, rs1;
            layer_norm_forward(x, l.ln1_g, l.ln1_b, ln1, mu1, rs1);
            Mat<T> qkv = (ln1 * l.qkv_w).rowwise() + l.qkv_b.row(0);

            Mat<T> att_concat(Tn, d);
            std::vector<Mat<T>> probs;
            if (lc) probs.assign(size_t(H), Mat<T>());
            for (int h = 0; h < H; ++h) {
                auto Q = qkv.block(0, h * hd, Tn, hd);
                auto K = qkv.block(0, d + h * hd, Tn, hd);
                auto V = qkv.block(0, 2 * d + h * hd, Tn, hd);
                Mat<T> pmat;
                if (lc) pmat = Mat<T>::Zero(Tn, Tn);
                for (int t = 0; t < Tn; ++t) {
                    // Scores over the causal prefix only.
                    Vec<T> s(t + 1);
                    for (int j = 0; j <= t; ++j) s(j) = Q.row(t).dot(K.row(j)) * scale;
                    T mx = s.maxCoeff();
                    Vec<T> e = (s.array() - mx).exp();
                    T z = e.sum();
                    e /= z;
                    Eigen::Matrix<T, 1, Eigen::Dynamic> out = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(hd);
                    for (int j = 0; j <= t; ++j) out += e(j) * V.row(j);
                    att_concat.block(t, h * hd, 1, hd) = out;
                    if (lc)
                        for (int j = 0; j <= t; ++j) pmat(t, j) = e(j);
                }
                if (lc) probs[size_t(h)] = std::move(pmat);
            }

            Mat<T> att_out = (att_concat * l.att_out_w).rowwise() + l.att_out_b.row(0);
            Mat<T> x_mid = x + att_out;

            Mat<T> ln2;
            Vec<T> mu2, rs2;
            layer_norm_forward(x_mid, l.ln2_g, l.ln2_b, ln2, mu2, rs2);
            Mat<T> fc_pre = (ln2 * l.fc_in_w).rowwise() + l.fc_in_b.row(0);
            Mat<T> fc_act = fc_pre.unaryExpr([](T v) { return gelu_scalar(v); });
            Mat<T> mlp_out = (fc_act * l.fc_out_w).rowwise() + l.fc_out_b.row(0);
            Mat<T> x_next = x_mid + mlp_out;

            if (lc) {
                lc->ln1_out = std::move(ln1);
                lc->ln1_mean = std::move(mu1);
                lc->ln1_rstd = std::move(rs1);
                lc->qkv = std::move(qkv);
                lc->att_probs = std::move(probs);
                lc->att_concat = std::move(att_concat);
                lc->x_mid = std::move(x_mid);
                lc->ln2_out = std::move(ln2);
                lc->ln2_mean = std::move(mu2);
                lc->ln2_rstd = std::move(rs2);
                lc->fc_pre = std::move(fc_pre);
                lc->fc_act = std::move(fc_act);
            }
            x = std::move(x_next);
        }

        ForwardResult<T> res;
        if (cache) cache->final_in = x;
        Vec<T> muF, rsF;
        Mat<T> hidden;
        layer_norm_forward(x, p.final_ln_g, p.final_ln_b, hidden, muF, rsF);
        if (cache) {
            cache->final_mean = std::move(muF);
            cache->final_rstd = std::move(rsF);
        }
        res.logits = (hidden * p.head_w).rowwise() + p.head_b.row(0);
        res.hidden = std::move(hidden);
        return res;
    }

    // Backward from (d_logits, d_hidden_extra) through the stack, adding into
    // `g`. d_hidden_extra carries gradients that hit the post-final-LN hidden
    // states directly (alignment loss, auxiliary heads).
    void backward(const Parameters<T>& p, const ForwardCache<T>& cache, const Mat<T>& d_logits,
                  const Mat<T>& d_hidden_extra, Parameters<T>& g) const {
        const int Tn = int(cache.ids.size());
        const int d = cfg_.d_model, H = cfg_.n_heads, hd = cfg_.head_dim();
        const T scale = T(1) / std::sqrt(T(hd));

        // Head.
        Mat<T> hidden;
        {
            // Recompute hidden from cached final stats (cheap, avoids storing it twice).
            hidden.resize(Tn, d);
            for (int t = 0; t < Tn; ++t) {
                Eigen::Array<T, 1, Eigen::Dynamic> xhat =
                    (cache.final_in.row(t).array() - cache.final_mean(t)) * cache.final_rstd(t);
                hidden.row(t) = (xhat * p.final_ln_g.row(0).array() + p.final_ln_b.row(0).array()).matrix();
            }
        }
        g.head_w.noalias() += hidden.transpose() * d_logits;
        g.head_b.row(0) += d_logits.colwise().sum();
        Mat<T> d_hidden = d_logits * p.head_w.transpose();
        d_hidden += d_hidden_extra;

        Mat<T> dx;
        layer_norm_backward(cache.final_in, p.final_ln_g, cache.final_mean, cache.final_rstd,
                            d_hidden, dx, g.final_ln_g, g.final_ln_b);

        for (int li = cfg_.n_layers - 1; li >= 0; --li) {
            const auto& l = p.layers[size_t(li)];
            const auto& lc = cache.layers[size_t(li)];
            auto& gl = g.layers[size_t(li)];

            // MLP branch: x_next = x_mid + fc_act * W2 + b2.
            Mat<T> d_mlp_out = dx;  // residual passes dx through to x_mid as well
            gl.fc_out_b.row(0) += d_mlp_out.colwise().sum();
            gl.fc_out_w.noalias() += lc.fc_act.transpose() * d_mlp_out;
            Mat<T> d_fc_act = d_mlp_out * l.fc_out_w.transpose();
            Mat<T> d_fc_pre =
                d_fc_act.binaryExpr(lc.fc_pre, [](T dy, T x) { return dy * gelu_grad_scalar(x); });
            gl.fc_in_b.row(0) += d_fc_pre.colwise().sum();
            gl.fc_in_w.noalias() += lc.ln2_out.transpose() * d_fc_pre;
            Mat<T> d_ln2_out = d_fc_pre * l.fc_in_w.transpose();

            Mat<T> d_x_mid;
            layer_norm_backward(lc.x_mid, l.ln2_g, lc.ln2_mean, lc.ln2_rstd, d_ln2_out, d_x_mid,
                                gl.ln2_g, gl.ln2_b);
            d_x_mid += dx;  // residual

            // Attention branch: x_mid = x_in + att_concat * Wo + bo.
            gl.att_out_b.row(0) += d_x_mid.colwise().sum();
            gl.att_out_w.noalias() += lc.att_concat.transpose() * d_x_mid;
            Mat<T> d_att_concat = d_x_mid * l.att_out_w.transpose();

            Mat<T> d_qkv = Mat<T>::Zero(Tn, 3 * d);
            for (int h = 0; h < H; ++h) {
                auto Q = lc.qkv.block(0, h * hd, Tn, hd);
                auto K = lc.qkv.block(0, d + h * hd, Tn, hd);
                auto V = lc.qkv.block(0, 2 * d + h * hd, Tn, hd);
                const Mat<T>& P = lc.att_probs[size_t(h)];
                auto dO = d_att_concat.block(0, h * hd, Tn, hd);
                auto dQ = d_qkv.block(0, h * hd, Tn, hd);
                auto dK = d_qkv.block(0, d + h * hd, Tn, hd);
                auto dV = d_qkv.block(0, 2 * d + h * hd, Tn, hd);
                for (int t = 0; t < Tn; ++t) {
                    // dP over the prefix, then softmax backward on row t.
                    Vec<T> dp(t + 1);
                    for (int j = 0; j <= t; ++j) dp(j) = dO.row(t).dot(V.row(j));
                    T inner = T(0);
                    for (int j = 0; j <= t; ++j) inner += dp(j) * P(t, j);
                    for (int j = 0; j <= t; ++j) {
                        T ds = P(t, j) * (dp(j) - inner) * scale;
                        dQ.row(t) += ds * K.row(j);
                        dK.row(j) += ds * Q.row(t);
                        dV.row(j) += P(t, j) * dO.row(t);
                    }
                }
            }

            gl.qkv_b.row(0) += d_qkv.colwise().sum();
            gl.qkv_w.noalias() += lc.ln1_out.transpose() * d_qkv;
            Mat<T> d_ln1_out = d_qkv * l.qkv_w.transpose();

            Mat<T> d_x_in;
            layer_norm_backward(lc.x_in, l.ln1_g, lc.ln1_mean, lc.ln1_rstd, d_ln1_out, d_x_in,
                                gl.ln1_g, gl.ln1_b);
            dx = d_x_in + d_x_mid;  // residual into the block input
        }

        for (int t = 0; t < Tn; ++t) {
            g.tok_embed.row(cache.ids[size_t(t)]) += dx.row(t);
            g.pos_embed.row(t) += dx.row(t);
        }
    }

private:
    ModelConfig cfg_;
};

}  // namespace unitlm
