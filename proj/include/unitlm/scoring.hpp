#pragma once

// Length-normalized sequence likelihood and speech-only sampling.
//
// Scoring: nll_mean = (1/sum m_t) * sum_t m_t * (-ln p(x_t | x_<t)), with the
// preference score being its negation. Trailing masked positions (padding) are
// trimmed before the forward pass; causality then makes the result bit-exact
// under pad extension, not merely close.
//
// Generation: incremental forward with per-layer KV caches. In speech_only
// mode the logits of every id outside the speech block and the terminator are
// forced to -inf before selection, so non-speech ids are unreachable by
// construction; the property is still asserted on every emitted token.

#include <cmath>
#include <limits>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/model.hpp"
#include "unitlm/rng.hpp"
#include "unitlm/sequence.hpp"
#include "unitlm/vocab.hpp"

namespace unitlm {

struct ScoreResult {
    double nll_mean = 0.0;
    double score = 0.0;  // -nll_mean
    long token_count = 0;
    std::vector<double> per_token;  // NLL of each scored position, in order
};

template <class T>
ScoreResult score_sequence(const Transformer<T>& model, const Parameters<T>& params,
                           const MixedSequence& seq, bool keep_per_token = false) {
    seq.check_consistent();
    size_t end = size_t(seq.length());
    while (end > 1 && !seq.loss_mask[end - 1]) --end;

    long count = 0;
    for (size_t t = 1; t < end; ++t)
        if (seq.loss_mask[t]) ++count;
    require(count >= 1, ErrorCode::invalid_argument,
            "score: sequence has no unmasked positions to score");

    std::vector<TokenId> ids(seq.ids.begin(), seq.ids.begin() + long(end));
    ForwardResult<T> fwd = model.forward(params, ids);

    ScoreResult res;
    res.token_count = count;
    double nll_sum = 0.0;
    for (size_t t = 1; t < end; ++t) {
        if (!seq.loss_mask[t]) continue;
        auto row = fwd.logits.row(Eigen::Index(t - 1));
        T mx = row.maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < row.size(); ++j) z += double(std::exp(row(j) - mx));
        double nll = std::log(z) + double(mx) - double(row(seq.ids[t]));
        nll_sum += nll;
        if (keep_per_token) res.per_token.push_back(nll);
    }
    res.nll_mean = nll_sum / double(count);
    res.score = -res.nll_mean;
    require(std::isfinite(res.nll_mean), ErrorCode::non_finite, "score: non-finite likelihood");
    return res;
}

// ---------------------------------------------------------------------------
// Incremental decoding.
// ---------------------------------------------------------------------------

template <class T>
struct KvCache {
    // Per layer: keys and values for every position processed so far.
    std::vector<Mat<T>> k, v;
    int length = 0;

    KvCache(const ModelConfig& c) {
        k.assign(size_t(c.n_layers), Mat<T>::Zero(c.max_seq_len, c.d_model));
        v.assign(size_t(c.n_layers), Mat<T>::Zero(c.max_seq_len, c.d_model));
    }
};

// Processes one token at position cache.length; returns the logits row.
template <class T>
Eigen::Matrix<T, 1, Eigen::Dynamic> forward_step(const Transformer<T>& model,
                                                 const Parameters<T>& p, KvCache<T>& cache,
                                                 TokenId id) {
    const ModelConfig& c = model.config();
    const int pos = cache.length;
    require(pos < c.max_seq_len, ErrorCode::invalid_argument,
            "forward_step: position exceeds max_seq_len");
    require(id >= 0 && id < c.vocab_size, ErrorCode::invalid_argument,
            "forward_step: token id out of range");
    const int d = c.d_model, H = c.n_heads, hd = c.head_dim();
    const T scale = T(1) / std::sqrt(T(hd));

    using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;
    Row x = p.tok_embed.row(id) + p.pos_embed.row(pos);

    auto ln_row = [&](const Row& in, const Mat<T>& gain, const Mat<T>& bias) -> Row {
        T mu = in.mean();
        T var = (in.array() - mu).square().sum() / T(d);
        T r = T(1) / std::sqrt(var + T(kLnEps));
        return (((in.array() - mu) * r) * gain.row(0).array() + bias.row(0).array()).matrix();
    };

    for (int li = 0; li < c.n_layers; ++li) {
        const auto& l = p.layers[size_t(li)];
        Row a = ln_row(x, l.ln1_g, l.ln1_b);
        Row qkv = a * l.qkv_w + l.qkv_b.row(0);
        cache.k[size_t(li)].row(pos) = qkv.segment(d, d);
        cache.v[size_t(li)].row(pos) = qkv.segment(2 * d, d);

        Row att(d);
        for (int h = 0; h < H; ++h) {
            auto q = qkv.segment(h * hd, hd);
            Vec<T> s(pos + 1);
            for (int j = 0; j <= pos; ++j)
                s(j) = q.dot(cache.k[size_t(li)].row(j).segment(h * hd, hd)) * scale;
            T mx = s.maxCoeff();
            Vec<T> e = (s.array() - mx).exp();
            e /= e.sum();
            Row out = Row::Zero(hd);
            for (int j = 0; j <= pos; ++j)
                out += e(j) * cache.v[size_t(li)].row(j).segment(h * hd, hd);
            att.segment(h * hd, hd) = out;
        }
        x += att * l.att_out_w + l.att_out_b.row(0);

        Row m = ln_row(x, l.ln2_g, l.ln2_b);
        Row pre = m * l.fc_in_w + l.fc_in_b.row(0);
        Row act = pre.unaryExpr([](T v) { return gelu_scalar(v); });
        x += act * l.fc_out_w + l.fc_out_b.row(0);
    }
    Row hidden = ln_row(x, p.final_ln_g, p.final_ln_b);
    ++cache.length;
    return hidden * p.head_w + p.head_b.row(0);
}

struct GenerateOptions {
    int max_new_tokens = 64;
    double temperature = 0.0;  // 0 → greedy argmax (ties to the lowest id)
    uint64_t seed = 0;
    bool speech_only = true;
};

struct GenerateResult {
    std::vector<TokenId> tokens;  // newly generated ids (terminator included if hit)
    bool hit_eos = false;
};

template <class T>
GenerateResult generate(const Transformer<T>& model, const Parameters<T>& params,
                        const UnifiedVocab& vocab, const std::vector<TokenId>& prompt,
                        const GenerateOptions& opts) {
    const ModelConfig& c = model.config();
    require(!prompt.empty(), ErrorCode::invalid_argument, "generate: prompt must be non-empty");
    require(opts.max_new_tokens >= 0, ErrorCode::invalid_argument,
            "generate: max_new_tokens must be >= 0");
    require(opts.temperature >= 0, ErrorCode::invalid_argument,
            "generate: temperature must be >= 0");
    require(vocab.total_size() == c.vocab_size && vocab.n_codes() == c.n_codes,
            ErrorCode::invalid_argument, "generate: vocabulary does not match the model");

    std::vector<bool> allowed(size_t(c.vocab_size), true);
    if (opts.speech_only) {
        allowed.assign(size_t(c.vocab_size), false);
        for (int k = 0; k < c.n_codes; ++k) allowed[size_t(vocab.speech_id(k))] = true;
        allowed[size_t(vocab.eos_id())] = true;
    }

    KvCache<T> cache(c);
    Eigen::Matrix<T, 1, Eigen::Dynamic> logits;
    for (TokenId id : prompt) logits = forward_step(model, params, cache, id);

    Rng rng(derive_seed(opts.seed, "generate"));
    GenerateResult res;
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (int n = 0; n < opts.max_new_tokens && cache.length < c.max_seq_len; ++n) {
        Eigen::Matrix<T, 1, Eigen::Dynamic> masked = logits;
        for (int j = 0; j < c.vocab_size; ++j)
            if (!allowed[size_t(j)]) masked(j) = neg_inf;

        TokenId pick = 0;
        if (opts.temperature == 0.0) {
            T best = neg_inf;
            for (int j = 0; j < c.vocab_size; ++j)
                if (masked(j) > best) {
                    best = masked(j);
                    pick = j;
                }
        } else {
            // Stable softmax at the given temperature, then a CDF scan in
            // double so the draw is platform-independent.
            T mx = masked.maxCoeff();
            std::vector<double> probs(size_t(c.vocab_size), 0.0);
            double z = 0.0;
            for (int j = 0; j < c.vocab_size; ++j) {
                if (!allowed[size_t(j)]) continue;
                double e = std::exp(double(masked(j) - mx) / opts.temperature);
                probs[size_t(j)] = e;
                z += e;
            }
            double u = rng.uniform() * z;
            double acc = 0.0;
            pick = -1;
            for (int j = 0; j < c.vocab_size; ++j) {
                if (!allowed[size_t(j)]) continue;
                acc += probs[size_t(j)];
                if (u < acc) {
                    pick = j;
                    break;
                }
            }
            if (pick < 0)
                for (int j = c.vocab_size - 1; j >= 0; --j)
                    if (allowed[size_t(j)]) {
                        pick = j;
                        break;
                    }
        }

        require(!opts.speech_only || allowed[size_t(pick)], ErrorCode::invalid_argument,
                "generate: masking invariant violated");
        res.tokens.push_back(pick);
        if (pick == vocab.eos_id()) {
            res.hit_eos = true;
            break;
        }
        logits = forward_step(model, params, cache, pick);
    }
    return res;
}

}  // namespace unitlm
