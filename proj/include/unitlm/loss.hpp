#pragma once

// Training objective: masked next-token cross-entropy over the unified
// vocabulary plus three scaled extras — the hidden/feature alignment penalty
// and the two delayed heads (coarse bucket, exact next code). Each term is a
// mean over its own valid-position count pooled across the batch, so a batch
// of one sequence reproduces the per-sequence definitions exactly.

#include <cmath>
#include <string>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/distill.hpp"
#include "unitlm/model.hpp"
#include "unitlm/sequence.hpp"

namespace unitlm {

struct LossWeights {
    double main = 1.0;
    double ssl = 0.1;
    double coarse = 0.5;
    double next = 0.5;

    void validate() const {
        require(main >= 0 && ssl >= 0 && coarse >= 0 && next >= 0, ErrorCode::invalid_argument,
                "LossWeights: weights must be non-negative");
    }
};

struct LossStats {
    double total = 0.0;
    double main = 0.0;    // mean NLL over predicted positions
    double ssl = 0.0;     // mean squared alignment residual over audio positions
    double coarse = 0.0;  // mean NLL of the coarse head over labeled positions
    double next = 0.0;    // mean NLL of the next-code head over labeled positions
    long main_count = 0;
    long audio_count = 0;
    long coarse_count = 0;
    long next_count = 0;
};

// One training example: the token sequence plus the per-position feature rows
// the alignment term regresses against (zero rows at non-audio positions).
template <class T>
struct LossExample {
    const MixedSequence* seq = nullptr;
    Mat<T> features;  // seq->size() x d_ssl
};

// Gathers stream features into per-position rows following frame_index.
template <class T>
Mat<T> gather_features(const MixedSequence& seq, const MatD& stream_features) {
    Mat<T> out = Mat<T>::Zero(seq.length(), stream_features.cols());
    for (size_t t = 0; t < size_t(seq.length()); ++t) {
        if (seq.modality[t] != Modality::audio) continue;
        int f = seq.frame_index[t];
        require(f >= 0 && f < int(stream_features.rows()), ErrorCode::invalid_argument,
                "gather_features: frame_index out of range");
        out.row(Eigen::Index(t)) = stream_features.row(f).cast<T>();
    }
    return out;
}

namespace detail {

// Stable log-softmax NLL of `target` under a logit row; returns the loss and
// fills `probs` with the softmax (in working precision) for the backward pass.
template <class T, class Row>
double row_nll(const Row& logits, int target, Eigen::Matrix<T, 1, Eigen::Dynamic>& probs) {
    const Eigen::Index n = logits.size();
    T mx = logits.maxCoeff();
    probs = (logits.array() - mx).exp().matrix();
    T z = probs.sum();
    probs /= z;
    double log_z = double(std::log(z)) + double(mx);
    return log_z - double(logits(target));
}

}  // namespace detail

// Full objective over a batch. When `grads` is non-null it must be shaped like
// `params`; gradients are accumulated into it (call set_zero() first for fresh
// gradients). Loss values are accumulated in double regardless of T.
template <class T>
LossStats compute_loss(const Transformer<T>& model, const Parameters<T>& params,
                       const std::vector<LossExample<T>>& batch, const LossWeights& w,
                       Parameters<T>* grads) {
    w.validate();
    require(!batch.empty(), ErrorCode::invalid_argument, "compute_loss: empty batch");
    const ModelConfig& cfg = model.config();

    // Counts first: the per-term normalizers are pooled across the batch and
    // must be known before any gradient row is scaled.
    LossStats st;
    for (const auto& ex : batch) {
        require(ex.seq != nullptr, ErrorCode::invalid_argument, "compute_loss: null sequence");
        ex.seq->check_consistent();
        const MixedSequence& s = *ex.seq;
        require(int(ex.features.rows()) == s.length() && int(ex.features.cols()) == cfg.d_ssl,
                ErrorCode::invalid_argument, "compute_loss: feature matrix shape mismatch");
        for (size_t t = 1; t < size_t(s.length()); ++t)
            if (s.loss_mask[t]) ++st.main_count;
        for (size_t t = 0; t < size_t(s.length()); ++t) {
            if (s.modality[t] == Modality::audio) ++st.audio_count;
            if (s.coarse_labels[t] >= 0) {
                require(s.coarse_labels[t] < cfg.coarse_k, ErrorCode::invalid_argument,
                        "compute_loss: coarse label out of range");
                ++st.coarse_count;
            }
            if (s.code_labels[t] >= 0) {
                require(s.code_labels[t] < cfg.n_codes, ErrorCode::invalid_argument,
                        "compute_loss: code label out of range");
                ++st.next_count;
            }
        }
    }
    require(st.main_count >= 1, ErrorCode::invalid_argument,
            "compute_loss: batch has no unmasked prediction targets");

    const T main_scale = st.main_count > 0 ? T(w.main / double(st.main_count)) : T(0);
    const T ssl_scale = st.audio_count > 0 ? T(w.ssl / double(st.audio_count)) : T(0);
    const T coarse_scale = st.coarse_count > 0 ? T(w.coarse / double(st.coarse_count)) : T(0);
    const T next_scale = st.next_count > 0 ? T(w.next / double(st.next_count)) : T(0);

    double main_sum = 0.0, ssl_sum = 0.0, coarse_sum = 0.0, next_sum = 0.0;

    for (const auto& ex : batch) {
        const MixedSequence& s = *ex.seq;
        const int Tn = s.length();

        ForwardCache<T> cache;
        ForwardResult<T> fwd = model.forward(params, s.ids, grads ? &cache : nullptr);

        Mat<T> d_logits;
        Mat<T> d_hidden;
        if (grads) {
            d_logits = Mat<T>::Zero(Tn, cfg.vocab_size);
            d_hidden = Mat<T>::Zero(Tn, cfg.d_model);
        }

        Eigen::Matrix<T, 1, Eigen::Dynamic> probs;
        for (int t = 0; t + 1 < Tn; ++t) {
            if (!s.loss_mask[size_t(t) + 1]) continue;
            int target = s.ids[size_t(t) + 1];
            main_sum += detail::row_nll<T>(fwd.logits.row(t), target, probs);
            if (grads) {
                probs(target) -= T(1);
                d_logits.row(t) += main_scale * probs;
            }
        }

        std::vector<bool> audio_mask(static_cast<size_t>(Tn));
        for (int t = 0; t < Tn; ++t) audio_mask[size_t(t)] = s.modality[size_t(t)] == Modality::audio;
        Vec<T> align_b = params.align_b.row(0).transpose();
        AlignmentResult<T> al = alignment_sums<T>(fwd.hidden, ex.features, params.align_w, align_b,
                                                  cfg.align_trainable, audio_mask);
        ssl_sum += al.loss;
        if (grads && al.t_audio > 0) {
            d_hidden += ssl_scale * al.d_hidden;
            if (cfg.align_trainable) {
                grads->align_w += ssl_scale * al.d_weight;
                grads->align_b.row(0) += ssl_scale * al.d_bias.transpose();
            }
        }

        for (int t = 0; t < Tn; ++t) {
            int cb = s.coarse_labels[size_t(t)];
            if (cb >= 0) {
                Eigen::Matrix<T, 1, Eigen::Dynamic> logits_c =
                    fwd.hidden.row(t) * params.coarse_w + params.coarse_b.row(0);
                coarse_sum += detail::row_nll<T>(logits_c, cb, probs);
                if (grads) {
                    probs(cb) -= T(1);
                    probs *= coarse_scale;
                    grads->coarse_w.noalias() += fwd.hidden.row(t).transpose() * probs;
                    grads->coarse_b.row(0) += probs;
                    d_hidden.row(t) += probs * params.coarse_w.transpose();
                }
            }
            int nc = s.code_labels[size_t(t)];
            if (nc >= 0) {
                Eigen::Matrix<T, 1, Eigen::Dynamic> logits_n =
                    fwd.hidden.row(t) * params.next_w + params.next_b.row(0);
                next_sum += detail::row_nll<T>(logits_n, nc, probs);
                if (grads) {
                    probs(nc) -= T(1);
                    probs *= next_scale;
                    grads->next_w.noalias() += fwd.hidden.row(t).transpose() * probs;
                    grads->next_b.row(0) += probs;
                    d_hidden.row(t) += probs * params.next_w.transpose();
                }
            }
        }

        if (grads) model.backward(params, cache, d_logits, d_hidden, *grads);
    }

    st.main = st.main_count > 0 ? main_sum / double(st.main_count) : 0.0;
    st.ssl = st.audio_count > 0 ? ssl_sum / double(st.audio_count) : 0.0;
    st.coarse = st.coarse_count > 0 ? coarse_sum / double(st.coarse_count) : 0.0;
    st.next = st.next_count > 0 ? next_sum / double(st.next_count) : 0.0;
    st.total = w.main * st.main + w.ssl * st.ssl + w.coarse * st.coarse + w.next * st.next;

    auto check_finite = [](double v, const char* name) {
        require(std::isfinite(v), ErrorCode::non_finite,
                std::string("compute_loss: non-finite ") + name + " term");
    };
    check_finite(st.main, "main");
    check_finite(st.ssl, "alignment");
    check_finite(st.coarse, "coarse");
    check_finite(st.next, "next-code");
    check_finite(st.total, "total");
    return st;
}

}  // namespace unitlm
