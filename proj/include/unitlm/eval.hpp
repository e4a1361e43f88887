#pragma once

// Evaluation harness: pairwise preference accuracy with percentile-bootstrap
// confidence intervals, and a multinomial logistic probe over frozen pooled
// hidden states. Everything is deterministic given the seeds.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/linalg.hpp"
#include "unitlm/model.hpp"
#include "unitlm/rng.hpp"
#include "unitlm/sequence.hpp"

namespace unitlm {

// ---------------------------------------------------------------------------
// Pairwise preference.
// ---------------------------------------------------------------------------

struct PreferenceOutcome {
    double accuracy = 0.0;
    long wins = 0, ties = 0, losses = 0;
    long excluded = 0;                   // pairs the scorer rejected
    std::vector<double> outcomes;        // per scored pair: 1 / 0.5 / 0
    std::vector<size_t> excluded_index;  // which pairs were dropped
};

// Scores every (natural, perturbed) pair; higher score must mean "preferred".
// A pair counts 1 when the natural variant wins, 0.5 on an exact tie, 0 on a
// loss. Pairs whose scoring throws are excluded and recorded, not silently
// dropped.
template <class Scorer>
PreferenceOutcome preference_eval(const std::vector<std::pair<MixedSequence, MixedSequence>>& pairs,
                                  Scorer&& score) {
    require(!pairs.empty(), ErrorCode::invalid_argument, "preference_eval: no pairs");
    PreferenceOutcome out;
    for (size_t i = 0; i < pairs.size(); ++i) {
        double s_nat, s_pert;
        try {
            s_nat = score(pairs[i].first);
            s_pert = score(pairs[i].second);
        } catch (const Error&) {
            ++out.excluded;
            out.excluded_index.push_back(i);
            continue;
        }
        double o;
        if (s_nat > s_pert) {
            o = 1.0;
            ++out.wins;
        } else if (s_nat < s_pert) {
            o = 0.0;
            ++out.losses;
        } else {
            o = 0.5;
            ++out.ties;
        }
        out.outcomes.push_back(o);
    }
    require(!out.outcomes.empty(), ErrorCode::invalid_argument,
            "preference_eval: every pair was excluded");
    double sum = 0.0;
    for (double o : out.outcomes) sum += o;
    out.accuracy = sum / double(out.outcomes.size());
    return out;
}

struct BootstrapCi {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    int n_resamples = 0;
};

// Percentile bootstrap over per-pair outcomes, resampling with replacement.
// Fully determined by (outcomes, n_resamples, seed, alpha).
inline BootstrapCi bootstrap_ci(const std::vector<double>& outcomes, int n_resamples,
                                uint64_t seed, double alpha = 0.05) {
    require(!outcomes.empty(), ErrorCode::invalid_argument, "bootstrap_ci: empty outcomes");
    require(n_resamples >= 1, ErrorCode::invalid_argument, "bootstrap_ci: need n_resamples >= 1");
    require(alpha > 0 && alpha < 1, ErrorCode::invalid_argument, "bootstrap_ci: alpha in (0,1)");
    const size_t n = outcomes.size();
    Rng rng(derive_seed(seed, "bootstrap"));
    std::vector<double> means(static_cast<size_t>(n_resamples));
    for (int r = 0; r < n_resamples; ++r) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += outcomes[size_t(rng.uniform_int(n))];
        means[size_t(r)] = s / double(n);
    }
    std::sort(means.begin(), means.end());
    auto quantile = [&](double q) {
        double pos = q * double(n_resamples - 1);
        size_t lo = size_t(pos);
        size_t hi = std::min(lo + 1, size_t(n_resamples - 1));
        double frac = pos - double(lo);
        return means[lo] * (1.0 - frac) + means[hi] * frac;
    };
    BootstrapCi ci;
    double s = 0.0;
    for (double o : outcomes) s += o;
    ci.mean = s / double(n);
    ci.lo = quantile(alpha / 2.0);
    ci.hi = quantile(1.0 - alpha / 2.0);
    ci.n_resamples = n_resamples;
    return ci;
}

// ---------------------------------------------------------------------------
// Linear probe.
// ---------------------------------------------------------------------------

// Final hidden states mean-pooled over audio positions: the representation the
// probes classify.
template <class T>
VecD pooled_hidden(const Transformer<T>& model, const Parameters<T>& params,
                   const MixedSequence& seq) {
    seq.check_consistent();
    ForwardResult<T> fwd = model.forward(params, seq.ids);
    VecD acc = VecD::Zero(model.config().d_model);
    long n = 0;
    for (size_t t = 0; t < size_t(seq.length()); ++t) {
        if (seq.modality[t] != Modality::audio) continue;
        acc += fwd.hidden.row(Eigen::Index(t)).template cast<double>().transpose();
        ++n;
    }
    require(n > 0, ErrorCode::invalid_argument, "pooled_hidden: sequence has no audio positions");
    return acc / double(n);
}

struct ProbeResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    long n_train = 0, n_test = 0;
    int epochs_run = 0;
};

// Multinomial logistic regression on standardized features, full-batch
// gradient descent with a fixed epoch budget and a gradient-norm early stop.
// The 80/20 split comes from a seeded permutation.
inline ProbeResult linear_probe(const MatD& X, const std::vector<int>& y, int n_classes,
                                uint64_t seed, int epochs = 400, double lr = 1.0,
                                double l2 = 1e-3, double tol = 1e-7) {
    const long n = long(X.rows()), d = long(X.cols());
    require(n >= 5, ErrorCode::invalid_argument, "linear_probe: need at least 5 examples");
    require(long(y.size()) == n, ErrorCode::invalid_argument, "linear_probe: label count mismatch");
    require(n_classes >= 2, ErrorCode::invalid_argument, "linear_probe: need >= 2 classes");
    for (int label : y)
        require(label >= 0 && label < n_classes, ErrorCode::invalid_argument,
                "linear_probe: label out of range");
    require(epochs >= 1 && lr > 0 && l2 >= 0, ErrorCode::invalid_argument,
            "linear_probe: bad hyperparameters");

    std::vector<size_t> perm = Rng(derive_seed(seed, "probe-split")).permutation(size_t(n));
    long n_train = (n * 8) / 10;
    if (n_train < 1) n_train = 1;
    if (n_train >= n) n_train = n - 1;
    long n_test = n - n_train;

    // Standardize with train-split statistics.
    VecD mean = VecD::Zero(d), var = VecD::Zero(d);
    for (long i = 0; i < n_train; ++i) mean += X.row(long(perm[size_t(i)])).transpose();
    mean /= double(n_train);
    for (long i = 0; i < n_train; ++i) {
        VecD c = X.row(long(perm[size_t(i)])).transpose() - mean;
        var += c.cwiseProduct(c);
    }
    var /= double(n_train);
    VecD scale(d);
    for (long j = 0; j < d; ++j) scale(j) = 1.0 / std::sqrt(var(j) + 1e-8);

    MatD Xtr(n_train, d), Xte(n_test, d);
    std::vector<int> ytr(static_cast<size_t>(n_train));
    std::vector<int> yte(static_cast<size_t>(n_test));
    for (long i = 0; i < n_train; ++i) {
        Xtr.row(i) = (X.row(long(perm[size_t(i)])).transpose() - mean).cwiseProduct(scale).transpose();
        ytr[size_t(i)] = y[perm[size_t(i)]];
    }
    for (long i = 0; i < n_test; ++i) {
        Xte.row(i) =
            (X.row(long(perm[size_t(n_train + i)])).transpose() - mean).cwiseProduct(scale).transpose();
        yte[size_t(i)] = y[perm[size_t(n_train + i)]];
    }

    MatD W = MatD::Zero(d, n_classes);
    VecD b = VecD::Zero(n_classes);
    MatD probs(n_train, n_classes);
    ProbeResult res;
    res.n_train = n_train;
    res.n_test = n_test;

    for (int e = 0; e < epochs; ++e) {
        MatD logits = (Xtr * W).rowwise() + b.transpose();
        for (long i = 0; i < n_train; ++i) {
            double mx = logits.row(i).maxCoeff();
            VecD ex = (logits.row(i).array() - mx).exp().transpose();
            probs.row(i) = (ex / ex.sum()).transpose();
            probs(i, ytr[size_t(i)]) -= 1.0;
        }
        MatD gW = Xtr.transpose() * probs / double(n_train) + l2 * W;
        VecD gb = probs.colwise().sum().transpose() / double(n_train);
        W -= lr * gW;
        b -= lr * gb;
        res.epochs_run = e + 1;
        if (gW.cwiseAbs().maxCoeff() < tol && gb.cwiseAbs().maxCoeff() < tol) break;
    }

    auto accuracy = [&](const MatD& Xs, const std::vector<int>& ys) {
        if (Xs.rows() == 0) return 0.0;
        long correct = 0;
        for (long i = 0; i < Xs.rows(); ++i) {
            Eigen::Index best;
            ((Xs.row(i) * W).transpose() + b).maxCoeff(&best);
            if (int(best) == ys[size_t(i)]) ++correct;
        }
        return double(correct) / double(Xs.rows());
    };
    res.train_accuracy = accuracy(Xtr, ytr);
    res.test_accuracy = accuracy(Xte, yte);
    return res;
}

}  // namespace unitlm
