#pragma once

// Semantic distillation: per-code feature centroids, the linear projection
// into model space, speech-token embedding initialization, coarse bucket
// labels, and the stop-gradient alignment loss.

#include <vector>

#include "unitlm/archive.hpp"
#include "unitlm/common.hpp"
#include "unitlm/kmeans.hpp"
#include "unitlm/linalg.hpp"
#include "unitlm/rng.hpp"
#include "unitlm/synth.hpp"

namespace unitlm {

struct Centroids {
    MatD mu;                      // n_codes x d_ssl; exact per-code means
    std::vector<int64_t> counts;  // frames per code; 0 flags an unseen code

    int n_codes() const { return int(mu.rows()); }
    int dim() const { return int(mu.cols()); }
    bool populated(int k) const { return counts[size_t(k)] > 0; }

    int populated_count() const {
        int n = 0;
        for (auto c : counts) n += c > 0 ? 1 : 0;
        return n;
    }

    // Count-weighted mean over populated codes: the corpus mean feature.
    Eigen::RowVectorXd global_mean() const {
        Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(mu.cols());
        int64_t total = 0;
        for (int k = 0; k < n_codes(); ++k) {
            if (counts[size_t(k)] > 0) {
                m += mu.row(k) * double(counts[size_t(k)]);
                total += counts[size_t(k)];
            }
        }
        require(total > 0, ErrorCode::invalid_argument, "Centroids: no populated codes");
        return m / double(total);
    }

    Archive to_archive() const {
        Archive a;
        a.kind = "unitlm-centroids";
        a.put_f64("mu", mu);
        std::vector<uint64_t> c(counts.begin(), counts.end());
        a.put_u64("counts", c);
        return a;
    }

    static Centroids from_archive(const Archive& a) {
        Centroids c;
        c.mu = a.get_f64("mu");
        for (auto v : a.get_u64("counts")) c.counts.push_back(int64_t(v));
        require(int(c.counts.size()) == c.n_codes(), ErrorCode::format,
                "centroids archive: counts/mu mismatch");
        return c;
    }
};

// Exact per-code means over every frame of the corpus. Accumulation is plain
// summation in double; order-independent up to floating rounding, and the
// record order is fixed, so the result is deterministic.
inline Centroids fit_centroids(const std::vector<FrameStream>& corpus, int n_codes) {
    require(!corpus.empty(), ErrorCode::invalid_argument, "fit_centroids: empty corpus");
    require(n_codes >= 1, ErrorCode::invalid_argument, "fit_centroids: n_codes must be >= 1");
    int d = int(corpus.front().features.cols());
    Centroids c;
    c.mu = MatD::Zero(n_codes, d);
    c.counts.assign(size_t(n_codes), 0);
    for (const auto& fs : corpus) {
        require(int(fs.features.cols()) == d, ErrorCode::invalid_argument,
                "fit_centroids: inconsistent feature dims");
        for (int t = 0; t < fs.length(); ++t) {
            int k = fs.codes[size_t(t)];
            require(k >= 0 && k < n_codes, ErrorCode::invalid_argument,
                    "fit_centroids: code out of range");
            c.mu.row(k) += fs.features.row(t);
            c.counts[size_t(k)] += 1;
        }
    }
    for (int k = 0; k < n_codes; ++k)
        if (c.counts[size_t(k)] > 0) c.mu.row(k) /= double(c.counts[size_t(k)]);
    return c;
}

struct Projection {
    MatD weight;  // d_model x d_ssl
    VecD bias;    // d_model
    bool trainable = true;

    int d_model() const { return int(weight.rows()); }
    int d_ssl() const { return int(weight.cols()); }

    Archive to_archive() const {
        Archive a;
        a.kind = "unitlm-projection";
        a.put_f64("weight", weight);
        MatD b(bias.size(), 1);
        b.col(0) = bias;
        a.put_f64("bias", b);
        a.metadata["trainable"] = trainable;
        return a;
    }

    static Projection from_archive(const Archive& a) {
        Projection p;
        p.weight = a.get_f64("weight");
        p.bias = a.get_f64("bias").col(0);
        p.trainable = a.metadata.value("trainable", true);
        return p;
    }
};

// Fit P by ridge least squares from populated centroids to per-code Gaussian
// targets of scale target_scale. The result is a linear image of centroid
// geometry whose outputs sit at a healthy embedding-init magnitude; it stays
// trainable under the alignment loss afterwards.
inline Projection fit_projection(const Centroids& centroids, int d_model, uint64_t seed,
                                 double target_scale, double ridge = 1e-3) {
    require(d_model >= 1, ErrorCode::invalid_argument, "fit_projection: d_model must be >= 1");
    require(target_scale > 0.0, ErrorCode::invalid_argument,
            "fit_projection: target_scale must be positive");
    int n_pop = centroids.populated_count();
    require(n_pop >= 2, ErrorCode::invalid_argument,
            "fit_projection: need at least 2 populated codes");
    int d_ssl = centroids.dim();

    MatD M(n_pop, d_ssl);
    int row = 0;
    for (int k = 0; k < centroids.n_codes(); ++k)
        if (centroids.populated(k)) M.row(row++) = centroids.mu.row(k);

    MatD G(n_pop, d_model);
    Rng rng(derive_seed(seed, "projection-targets"));
    for (int i = 0; i < n_pop; ++i)
        for (int j = 0; j < d_model; ++j) G(i, j) = target_scale * rng.gaussian();

    Eigen::RowVectorXd m_mean = M.colwise().mean();
    Eigen::RowVectorXd g_mean = G.colwise().mean();
    MatD Mc = M.rowwise() - m_mean;
    MatD Gc = G.rowwise() - g_mean;

    MatD gram = Mc.transpose() * Mc + ridge * MatD::Identity(d_ssl, d_ssl);
    MatD wt = gram.ldlt().solve(Mc.transpose() * Gc);  // d_ssl x d_model

    Projection p;
    p.weight = wt.transpose();
    p.bias = (g_mean.transpose() - p.weight * m_mean.transpose());
    return p;
}

// Speech-block embedding initialization: row k = P(mu_k) + sigma * eps_k with
// eps_k drawn from a per-code stream, so the result is independent of
// evaluation order and bit-exact per seed. Unseen codes get the projected
// global mean plus noise instead of a projected garbage row.
template <class T>
Mat<T> init_embeddings(const Centroids& centroids, const Projection& proj, double sigma,
                       uint64_t seed) {
    require(proj.d_ssl() == centroids.dim(), ErrorCode::invalid_argument,
            "init_embeddings: projection input dim " + std::to_string(proj.d_ssl()) +
                " does not match centroid dim " + std::to_string(centroids.dim()));
    require(sigma >= 0.0, ErrorCode::invalid_argument, "init_embeddings: sigma must be >= 0");
    const int n = centroids.n_codes();
    const int d = proj.d_model();
    Eigen::RowVectorXd global = centroids.global_mean();
    Mat<T> E(n, d);
    for (int k = 0; k < n; ++k) {
        const Eigen::RowVectorXd src = centroids.populated(k) ? centroids.mu.row(k) : global;
        VecD base = proj.weight * src.transpose() + proj.bias;
        if (sigma > 0.0) {
            Rng rng(derive_seed(seed, "embed-init", uint64_t(k)));
            for (int j = 0; j < d; ++j) base(j) += sigma * rng.gaussian();
        }
        for (int j = 0; j < d; ++j) E(k, j) = T(base(j));
    }
    return E;
}

// Default noise scale: a fixed fraction of the RMS entry magnitude of the
// projected centroids, so the perturbation is small relative to signal.
inline double default_init_sigma(const Centroids& centroids, const Projection& proj,
                                 double fraction = 0.01) {
    MatD rows(centroids.n_codes(), proj.d_model());
    Eigen::RowVectorXd global = centroids.global_mean();
    for (int k = 0; k < centroids.n_codes(); ++k) {
        const Eigen::RowVectorXd src = centroids.populated(k) ? centroids.mu.row(k) : global;
        rows.row(k) = (proj.weight * src.transpose() + proj.bias).transpose();
    }
    double rms = std::sqrt(rows.squaredNorm() / double(rows.size()));
    return fraction * rms;
}

struct CoarseMap {
    std::vector<int> bucket_of;  // n_codes entries in [0, K)
    int K = 0;
    MatD bucket_centers;         // K x d_ssl

    int n_codes() const { return int(bucket_of.size()); }

    Archive to_archive() const {
        Archive a;
        a.kind = "unitlm-coarse-map";
        std::vector<int32_t> b(bucket_of.begin(), bucket_of.end());
        a.put_i32("bucket_of", b);
        a.put_f64("bucket_centers", bucket_centers);
        a.metadata["K"] = K;
        return a;
    }

    static CoarseMap from_archive(const Archive& a) {
        CoarseMap m;
        for (auto v : a.get_i32("bucket_of")) m.bucket_of.push_back(v);
        m.bucket_centers = a.get_f64("bucket_centers");
        m.K = a.metadata.at("K").get<int>();
        require(int(m.bucket_centers.rows()) == m.K, ErrorCode::format,
                "coarse map archive: center count mismatch");
        return m;
    }
};

// Lloyd's k-means over populated centroids; unseen codes are attached to
// their nearest bucket so every code has a label.
inline CoarseMap fit_coarse(const Centroids& centroids, int K, uint64_t seed, int max_iters = 100,
                            double tol = 1e-9) {
    int n_pop = centroids.populated_count();
    require(K >= 1, ErrorCode::invalid_argument, "fit_coarse: K must be >= 1");
    require(K <= n_pop, ErrorCode::invalid_argument,
            "fit_coarse: K (" + std::to_string(K) + ") exceeds populated codes (" +
                std::to_string(n_pop) + ")");

    MatD pts(n_pop, centroids.dim());
    std::vector<int> code_of_row;
    for (int k = 0; k < centroids.n_codes(); ++k) {
        if (centroids.populated(k)) {
            pts.row(int(code_of_row.size())) = centroids.mu.row(k);
            code_of_row.push_back(k);
        }
    }
    KMeansResult km = kmeans(pts, K, seed, max_iters, tol);
    for (size_t i = 1; i < km.objective.size(); ++i)
        require(km.objective[i] <= km.objective[i - 1] + 1e-9, ErrorCode::invalid_argument,
                "fit_coarse: k-means objective increased");

    CoarseMap m;
    m.K = K;
    m.bucket_centers = km.centers;
    m.bucket_of.assign(size_t(centroids.n_codes()), 0);
    for (size_t i = 0; i < code_of_row.size(); ++i)
        m.bucket_of[size_t(code_of_row[i])] = km.assignment[i];
    if (n_pop < centroids.n_codes()) {
        int fallback = nearest_row(m.bucket_centers, centroids.global_mean());
        for (int k = 0; k < centroids.n_codes(); ++k)
            if (!centroids.populated(k)) m.bucket_of[size_t(k)] = fallback;
    }
    return m;
}

// Stop-gradient alignment: L = (1/T_audio) sum_{t in audio} ||h_t - P(f_t)||^2.
// The feature side is a constant; gradients flow to the hidden states always
// and to the projection only when it is trainable. T_audio == 0 is defined as
// loss 0 with zero gradients.
template <class T>
struct AlignmentResult {
    double loss = 0.0;
    Mat<T> d_hidden;   // same shape as hidden
    Mat<T> d_weight;   // d_model x d_ssl (zero when not trainable)
    Vec<T> d_bias;     // d_model
    int t_audio = 0;
};

// Unnormalized variant: `loss` is the plain sum over audio positions and the
// gradients are derivatives of that sum. Callers that pool several sequences
// into one batch divide by the pooled audio count themselves.
template <class T>
AlignmentResult<T> alignment_sums(const Mat<T>& hidden, const Mat<T>& features,
                                  const Mat<T>& proj_weight, const Vec<T>& proj_bias,
                                  bool proj_trainable, const std::vector<bool>& audio_mask) {
    const int Tn = int(hidden.rows());
    require(int(features.rows()) == Tn && audio_mask.size() == size_t(Tn),
            ErrorCode::invalid_argument, "alignment_loss: length mismatch");
    require(proj_weight.rows() == hidden.cols() && proj_weight.cols() == features.cols(),
            ErrorCode::invalid_argument, "alignment_loss: projection shape mismatch");
    require(proj_bias.size() == hidden.cols(), ErrorCode::invalid_argument,
            "alignment_loss: bias length mismatch");

    AlignmentResult<T> res;
    res.d_hidden = Mat<T>::Zero(hidden.rows(), hidden.cols());
    res.d_weight = Mat<T>::Zero(proj_weight.rows(), proj_weight.cols());
    res.d_bias = Vec<T>::Zero(proj_bias.size());

    int t_audio = 0;
    for (int t = 0; t < Tn; ++t) t_audio += audio_mask[size_t(t)] ? 1 : 0;
    res.t_audio = t_audio;
    if (t_audio == 0) return res;

    double loss = 0.0;
    for (int t = 0; t < Tn; ++t) {
        if (!audio_mask[size_t(t)]) continue;
        Vec<T> pred = proj_weight * features.row(t).transpose() + proj_bias;
        Vec<T> r = hidden.row(t).transpose() - pred;
        loss += double(r.squaredNorm());
        Vec<T> scaled = T(2) * r;
        res.d_hidden.row(t) = scaled.transpose();
        if (proj_trainable) {
            res.d_weight.noalias() -= scaled * features.row(t);
            res.d_bias -= scaled;
        }
    }
    res.loss = loss;
    return res;
}

template <class T>
AlignmentResult<T> alignment_loss(const Mat<T>& hidden, const Mat<T>& features,
                                  const Mat<T>& proj_weight, const Vec<T>& proj_bias,
                                  bool proj_trainable, const std::vector<bool>& audio_mask) {
    AlignmentResult<T> res = alignment_sums(hidden, features, proj_weight, proj_bias,
                                            proj_trainable, audio_mask);
    if (res.t_audio == 0) return res;
    const T inv = T(1) / T(res.t_audio);
    res.loss /= double(res.t_audio);
    res.d_hidden *= inv;
    res.d_weight *= inv;
    res.d_bias *= inv;
    return res;
}

}  // namespace unitlm
