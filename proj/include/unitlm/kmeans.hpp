#pragma once

// Lloyd's k-means over row vectors. Shared by the coarse-bucket fit and the
// codebook refinement path.

#include <limits>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/linalg.hpp"
#include "unitlm/rng.hpp"

namespace unitlm {

struct KMeansResult {
    MatD centers;                  // K x dim
    std::vector<int> assignment;   // per input row, in [0, K)
    std::vector<double> objective; // summed squared distance, one entry per iteration
    int iterations = 0;
};

inline int nearest_row(const MatD& centers, const Eigen::RowVectorXd& x) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < centers.rows(); ++k) {
        double d = (centers.row(k) - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// points: N x dim. Initial centers are K distinct rows sampled without
// replacement. Empty clusters are re-seeded from the point farthest from its
// current center. The objective sequence is non-increasing by construction
// (each assignment and each update step cannot raise it); it is recorded so
// callers can assert that.
inline KMeansResult kmeans(const MatD& points, int k, uint64_t seed, int max_iters = 100,
                           double tol = 1e-9) {
    const int n = int(points.rows());
    require(k >= 1, ErrorCode::invalid_argument, "kmeans: k must be >= 1");
    require(k <= n, ErrorCode::invalid_argument,
            "kmeans: k exceeds number of points (" + std::to_string(k) + " > " +
                std::to_string(n) + ")");

    KMeansResult res;
    res.centers.resize(k, points.cols());
    Rng rng(derive_seed(seed, "kmeans-init"));
    auto perm = rng.permutation(size_t(n));
    for (int j = 0; j < k; ++j) res.centers.row(j) = points.row(int(perm[size_t(j)]));

    res.assignment.assign(size_t(n), 0);
    std::vector<double> dist(size_t(n), 0.0);

    for (int it = 0; it < max_iters; ++it) {
        double obj = 0.0;
        for (int i = 0; i < n; ++i) {
            int a = nearest_row(res.centers, points.row(i));
            res.assignment[size_t(i)] = a;
            dist[size_t(i)] = (points.row(i) - res.centers.row(a)).squaredNorm();
            obj += dist[size_t(i)];
        }
        res.objective.push_back(obj);
        res.iterations = it + 1;

        MatD sums = MatD::Zero(k, points.cols());
        std::vector<int> counts(size_t(k), 0);
        for (int i = 0; i < n; ++i) {
            sums.row(res.assignment[size_t(i)]) += points.row(i);
            counts[size_t(res.assignment[size_t(i)])]++;
        }
        double moved = 0.0;
        for (int j = 0; j < k; ++j) {
            Eigen::RowVectorXd next;
            if (counts[size_t(j)] > 0) {
                next = sums.row(j) / double(counts[size_t(j)]);
            } else {
                // Re-seed from the farthest point so no bucket ends up empty.
                int far = 0;
                for (int i = 1; i < n; ++i)
                    if (dist[size_t(i)] > dist[size_t(far)]) far = i;
                next = points.row(far);
                dist[size_t(far)] = 0.0;
            }
            moved = std::max(moved, (next - res.centers.row(j)).norm());
            res.centers.row(j) = next;
        }
        if (moved < tol) break;
    }

    // Final assignment against the settled centers.
    for (int i = 0; i < n; ++i) res.assignment[size_t(i)] = nearest_row(res.centers, points.row(i));
    return res;
}

}  // namespace unitlm
