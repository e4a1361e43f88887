#pragma once

// Multi-rate thinning and span erasure over audio token subsequences.
//
// Thinning at rate r keeps positions {t : t mod r == 0}. Erasure then removes
// short spans, addressed in thinned coordinates (erasure follows thinning).
// Labels are next-surviving-token targets: after dropping positions, position
// i's label is the token that actually follows it in the surviving stream.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/rng.hpp"
#include "unitlm/vocab.hpp"

namespace unitlm {

struct ThinSpec {
    std::vector<int> rates = {1, 2, 3, 4};
    double p_erase = 0.1;
    double span_mean = 3.0;   // expected erased span length, in thinned frames

    void validate() const {
        require(!rates.empty(), ErrorCode::invalid_argument, "ThinSpec: rates must be non-empty");
        for (int r : rates)
            require(r >= 1, ErrorCode::invalid_argument, "ThinSpec: rates must be >= 1");
        require(p_erase >= 0.0 && p_erase <= 1.0, ErrorCode::invalid_argument,
                "ThinSpec: p_erase must be in [0, 1]");
        require(span_mean >= 1.0, ErrorCode::invalid_argument, "ThinSpec: span_mean must be >= 1");
    }
};

struct Span {
    int start = 0;  // thinned coordinates
    int len = 0;
};

struct ThinnedSequence {
    std::vector<int> kept_positions;   // strictly increasing original indices
    std::vector<TokenId> tokens;       // surviving token ids
    std::vector<TokenId> labels;       // labels[i] = tokens[i+1]; last entry undefined
    std::vector<bool> label_mask;      // false at the final position

    size_t size() const { return tokens.size(); }
};

inline int thinned_length(int T, int r) { return (T + r - 1) / r; }

// Deterministic core: keep {t : t mod r == 0}, then drop the given spans
// (thinned coordinates, non-overlapping), then realign labels to survivors.
inline ThinnedSequence thin(const std::vector<TokenId>& tokens, int r,
                            const std::vector<Span>& erase_spans) {
    require(r >= 1, ErrorCode::invalid_argument, "thin: rate must be >= 1");
    const int T = int(tokens.size());
    const int n_thinned = thinned_length(T, r);

    std::vector<bool> erased(size_t(n_thinned), false);
    std::vector<Span> sorted = erase_spans;
    std::sort(sorted.begin(), sorted.end(), [](const Span& a, const Span& b) { return a.start < b.start; });
    int prev_end = -1;
    for (const Span& s : sorted) {
        require(s.len >= 1, ErrorCode::invalid_argument, "thin: span length must be >= 1");
        require(s.start >= 0 && s.start + s.len <= n_thinned, ErrorCode::invalid_argument,
                "thin: span out of bounds");
        require(s.start >= prev_end, ErrorCode::invalid_argument, "thin: overlapping spans");
        prev_end = s.start + s.len;
        for (int i = s.start; i < s.start + s.len; ++i) erased[size_t(i)] = true;
    }

    ThinnedSequence out;
    for (int i = 0; i < n_thinned; ++i) {
        if (erased[size_t(i)]) continue;
        int orig = i * r;
        out.kept_positions.push_back(orig);
        out.tokens.push_back(tokens[size_t(orig)]);
    }
    size_t n = out.tokens.size();
    out.labels.assign(n, TokenId(-1));
    out.label_mask.assign(n, false);
    for (size_t i = 0; i + 1 < n; ++i) {
        out.labels[i] = out.tokens[i + 1];
        out.label_mask[i] = true;
    }
    return out;
}

struct Augmentation {
    int rate = 1;
    std::vector<Span> spans;
};

// Sample (rate, spans) for a span of original length T. The rate is uniform
// over spec.rates. Span starts follow a Bernoulli(p_erase) process walked
// left to right over thinned positions; a started span draws a geometric
// length with mean span_mean, is clipped at the end, and the walk resumes
// after it (so spans never overlap). For the resulting stationary erased
// fraction, see the Monte Carlo test.
inline Augmentation sample_augmentation(const ThinSpec& spec, int T, uint64_t seed) {
    spec.validate();
    require(T >= 1, ErrorCode::invalid_argument, "sample_augmentation: T must be >= 1");
    Augmentation aug;
    Rng rng(derive_seed(seed, "augment"));
    aug.rate = spec.rates[size_t(rng.uniform_int(spec.rates.size()))];
    if (spec.p_erase <= 0.0) return aug;

    const int n = thinned_length(T, aug.rate);
    int pos = 0;
    while (pos < n) {
        if (rng.uniform() < spec.p_erase) {
            int len = int(rng.geometric(spec.span_mean));
            len = std::min(len, n - pos);
            aug.spans.push_back(Span{pos, len});
            pos += len;
        } else {
            ++pos;
        }
    }
    // Never erase the whole stream: keep at least one surviving token so the
    // span still contributes context.
    int total_erased = 0;
    for (auto& s : aug.spans) total_erased += s.len;
    if (total_erased >= n && !aug.spans.empty()) {
        aug.spans.back().len -= 1;
        if (aug.spans.back().len == 0) aug.spans.pop_back();
    }
    return aug;
}

}  // namespace unitlm
