#pragma once

// Decoupled-weight-decay Adam over the parameter struct, plus the step-indexed
// learning-rate schedules. Moment tensors mirror the parameter shapes and are
// part of the checkpointed state.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/model.hpp"

namespace unitlm {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const {
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorCode::invalid_argument,
                "AdamWConfig: betas must lie in [0,1)");
        require(eps > 0, ErrorCode::invalid_argument, "AdamWConfig: eps must be positive");
        require(weight_decay >= 0, ErrorCode::invalid_argument,
                "AdamWConfig: weight_decay must be non-negative");
    }
};

struct LrSchedule {
    std::string kind = "constant";  // constant | cosine
    double base_lr = 1e-3;
    int warmup_steps = 0;
    int total_steps = 0;  // required for cosine
    double min_lr = 0.0;

    void validate() const {
        require(kind == "constant" || kind == "cosine", ErrorCode::invalid_argument,
                "LrSchedule: kind must be 'constant' or 'cosine'");
        require(base_lr >= 0 && min_lr >= 0 && min_lr <= base_lr, ErrorCode::invalid_argument,
                "LrSchedule: need 0 <= min_lr <= base_lr");
        require(warmup_steps >= 0, ErrorCode::invalid_argument,
                "LrSchedule: warmup_steps must be >= 0");
        if (kind == "cosine")
            require(total_steps > 0, ErrorCode::invalid_argument,
                    "LrSchedule: cosine needs total_steps > 0");
    }

    // Learning rate applied at optimizer step `step` (0-based).
    double lr_at(long step) const {
        validate();
        if (warmup_steps > 0 && step < warmup_steps)
            return base_lr * double(step + 1) / double(warmup_steps);
        if (kind == "constant") return base_lr;
        long span = long(total_steps) - warmup_steps;
        if (span <= 0) return min_lr;
        double progress = double(step - warmup_steps) / double(span);
        if (progress > 1.0) progress = 1.0;
        return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * progress));
    }
};

// Decay applies to matmul weights and the token embedding table; norms,
// biases, and positional rows are exempt.
inline bool weight_decays(const std::string& name) {
    if (name == "tok_embed") return true;
    return name.size() >= 2 && name.compare(name.size() - 2, 2, "_w") == 0;
}

template <class T>
std::vector<std::pair<std::string, Mat<T>*>> tensor_list(Parameters<T>& p) {
    std::vector<std::pair<std::string, Mat<T>*>> out;
    p.for_each_tensor([&](const std::string& name, Mat<T>& m) { out.emplace_back(name, &m); });
    return out;
}

template <class T>
class AdamW {
public:
    AdamW() = default;
    AdamW(const ModelConfig& mc, const AdamWConfig& cfg)
        : cfg_(cfg), align_frozen_(!mc.align_trainable) {
        cfg_.validate();
        m_ = Parameters<T>::shaped(mc);
        v_ = Parameters<T>::shaped(mc);
    }

    const AdamWConfig& config() const { return cfg_; }
    long step_count() const { return step_count_; }
    Parameters<T>& moment1() { return m_; }
    Parameters<T>& moment2() { return v_; }
    const Parameters<T>& moment1() const { return m_; }
    const Parameters<T>& moment2() const { return v_; }
    void set_step_count(long s) {
        require(s >= 0, ErrorCode::invalid_argument, "AdamW: negative step count");
        step_count_ = s;
    }

    // One update with gradients `g` at learning rate `lr`. lr == 0 leaves the
    // parameters bit-identical (moments still advance).
    void update(Parameters<T>& p, const Parameters<T>& g, double lr) {
        require(lr >= 0, ErrorCode::invalid_argument, "AdamW: negative learning rate");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_count_));
        const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
        const T one_m_b1 = T(1.0 - cfg_.beta1), one_m_b2 = T(1.0 - cfg_.beta2);
        const T inv_bc1 = T(1.0 / bc1), inv_bc2 = T(1.0 / bc2);
        const T eps = T(cfg_.eps);
        const T step_size = T(lr);

        auto pp = tensor_list(p);
        auto gg = tensor_list(const_cast<Parameters<T>&>(g));
        auto mm = tensor_list(m_);
        auto vv = tensor_list(v_);
        require(pp.size() == gg.size() && pp.size() == mm.size() && pp.size() == vv.size(),
                ErrorCode::invalid_argument, "AdamW: tensor list mismatch");

        for (size_t i = 0; i < pp.size(); ++i) {
            // A frozen alignment projection must hold bit-still: no decay, no
            // moment drift, nothing.
            if (align_frozen_ && (pp[i].first == "align_w" || pp[i].first == "align_b")) continue;
            Mat<T>& P = *pp[i].second;
            const Mat<T>& G = *gg[i].second;
            Mat<T>& M = *mm[i].second;
            Mat<T>& V = *vv[i].second;
            require(P.rows() == G.rows() && P.cols() == G.cols(), ErrorCode::invalid_argument,
                    "AdamW: gradient shape mismatch for " + pp[i].first);
            M = b1 * M + one_m_b1 * G;
            V = b2 * V + one_m_b2 * G.cwiseProduct(G);
            Mat<T> upd =
                ((M * inv_bc1).array() / ((V * inv_bc2).array().sqrt() + eps)).matrix();
            if (cfg_.weight_decay > 0 && weight_decays(pp[i].first))
                upd += T(cfg_.weight_decay) * P;
            if (lr != 0.0) P -= step_size * upd;
        }
    }

private:
    AdamWConfig cfg_;
    bool align_frozen_ = false;
    Parameters<T> m_, v_;
    long step_count_ = 0;
};

}  // namespace unitlm
