#pragma once

// One declarative configuration drives every subcommand. The file is JSON with
// a fixed key hierarchy; unknown keys are rejected so typos fail loudly, and
// command-line overrides use section.key=value paths. A canonical hash of the
// parsed config is embedded in every artifact produced under it.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unitlm/augment.hpp"
#include "unitlm/common.hpp"
#include "unitlm/corpus.hpp"
#include "unitlm/interleave.hpp"
#include "unitlm/loss.hpp"
#include "unitlm/optimizer.hpp"
#include "unitlm/synth.hpp"
#include "unitlm/trainer.hpp"

namespace unitlm {

struct DataConfig {
    uint64_t seed = 1;
    int n_codes = 512;
    int n_train = 256;      // training utterances
    int train_len = 48;     // frames per training utterance
    int n_pairs = 96;       // preference pairs per factor
    int pair_len = 48;
    bool refine_codebook = false;  // optional k-means refinement of the random codebook
    int refine_samples = 2048;
    int refine_iters = 25;

    void validate() const {
        require(n_codes >= 2, ErrorCode::invalid_argument, "data: n_codes must be >= 2");
        require(n_train >= 1 && train_len >= 2, ErrorCode::invalid_argument,
                "data: need n_train >= 1 and train_len >= 2");
        require(n_pairs >= 1 && pair_len >= 2, ErrorCode::invalid_argument,
                "data: need n_pairs >= 1 and pair_len >= 2");
        require(refine_samples >= 1 && refine_iters >= 1, ErrorCode::invalid_argument,
                "data: refinement parameters must be >= 1");
    }
};

struct ModelArch {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq_len = 512;
    double init_std = 0.08;
    bool align_trainable = true;
};

struct DistillConfig {
    int coarse_k = 64;
    double sigma_fraction = 0.01;  // init noise as a fraction of projected-centroid RMS
    double target_scale = 0.0;     // 0 → follow model.init_std
    double ridge = 1e-3;

    void validate() const {
        require(coarse_k >= 1, ErrorCode::invalid_argument, "distill: coarse_k must be >= 1");
        require(sigma_fraction >= 0, ErrorCode::invalid_argument,
                "distill: sigma_fraction must be >= 0");
        require(target_scale >= 0, ErrorCode::invalid_argument,
                "distill: target_scale must be >= 0");
        require(ridge >= 0, ErrorCode::invalid_argument, "distill: ridge must be >= 0");
    }
};

struct AugmentConfig {
    ThinSpec thin;
    bool enabled = true;
};

struct InterleaveConfig {
    InterleaveBudget budget;
    bool enabled = false;
};

struct TrainConfig {
    int batch_size = 8;
    long total_steps = 300;
    uint64_t run_seed = 1;
    LossWeights weights;
    AdamWConfig adamw;
    LrSchedule schedule;  // constant by default; base rate sized for desk-scale runs
    int aux_delta = 1;
    long checkpoint_every = 200;
    std::vector<long> checkpoint_steps;
    int log_every = 25;

    void validate() const {
        require(batch_size >= 1 && total_steps >= 0, ErrorCode::invalid_argument,
                "train: batch_size >= 1 and total_steps >= 0 required");
        require(aux_delta >= 1, ErrorCode::invalid_argument, "train: aux_delta must be >= 1");
        require(checkpoint_every >= 0, ErrorCode::invalid_argument,
                "train: checkpoint_every must be >= 0");
        weights.validate();
        adamw.validate();
        schedule.validate();
    }
};

struct EvalConfig {
    int bootstrap_resamples = 10000;
    uint64_t bootstrap_seed = 7;
    int probe_epochs = 400;
    double probe_lr = 1.0;
    double probe_l2 = 1e-3;
    uint64_t probe_seed = 11;
    int probe_examples = 160;  // held-out utterances generated for probing

    void validate() const {
        require(bootstrap_resamples >= 1, ErrorCode::invalid_argument,
                "eval: bootstrap_resamples must be >= 1");
        require(probe_epochs >= 1 && probe_lr > 0 && probe_l2 >= 0, ErrorCode::invalid_argument,
                "eval: bad probe hyperparameters");
        require(probe_examples >= 5, ErrorCode::invalid_argument,
                "eval: probe_examples must be >= 5");
    }
};

struct RunConfig {
    LatentSpec world;
    DataConfig data;
    ModelArch model;
    DistillConfig distill;
    AugmentConfig augment;
    InterleaveConfig interleave;
    TrainConfig train;
    EvalConfig eval;

    void validate() const {
        world.validate();
        data.validate();
        distill.validate();
        augment.thin.validate();
        interleave.budget.validate();
        train.validate();
        eval.validate();
    }
};

namespace detail {

// Strict field reader: every key in `j` must be consumed by one of the `get`
// calls, otherwise the leftover names are reported.
class FieldReader {
public:
    FieldReader(const nlohmann::json& j, std::string section)
        : j_(j), section_(std::move(section)) {
        require(j.is_object(), ErrorCode::invalid_argument,
                "config: section '" + section_ + "' must be an object");
    }

    template <class V>
    void get(const char* key, V& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;  // keep the default
        try {
            out = it->get<V>();
        } catch (const nlohmann::json::exception&) {
            fail(ErrorCode::invalid_argument,
                 "config: bad value type for '" + section_ + "." + key + "'");
        }
        seen_.push_back(key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool known = false;
            for (const auto& s : seen_)
                if (s == it.key()) known = true;
            require(known, ErrorCode::invalid_argument,
                    "config: unknown key '" + section_ + "." + it.key() + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string section_;
    std::vector<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["world"] = latent_spec_to_json(c.world);
    j["data"] = {{"seed", c.data.seed},
                 {"n_codes", c.data.n_codes},
                 {"n_train", c.data.n_train},
                 {"train_len", c.data.train_len},
                 {"n_pairs", c.data.n_pairs},
                 {"pair_len", c.data.pair_len},
                 {"refine_codebook", c.data.refine_codebook},
                 {"refine_samples", c.data.refine_samples},
                 {"refine_iters", c.data.refine_iters}};
    j["model"] = {{"d_model", c.model.d_model},     {"n_layers", c.model.n_layers},
                  {"n_heads", c.model.n_heads},     {"d_ff", c.model.d_ff},
                  {"max_seq_len", c.model.max_seq_len}, {"init_std", c.model.init_std},
                  {"align_trainable", c.model.align_trainable}};
    j["distill"] = {{"coarse_k", c.distill.coarse_k},
                    {"sigma_fraction", c.distill.sigma_fraction},
                    {"target_scale", c.distill.target_scale},
                    {"ridge", c.distill.ridge}};
    j["augment"] = {{"enabled", c.augment.enabled},
                    {"rates", c.augment.thin.rates},
                    {"p_erase", c.augment.thin.p_erase},
                    {"span_mean", c.augment.thin.span_mean}};
    j["interleave"] = {{"enabled", c.interleave.enabled},
                       {"lo", c.interleave.budget.lo},
                       {"hi", c.interleave.budget.hi},
                       {"max_windows", c.interleave.budget.max_windows}};
    j["train"] = {{"batch_size", c.train.batch_size},
                  {"total_steps", c.train.total_steps},
                  {"run_seed", c.train.run_seed},
                  {"aux_delta", c.train.aux_delta},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"checkpoint_steps", c.train.checkpoint_steps},
                  {"log_every", c.train.log_every},
                  {"weights",
                   {{"main", c.train.weights.main},
                    {"ssl", c.train.weights.ssl},
                    {"coarse", c.train.weights.coarse},
                    {"next", c.train.weights.next}}},
                  {"adamw", adamw_config_to_json(c.train.adamw)},
                  {"schedule",
                   {{"kind", c.train.schedule.kind},
                    {"base_lr", c.train.schedule.base_lr},
                    {"warmup_steps", c.train.schedule.warmup_steps},
                    {"total_steps", c.train.schedule.total_steps},
                    {"min_lr", c.train.schedule.min_lr}}}};
    j["eval"] = {{"bootstrap_resamples", c.eval.bootstrap_resamples},
                 {"bootstrap_seed", c.eval.bootstrap_seed},
                 {"probe_epochs", c.eval.probe_epochs},
                 {"probe_lr", c.eval.probe_lr},
                 {"probe_l2", c.eval.probe_l2},
                 {"probe_seed", c.eval.probe_seed},
                 {"probe_examples", c.eval.probe_examples}};
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    require(j.is_object(), ErrorCode::invalid_argument, "config: root must be an object");
    static const char* kSections[] = {"world", "data",       "model", "distill",
                                      "augment", "interleave", "train", "eval"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* s : kSections)
            if (it.key() == s) known = true;
        require(known, ErrorCode::invalid_argument, "config: unknown section '" + it.key() + "'");
    }

    RunConfig c;
    if (j.contains("world")) c.world = latent_spec_from_json(j.at("world"));
    if (j.contains("data")) {
        detail::FieldReader r(j.at("data"), "data");
        r.get("seed", c.data.seed);
        r.get("n_codes", c.data.n_codes);
        r.get("n_train", c.data.n_train);
        r.get("train_len", c.data.train_len);
        r.get("n_pairs", c.data.n_pairs);
        r.get("pair_len", c.data.pair_len);
        r.get("refine_codebook", c.data.refine_codebook);
        r.get("refine_samples", c.data.refine_samples);
        r.get("refine_iters", c.data.refine_iters);
        r.finish();
    }
    if (j.contains("model")) {
        detail::FieldReader r(j.at("model"), "model");
        r.get("d_model", c.model.d_model);
        r.get("n_layers", c.model.n_layers);
        r.get("n_heads", c.model.n_heads);
        r.get("d_ff", c.model.d_ff);
        r.get("max_seq_len", c.model.max_seq_len);
        r.get("init_std", c.model.init_std);
        r.get("align_trainable", c.model.align_trainable);
        r.finish();
    }
    if (j.contains("distill")) {
        detail::FieldReader r(j.at("distill"), "distill");
        r.get("coarse_k", c.distill.coarse_k);
        r.get("sigma_fraction", c.distill.sigma_fraction);
        r.get("target_scale", c.distill.target_scale);
        r.get("ridge", c.distill.ridge);
        r.finish();
    }
    if (j.contains("augment")) {
        detail::FieldReader r(j.at("augment"), "augment");
        r.get("enabled", c.augment.enabled);
        r.get("rates", c.augment.thin.rates);
        r.get("p_erase", c.augment.thin.p_erase);
        r.get("span_mean", c.augment.thin.span_mean);
        r.finish();
    }
    if (j.contains("interleave")) {
        detail::FieldReader r(j.at("interleave"), "interleave");
        r.get("enabled", c.interleave.enabled);
        r.get("lo", c.interleave.budget.lo);
        r.get("hi", c.interleave.budget.hi);
        r.get("max_windows", c.interleave.budget.max_windows);
        r.finish();
    }
    if (j.contains("train")) {
        const auto& jt = j.at("train");
        detail::FieldReader r(jt, "train");
        r.get("batch_size", c.train.batch_size);
        r.get("total_steps", c.train.total_steps);
        r.get("run_seed", c.train.run_seed);
        r.get("aux_delta", c.train.aux_delta);
        r.get("checkpoint_every", c.train.checkpoint_every);
        r.get("checkpoint_steps", c.train.checkpoint_steps);
        r.get("log_every", c.train.log_every);
        nlohmann::json sub;
        r.get("weights", sub);
        if (!sub.is_null()) {
            detail::FieldReader w(sub, "train.weights");
            w.get("main", c.train.weights.main);
            w.get("ssl", c.train.weights.ssl);
            w.get("coarse", c.train.weights.coarse);
            w.get("next", c.train.weights.next);
            w.finish();
        }
        sub = nlohmann::json();
        r.get("adamw", sub);
        if (!sub.is_null()) {
            detail::FieldReader a(sub, "train.adamw");
            a.get("beta1", c.train.adamw.beta1);
            a.get("beta2", c.train.adamw.beta2);
            a.get("eps", c.train.adamw.eps);
            a.get("weight_decay", c.train.adamw.weight_decay);
            a.finish();
        }
        sub = nlohmann::json();
        r.get("schedule", sub);
        if (!sub.is_null()) {
            detail::FieldReader s(sub, "train.schedule");
            s.get("kind", c.train.schedule.kind);
            s.get("base_lr", c.train.schedule.base_lr);
            s.get("warmup_steps", c.train.schedule.warmup_steps);
            s.get("total_steps", c.train.schedule.total_steps);
            s.get("min_lr", c.train.schedule.min_lr);
            s.finish();
        }
        r.finish();
    }
    if (j.contains("eval")) {
        detail::FieldReader r(j.at("eval"), "eval");
        r.get("bootstrap_resamples", c.eval.bootstrap_resamples);
        r.get("bootstrap_seed", c.eval.bootstrap_seed);
        r.get("probe_epochs", c.eval.probe_epochs);
        r.get("probe_lr", c.eval.probe_lr);
        r.get("probe_l2", c.eval.probe_l2);
        r.get("probe_seed", c.eval.probe_seed);
        r.get("probe_examples", c.eval.probe_examples);
        r.finish();
    }
    c.validate();
    return c;
}

// Applies one "section.key=value" override to a JSON document. The value text
// is parsed as JSON when possible (numbers, booleans, arrays) and treated as a
// plain string otherwise. Intermediate objects are created as needed.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::invalid_argument,
            "override must look like section.key=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    std::vector<std::string> keys;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        if (dot == std::string::npos) {
            keys.push_back(path.substr(start));
            break;
        }
        keys.push_back(path.substr(start, dot - start));
        start = dot + 1;
    }
    for (const auto& k : keys)
        require(!k.empty(), ErrorCode::invalid_argument, "override has an empty path segment: " + assignment);

    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;

    nlohmann::json* cur = &doc;
    for (size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!cur->contains(keys[i]) || !(*cur)[keys[i]].is_object()) (*cur)[keys[i]] = nlohmann::json::object();
        cur = &(*cur)[keys[i]];
    }
    (*cur)[keys.back()] = parsed;
}

// Canonical content hash: nlohmann::json serializes object keys sorted, so the
// dump is a stable canonical form.
inline uint64_t config_hash(const RunConfig& c) {
    std::string dump = run_config_to_json(c).dump();
    return fnv1a64(dump.data(), dump.size());
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::string>& overrides = {}) {
    nlohmann::json doc;
    if (path.empty()) {
        doc = run_config_to_json(RunConfig{});
    } else {
        std::string text = read_file_bytes(path);
        doc = nlohmann::json::parse(text, nullptr, false);
        require(!doc.is_discarded(), ErrorCode::format, "config: invalid JSON in " + path);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return run_config_from_json(doc);
}

}  // namespace unitlm
