#pragma once

// End-to-end orchestration: world construction, corpus and preference-pair
// generation, the distillation chain, training-set assembly, model training,
// and the three study drivers (auxiliary ablation, init staging, interleave
// trade-off). The CLI subcommands and the acceptance harness both call these.

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "unitlm/config.hpp"
#include "unitlm/corpus.hpp"
#include "unitlm/distill.hpp"
#include "unitlm/eval.hpp"
#include "unitlm/kmeans.hpp"
#include "unitlm/scoring.hpp"
#include "unitlm/trainer.hpp"
#include "unitlm/vocab.hpp"

namespace unitlm {

// ---------------------------------------------------------------------------
// World and data.
// ---------------------------------------------------------------------------

struct World {
    LatentSpec spec;
    LatentVectors lv;
    Codebook codebook;
    UnifiedVocab vocab;
};

inline World build_world(const RunConfig& cfg) {
    cfg.validate();
    World w;
    w.spec = cfg.world;
    w.lv = LatentVectors::make(w.spec, derive_seed(cfg.data.seed, "latents"));
    w.codebook = make_codebook(derive_seed(cfg.data.seed, "codebook"), cfg.data.n_codes,
                               w.spec.feature_dim);
    if (cfg.data.refine_codebook) {
        // Optional refinement: fit the code vectors to the feature distribution
        // with k-means over sampled frames, then freeze them.
        int per_utt = cfg.data.train_len;
        int n_utts = (cfg.data.refine_samples + per_utt - 1) / per_utt;
        std::vector<Eigen::RowVectorXd> rows;
        Rng pick(derive_seed(cfg.data.seed, "refine-pick"));
        for (int i = 0; i < n_utts; ++i) {
            int spk = int(pick.uniform_int(uint64_t(w.spec.n_speakers)));
            int ct = int(pick.uniform_int(uint64_t(w.spec.n_contents)));
            FrameStream fs = synth_utterance(w.spec, w.lv, w.codebook,
                                             derive_seed(cfg.data.seed, "refine-utt", uint64_t(i)),
                                             spk, ct, per_utt);
            for (int t = 0; t < fs.length(); ++t) rows.push_back(fs.features.row(t));
        }
        MatD pts(long(rows.size()), w.spec.feature_dim);
        for (size_t i = 0; i < rows.size(); ++i) pts.row(long(i)) = rows[i];
        KMeansResult km = kmeans(pts, cfg.data.n_codes, derive_seed(cfg.data.seed, "refine-km"),
                                 cfg.data.refine_iters);
        w.codebook.vectors = km.centers;
    }
    w.vocab = UnifiedVocab::build(derive_text_symbols(w.spec), cfg.data.n_codes);
    return w;
}

inline std::vector<FrameStream> make_train_corpus(const World& w, const RunConfig& cfg) {
    std::vector<FrameStream> corpus;
    corpus.reserve(size_t(cfg.data.n_train));
    for (int i = 0; i < cfg.data.n_train; ++i) {
        Rng pick(derive_seed(cfg.data.seed, "train-utt-factors", uint64_t(i)));
        int spk = int(pick.uniform_int(uint64_t(w.spec.n_speakers)));
        int ct = int(pick.uniform_int(uint64_t(w.spec.n_contents)));
        corpus.push_back(synth_utterance(w.spec, w.lv, w.codebook,
                                         derive_seed(cfg.data.seed, "train-utt", uint64_t(i)), spk,
                                         ct, cfg.data.train_len));
    }
    return corpus;
}

// A labeled held-out set for the probes (same distribution, fresh seeds).
inline std::vector<FrameStream> make_probe_corpus(const World& w, const RunConfig& cfg, int count) {
    std::vector<FrameStream> corpus;
    corpus.reserve(size_t(count));
    for (int i = 0; i < count; ++i) {
        Rng pick(derive_seed(cfg.data.seed, "probe-utt-factors", uint64_t(i)));
        int spk = int(pick.uniform_int(uint64_t(w.spec.n_speakers)));
        int ct = int(pick.uniform_int(uint64_t(w.spec.n_contents)));
        corpus.push_back(synth_utterance(w.spec, w.lv, w.codebook,
                                         derive_seed(cfg.data.seed, "probe-utt", uint64_t(i)), spk,
                                         ct, cfg.data.train_len));
    }
    return corpus;
}

inline std::vector<PreferenceStreams> make_pref_pairs(const World& w, const RunConfig& cfg,
                                                      Factor factor) {
    std::vector<PreferenceStreams> pairs;
    pairs.reserve(size_t(cfg.data.n_pairs));
    std::string label = std::string("pair-") + factor_name(factor);
    for (int i = 0; i < cfg.data.n_pairs; ++i)
        pairs.push_back(synth_pair(w.spec, w.lv, w.codebook,
                                   derive_seed(cfg.data.seed, label, uint64_t(i)), factor,
                                   cfg.data.pair_len));
    return pairs;
}

// ---------------------------------------------------------------------------
// Distillation chain.
// ---------------------------------------------------------------------------

struct DistillArtifacts {
    Centroids centroids;
    Projection projection;
    CoarseMap coarse;
    MatD embed_init;   // n_codes x d_model
    double sigma = 0.0;
};

inline DistillArtifacts distill_from_centroids(Centroids centroids, const RunConfig& cfg) {
    DistillArtifacts d;
    d.centroids = std::move(centroids);
    double target_scale =
        cfg.distill.target_scale > 0 ? cfg.distill.target_scale : cfg.model.init_std;
    d.projection = fit_projection(d.centroids, cfg.model.d_model,
                                  derive_seed(cfg.data.seed, "projection"), target_scale,
                                  cfg.distill.ridge);
    int k_eff = cfg.distill.coarse_k;
    if (k_eff > d.centroids.populated_count()) k_eff = d.centroids.populated_count();
    d.coarse = fit_coarse(d.centroids, k_eff, derive_seed(cfg.data.seed, "coarse"));
    d.sigma = cfg.distill.sigma_fraction > 0
                  ? default_init_sigma(d.centroids, d.projection, cfg.distill.sigma_fraction)
                  : 0.0;
    d.embed_init = init_embeddings<double>(d.centroids, d.projection, d.sigma,
                                           derive_seed(cfg.data.seed, "embed-init"));
    return d;
}

inline DistillArtifacts build_distill(const std::vector<FrameStream>& corpus, const World& w,
                                      const RunConfig& cfg) {
    return distill_from_centroids(fit_centroids(corpus, w.codebook.n_codes()), cfg);
}

// Single-file form of the distilled-init artifact (embeddings + projection +
// bucket map) written by the init-embed subcommand and consumed by train.
inline Archive distill_to_archive(const DistillArtifacts& d) {
    Archive a;
    a.kind = "unitlm-embed-init";
    a.put_f64("embedding", d.embed_init);
    a.put_f64("proj_weight", d.projection.weight);
    MatD b(d.projection.bias.size(), 1);
    b.col(0) = d.projection.bias;
    a.put_f64("proj_bias", b);
    std::vector<int32_t> buckets(d.coarse.bucket_of.begin(), d.coarse.bucket_of.end());
    a.put_i32("bucket_of", buckets);
    a.put_f64("bucket_centers", d.coarse.bucket_centers);
    a.put_f64("centroid_mu", d.centroids.mu);
    std::vector<uint64_t> counts;
    for (int64_t c : d.centroids.counts) counts.push_back(uint64_t(c));
    a.put_u64("centroid_counts", counts);
    a.metadata["sigma"] = d.sigma;
    a.metadata["coarse_k"] = d.coarse.K;
    a.metadata["proj_trainable"] = d.projection.trainable;
    return a;
}

inline DistillArtifacts distill_from_archive(const Archive& a) {
    require(a.kind == "unitlm-embed-init", ErrorCode::format,
            "embed-init: unexpected archive kind '" + a.kind + "'");
    DistillArtifacts d;
    d.embed_init = a.get_f64("embedding");
    d.projection.weight = a.get_f64("proj_weight");
    d.projection.bias = a.get_f64("proj_bias").col(0);
    d.projection.trainable = a.metadata.value("proj_trainable", true);
    for (int32_t v : a.get_i32("bucket_of")) d.coarse.bucket_of.push_back(int(v));
    d.coarse.bucket_centers = a.get_f64("bucket_centers");
    d.coarse.K = a.metadata.at("coarse_k").get<int>();
    d.centroids.mu = a.get_f64("centroid_mu");
    for (uint64_t c : a.get_u64("centroid_counts")) d.centroids.counts.push_back(int64_t(c));
    d.sigma = a.metadata.at("sigma").get<double>();
    return d;
}

inline Archive codebook_to_archive(const Codebook& cb) {
    Archive a;
    a.kind = "unitlm-codebook";
    a.put_f64("vectors", cb.vectors);
    return a;
}

inline Codebook codebook_from_archive(const Archive& a) {
    require(a.kind == "unitlm-codebook", ErrorCode::format,
            "codebook: unexpected archive kind '" + a.kind + "'");
    Codebook cb;
    cb.vectors = a.get_f64("vectors");
    require(cb.n_codes() >= 2, ErrorCode::format, "codebook: fewer than 2 codes");
    return cb;
}

// ---------------------------------------------------------------------------
// Model assembly.
// ---------------------------------------------------------------------------

inline ModelConfig resolve_model_config(const RunConfig& cfg, const UnifiedVocab& vocab,
                                        int coarse_k_effective) {
    ModelConfig mc;
    mc.d_model = cfg.model.d_model;
    mc.n_layers = cfg.model.n_layers;
    mc.n_heads = cfg.model.n_heads;
    mc.d_ff = cfg.model.d_ff;
    mc.max_seq_len = cfg.model.max_seq_len;
    mc.vocab_size = vocab.total_size();
    mc.n_codes = vocab.n_codes();
    mc.speech_base = vocab.speech_base();
    mc.coarse_k = coarse_k_effective;
    mc.d_ssl = cfg.world.feature_dim;
    mc.init_std = cfg.model.init_std;
    mc.align_trainable = cfg.model.align_trainable;
    mc.validate();
    return mc;
}

// Overwrites the speech-token embedding rows and installs the fitted
// projection as the alignment head's starting point.
template <class T>
void install_distilled_init(Parameters<T>& params, const ModelConfig& mc,
                            const DistillArtifacts& d) {
    require(int(d.embed_init.rows()) == mc.n_codes && int(d.embed_init.cols()) == mc.d_model,
            ErrorCode::invalid_argument, "install_distilled_init: embedding shape mismatch");
    require(d.projection.d_model() == mc.d_model && d.projection.d_ssl() == mc.d_ssl,
            ErrorCode::invalid_argument, "install_distilled_init: projection shape mismatch");
    for (int k = 0; k < mc.n_codes; ++k)
        params.tok_embed.row(mc.speech_base + k) = d.embed_init.row(k).template cast<T>();
    params.align_w = d.projection.weight.template cast<T>();
    params.align_b.row(0) = d.projection.bias.transpose().template cast<T>();
}

inline TrainSet build_train_set(const UnifiedVocab& vocab, const std::vector<FrameStream>& corpus,
                                const RunConfig& cfg, const CoarseMap* coarse) {
    TrainSet set;
    set.vocab = &vocab;
    set.coarse = coarse;
    set.thin = cfg.augment.thin;
    set.augment = cfg.augment.enabled;
    set.aux_delta = cfg.train.aux_delta;
    set.base.reserve(corpus.size());
    set.features.reserve(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (cfg.interleave.enabled)
            set.base.push_back(interleave(corpus[i], vocab, cfg.interleave.budget,
                                          derive_seed(cfg.data.seed, "interleave", uint64_t(i))));
        else
            set.base.push_back(speech_only_sequence(corpus[i], vocab));
        set.features.push_back(corpus[i].features);
    }
    return set;
}

inline TrainPlan build_train_plan(const RunConfig& cfg) {
    TrainPlan plan;
    plan.batch_size = cfg.train.batch_size;
    plan.total_steps = cfg.train.total_steps;
    plan.weights = cfg.train.weights;
    plan.adamw = cfg.train.adamw;
    plan.schedule = cfg.train.schedule;
    plan.checkpoint_steps = cfg.train.checkpoint_steps;
    plan.checkpoint_every = cfg.train.checkpoint_every;
    plan.log_every = cfg.train.log_every;
    return plan;
}

// ---------------------------------------------------------------------------
// Evaluation plumbing shared by the studies and the CLI.
// ---------------------------------------------------------------------------

template <class T>
std::function<double(const MixedSequence&)> make_model_scorer(const ModelConfig& mc,
                                                              const Parameters<T>& params) {
    auto model = std::make_shared<Transformer<T>>(mc);
    const Parameters<T>* p = &params;
    return [model, p](const MixedSequence& seq) { return score_sequence(*model, *p, seq).score; };
}

inline std::vector<std::pair<MixedSequence, MixedSequence>> pair_sequences(
    const std::vector<PreferenceStreams>& pairs, const UnifiedVocab& vocab) {
    std::vector<std::pair<MixedSequence, MixedSequence>> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs)
        out.emplace_back(speech_only_sequence(p.natural, vocab),
                         speech_only_sequence(p.perturbed, vocab));
    return out;
}

template <class T>
PreferenceOutcome model_preference(const ModelConfig& mc, const Parameters<T>& params,
                                   const std::vector<PreferenceStreams>& pairs,
                                   const UnifiedVocab& vocab) {
    return preference_eval(pair_sequences(pairs, vocab), make_model_scorer<T>(mc, params));
}

// Pooled hidden features + factor labels for the probe.
template <class T>
void probe_features(const ModelConfig& mc, const Parameters<T>& params,
                    const std::vector<FrameStream>& corpus, const UnifiedVocab& vocab,
                    Factor factor, MatD& X, std::vector<int>& y) {
    Transformer<T> model(mc);
    X.resize(long(corpus.size()), mc.d_model);
    y.resize(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        MixedSequence seq = speech_only_sequence(corpus[i], vocab);
        X.row(long(i)) = pooled_hidden(model, params, seq).transpose();
        y[i] = factor == Factor::speaker      ? corpus[i].latents.speaker
               : factor == Factor::background ? corpus[i].latents.background
                                              : corpus[i].latents.content;
    }
}

template <class T>
double probe_accuracy(const ModelConfig& mc, const Parameters<T>& params,
                      const std::vector<FrameStream>& corpus, const UnifiedVocab& vocab,
                      Factor factor, const EvalConfig& ec) {
    MatD X;
    std::vector<int> y;
    probe_features<T>(mc, params, corpus, vocab, factor, X, y);
    int n_classes = 0;
    for (int label : y) n_classes = std::max(n_classes, label + 1);
    ProbeResult pr = linear_probe(X, y, n_classes, ec.probe_seed, ec.probe_epochs, ec.probe_lr,
                                  ec.probe_l2);
    return pr.test_accuracy;
}

// ---------------------------------------------------------------------------
// Study drivers.
// ---------------------------------------------------------------------------

// Trains one model under `cfg` (weights per `weights`), from either random or
// distilled init, calling `milestone` after each requested step count.
template <class T>
TrainerState<T> train_model(const RunConfig& cfg, const World& w,
                            const std::vector<FrameStream>& corpus,
                            const DistillArtifacts* distilled, const LossWeights& weights,
                            uint64_t run_seed,
                            const std::vector<long>& milestones = {},
                            const std::function<void(long, TrainerState<T>&)>& milestone = {}) {
    CoarseMap fallback;
    const CoarseMap* coarse = distilled ? &distilled->coarse : nullptr;
    if (!coarse) {
        // Aux labels need a bucket map even when init stays random; fit one
        // from the corpus (it uses only frozen features, never the model).
        Centroids cen = fit_centroids(corpus, w.codebook.n_codes());
        int k_eff = std::min(cfg.distill.coarse_k, cen.populated_count());
        fallback = fit_coarse(cen, k_eff, derive_seed(cfg.data.seed, "coarse"));
        coarse = &fallback;
    }

    ModelConfig mc = resolve_model_config(cfg, w.vocab, coarse->K);
    TrainSet set = build_train_set(w.vocab, corpus, cfg, coarse);
    TrainerState<T> st = make_trainer<T>(mc, cfg.train.adamw, run_seed);
    if (distilled) install_distilled_init<T>(st.params, mc, *distilled);

    TrainPlan plan = build_train_plan(cfg);
    plan.weights = weights;
    plan.checkpoint_dir.clear();  // studies keep everything in memory
    plan.journal_path.clear();
    plan.final_checkpoint = false;

    std::vector<long> stops = milestones;
    stops.push_back(cfg.train.total_steps);
    long prev = -1;
    for (long stop : stops) {
        require(stop >= prev, ErrorCode::invalid_argument, "train_model: milestones must ascend");
        prev = stop;
        TrainPlan seg = plan;
        seg.total_steps = stop;
        train_run(st, set, seg);
        if (milestone && stop < cfg.train.total_steps) milestone(stop, st);
    }
    return st;
}

struct AblationSeedResult {
    uint64_t seed = 0;
    double acc_plus = 0.0;
    double acc_minus = 0.0;
};

struct AblationReport {
    std::vector<AblationSeedResult> per_seed;
    double mean_plus = 0.0;
    double mean_minus = 0.0;
    double mean_diff = 0.0;
    Factor factor = Factor::speaker;
};

// Guards the controlled-experiment contract: the two weight sets may differ
// only in the auxiliary terms.
inline void require_aux_only_diff(const LossWeights& plus, const LossWeights& minus) {
    require(plus.main == minus.main && plus.ssl == minus.ssl, ErrorCode::invalid_argument,
            "ablation: configurations differ outside the auxiliary weights");
    require(minus.coarse == 0.0 && minus.next == 0.0, ErrorCode::invalid_argument,
            "ablation: the minus-aux configuration must zero both auxiliary weights");
}

inline AblationReport run_ablation(const RunConfig& cfg, const World& w,
                                   const std::vector<FrameStream>& corpus,
                                   const std::vector<PreferenceStreams>& pairs,
                                   const std::vector<uint64_t>& seeds, Factor factor) {
    require(!seeds.empty(), ErrorCode::invalid_argument, "ablation: need at least one seed");
    LossWeights plus = cfg.train.weights;
    LossWeights minus = plus;
    minus.coarse = 0.0;
    minus.next = 0.0;
    require_aux_only_diff(plus, minus);

    AblationReport rep;
    rep.factor = factor;
    for (uint64_t seed : seeds) {
        AblationSeedResult r;
        r.seed = seed;
        auto st_plus = train_model<float>(cfg, w, corpus, nullptr, plus, seed);
        auto st_minus = train_model<float>(cfg, w, corpus, nullptr, minus, seed);
        r.acc_plus = model_preference<float>(st_plus.config, st_plus.params, pairs, w.vocab).accuracy;
        r.acc_minus =
            model_preference<float>(st_minus.config, st_minus.params, pairs, w.vocab).accuracy;
        rep.per_seed.push_back(r);
        rep.mean_plus += r.acc_plus;
        rep.mean_minus += r.acc_minus;
    }
    rep.mean_plus /= double(seeds.size());
    rep.mean_minus /= double(seeds.size());
    rep.mean_diff = rep.mean_plus - rep.mean_minus;
    return rep;
}

struct InitStageResult {
    uint64_t seed = 0;
    // content-probe accuracy at the 10%, 40%, and 100% checkpoints
    double distilled[3] = {0, 0, 0};
    double random[3] = {0, 0, 0};
};

struct InitStageReport {
    std::vector<InitStageResult> per_seed;
    double mean_distilled[3] = {0, 0, 0};
    double mean_random[3] = {0, 0, 0};
};

inline InitStageReport run_init_stages(const RunConfig& cfg, const World& w,
                                       const std::vector<FrameStream>& corpus,
                                       const std::vector<FrameStream>& probe_corpus,
                                       const DistillArtifacts& distilled,
                                       const std::vector<uint64_t>& seeds) {
    require(!seeds.empty(), ErrorCode::invalid_argument, "init stages: need at least one seed");
    long total = cfg.train.total_steps;
    std::vector<long> stones = {total / 10, (total * 4) / 10};
    InitStageReport rep;
    for (uint64_t seed : seeds) {
        InitStageResult r;
        r.seed = seed;
        for (int variant = 0; variant < 2; ++variant) {
            const DistillArtifacts* init = variant == 0 ? &distilled : nullptr;
            double* acc = variant == 0 ? r.distilled : r.random;
            int idx = 0;
            auto on_stone = [&](long, TrainerState<float>& st) {
                acc[idx++] = probe_accuracy<float>(st.config, st.params, probe_corpus, w.vocab,
                                                   Factor::content, cfg.eval);
            };
            auto st = train_model<float>(cfg, w, corpus, init, cfg.train.weights, seed, stones,
                                         on_stone);
            acc[2] = probe_accuracy<float>(st.config, st.params, probe_corpus, w.vocab,
                                           Factor::content, cfg.eval);
        }
        rep.per_seed.push_back(r);
        for (int i = 0; i < 3; ++i) {
            rep.mean_distilled[i] += r.distilled[i];
            rep.mean_random[i] += r.random[i];
        }
    }
    for (int i = 0; i < 3; ++i) {
        rep.mean_distilled[i] /= double(seeds.size());
        rep.mean_random[i] /= double(seeds.size());
    }
    return rep;
}

struct InterleaveSeedResult {
    uint64_t seed = 0;
    double speech_only_pref = 0.0;
    double interleaved_pref = 0.0;
    double speech_only_probe = 0.0;
    double interleaved_probe = 0.0;
};

struct InterleaveReport {
    std::vector<InterleaveSeedResult> per_seed;
    double mean_speech_only_pref = 0.0;
    double mean_interleaved_pref = 0.0;
    double mean_speech_only_probe = 0.0;
    double mean_interleaved_probe = 0.0;
};

inline InterleaveReport run_interleave_study(const RunConfig& cfg, const World& w,
                                             const std::vector<FrameStream>& corpus,
                                             const std::vector<FrameStream>& probe_corpus,
                                             const std::vector<PreferenceStreams>& speaker_pairs,
                                             const std::vector<uint64_t>& seeds) {
    require(!seeds.empty(), ErrorCode::invalid_argument, "interleave study: need a seed");
    RunConfig cfg_speech = cfg;
    cfg_speech.interleave.enabled = false;
    RunConfig cfg_mix = cfg;
    cfg_mix.interleave.enabled = true;

    InterleaveReport rep;
    for (uint64_t seed : seeds) {
        InterleaveSeedResult r;
        r.seed = seed;
        auto st_speech =
            train_model<float>(cfg_speech, w, corpus, nullptr, cfg.train.weights, seed);
        auto st_mix = train_model<float>(cfg_mix, w, corpus, nullptr, cfg.train.weights, seed);
        r.speech_only_pref =
            model_preference<float>(st_speech.config, st_speech.params, speaker_pairs, w.vocab)
                .accuracy;
        r.interleaved_pref =
            model_preference<float>(st_mix.config, st_mix.params, speaker_pairs, w.vocab).accuracy;
        r.speech_only_probe = probe_accuracy<float>(st_speech.config, st_speech.params,
                                                    probe_corpus, w.vocab, Factor::content, cfg.eval);
        r.interleaved_probe = probe_accuracy<float>(st_mix.config, st_mix.params, probe_corpus,
                                                    w.vocab, Factor::content, cfg.eval);
        rep.per_seed.push_back(r);
        rep.mean_speech_only_pref += r.speech_only_pref;
        rep.mean_interleaved_pref += r.interleaved_pref;
        rep.mean_speech_only_probe += r.speech_only_probe;
        rep.mean_interleaved_probe += r.interleaved_probe;
    }
    double n = double(seeds.size());
    rep.mean_speech_only_pref /= n;
    rep.mean_interleaved_pref /= n;
    rep.mean_speech_only_probe /= n;
    rep.mean_interleaved_probe /= n;
    return rep;
}

}  // namespace unitlm
