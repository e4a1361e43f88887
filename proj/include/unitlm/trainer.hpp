#pragma once

// Training loop. All sampling — record selection and per-draw augmentation —
// is a pure function of (run_seed, global draw counter), so a run resumed
// from a checkpoint replays the exact byte-for-byte trajectory of the
// uninterrupted run: no hidden RNG cursor exists outside the step index.

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unitlm/checkpoint.hpp"
#include "unitlm/interleave.hpp"
#include "unitlm/loss.hpp"
#include "unitlm/model.hpp"
#include "unitlm/optimizer.hpp"
#include "unitlm/sequence.hpp"

namespace unitlm {

// Frozen training data: pre-built base sequences (speech-only or interleaved),
// the matching per-record feature matrices in original frame coordinates, and
// the augmentation recipe applied per draw.
struct TrainSet {
    const UnifiedVocab* vocab = nullptr;
    const CoarseMap* coarse = nullptr;  // required whenever aux labels are needed
    std::vector<MixedSequence> base;
    std::vector<MatD> features;  // per record: n_frames x d_ssl
    ThinSpec thin;
    bool augment = true;
    int aux_delta = 1;

    void validate() const {
        require(vocab != nullptr, ErrorCode::invalid_argument, "TrainSet: vocab is required");
        require(!base.empty(), ErrorCode::invalid_argument, "TrainSet: no training records");
        require(base.size() == features.size(), ErrorCode::invalid_argument,
                "TrainSet: record/feature count mismatch");
        require(aux_delta >= 1, ErrorCode::invalid_argument, "TrainSet: aux_delta must be >= 1");
        thin.validate();
    }
};

struct TrainPlan {
    int batch_size = 8;
    long total_steps = 300;
    LossWeights weights;
    AdamWConfig adamw;
    LrSchedule schedule;
    std::vector<long> checkpoint_steps;
    long checkpoint_every = 0;
    std::string checkpoint_dir;  // empty disables checkpointing
    std::string journal_path;    // empty disables the journal
    bool final_checkpoint = true;
    int log_every = 25;

    void validate() const {
        require(batch_size >= 1, ErrorCode::invalid_argument, "TrainPlan: batch_size must be >= 1");
        require(total_steps >= 0, ErrorCode::invalid_argument,
                "TrainPlan: total_steps must be >= 0");
        require(checkpoint_every >= 0, ErrorCode::invalid_argument,
                "TrainPlan: checkpoint_every must be >= 0");
        weights.validate();
        adamw.validate();
        schedule.validate();
        for (long s : checkpoint_steps)
            require(s >= 1, ErrorCode::invalid_argument, "TrainPlan: checkpoint steps start at 1");
    }
};

template <class T>
struct TrainerState {
    ModelConfig config;
    Parameters<T> params;
    AdamW<T> opt;
    long step = 0;  // completed optimizer steps
    uint64_t run_seed = 0;
    Parameters<T> grad_buf;  // scratch, not part of the persisted state
};

template <class T>
TrainerState<T> make_trainer(const ModelConfig& mc, const AdamWConfig& oc, uint64_t run_seed) {
    TrainerState<T> st;
    st.config = mc;
    st.params = init_parameters<T>(mc, derive_seed(run_seed, "init"));
    st.opt = AdamW<T>(mc, oc);
    st.run_seed = run_seed;
    st.grad_buf = Parameters<T>::shaped(mc);
    return st;
}

template <class T>
TrainerState<T> trainer_from_checkpoint(const LoadedCheckpoint<T>& ck) {
    TrainerState<T> st;
    st.config = ck.config;
    st.params = ck.params;
    st.opt = ck.opt;
    st.step = ck.step;
    st.run_seed = ck.run_seed;
    st.grad_buf = Parameters<T>::shaped(ck.config);
    return st;
}

// Record drawn for slot `slot` of step `step`: uniform with replacement,
// derived from the run seed and the global draw counter alone.
inline size_t draw_record_index(uint64_t data_seed, long step, int slot, int batch_size,
                                size_t n_records) {
    uint64_t counter = uint64_t(step) * uint64_t(batch_size) + uint64_t(slot);
    return size_t(derive_seed(data_seed, "record", counter) % uint64_t(n_records));
}

// What one draw applied, for the journal's audit trail.
struct DrawLog {
    size_t record = 0;
    std::vector<Augmentation> augment;  // per contiguous audio run: rate + erased spans
};

// Materializes the training example for one draw: per-draw audio augmentation,
// auxiliary labels, and feature rows gathered into augmented coordinates.
template <class T>
void materialize_example(const TrainSet& set, size_t rec, uint64_t aug_seed, bool need_aux,
                         MixedSequence& seq_out, Mat<T>& feat_out,
                         std::vector<Augmentation>* applied = nullptr) {
    seq_out = set.augment ? apply_audio_augment(set.base[rec], set.thin, aug_seed, applied)
                          : set.base[rec];
    if (need_aux) {
        require(set.coarse != nullptr, ErrorCode::invalid_argument,
                "train: auxiliary loss weights are positive but no coarse map is installed");
        fill_aux_labels(seq_out, *set.vocab, *set.coarse, set.aux_delta);
    }
    feat_out = gather_features<T>(seq_out, set.features[rec]);
}

template <class T>
LossStats train_step(TrainerState<T>& st, const TrainSet& set, const LossWeights& weights,
                     const LrSchedule& schedule, int batch_size,
                     std::vector<DrawLog>* draws = nullptr) {
    set.validate();
    require(batch_size >= 1, ErrorCode::invalid_argument, "train_step: batch_size must be >= 1");
    const long s = st.step;
    const uint64_t data_seed = derive_seed(st.run_seed, "data");
    const bool need_aux = weights.coarse > 0 || weights.next > 0 || set.coarse != nullptr;

    Transformer<T> model(st.config);
    std::vector<MixedSequence> seqs(static_cast<size_t>(batch_size));
    std::vector<LossExample<T>> batch(static_cast<size_t>(batch_size));
    if (draws) draws->assign(size_t(batch_size), DrawLog{});
    for (int i = 0; i < batch_size; ++i) {
        size_t rec = draw_record_index(data_seed, s, i, batch_size, set.base.size());
        uint64_t counter = uint64_t(s) * uint64_t(batch_size) + uint64_t(i);
        uint64_t aug_seed = derive_seed(data_seed, "augment", counter);
        std::vector<Augmentation>* applied = draws ? &(*draws)[size_t(i)].augment : nullptr;
        if (draws) (*draws)[size_t(i)].record = rec;
        materialize_example<T>(set, rec, aug_seed, need_aux, seqs[size_t(i)],
                               batch[size_t(i)].features, applied);
        batch[size_t(i)].seq = &seqs[size_t(i)];
    }

    st.grad_buf.set_zero();
    LossStats stats;
    try {
        stats = compute_loss<T>(model, st.params, batch, weights, &st.grad_buf);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite)
            fail(ErrorCode::non_finite,
                 std::string(e.what()) + " at step " + std::to_string(s));
        throw;
    }
    st.opt.update(st.params, st.grad_buf, schedule.lr_at(s));
    ++st.step;
    return stats;
}

inline std::string journal_line(long step, double lr, const LossStats& st,
                                const std::vector<DrawLog>& draws) {
    nlohmann::json j{{"step", step},          {"lr", lr},
                     {"total", st.total},     {"main", st.main},
                     {"ssl", st.ssl},         {"coarse", st.coarse},
                     {"next", st.next},       {"targets", st.main_count},
                     {"audio", st.audio_count}};
    nlohmann::json jd = nlohmann::json::array();
    for (const auto& d : draws) {
        nlohmann::json spans_all = nlohmann::json::array();
        nlohmann::json rates = nlohmann::json::array();
        for (const auto& a : d.augment) {
            rates.push_back(a.rate);
            nlohmann::json spans = nlohmann::json::array();
            for (const auto& sp : a.spans) spans.push_back({sp.start, sp.len});
            spans_all.push_back(spans);
        }
        jd.push_back({{"rec", d.record}, {"r", rates}, {"erased", spans_all}});
    }
    j["draws"] = jd;
    return j.dump();
}

inline std::string checkpoint_file(const std::string& dir, long step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint-%06ld.bin", step);
    return dir + "/" + buf;
}

// Runs from the state's current step up to plan.total_steps. Appends to the
// journal, so a resumed run continues the same file where the interrupted one
// stopped. Journal lines carry no wall-clock fields: identical trajectories
// produce identical bytes.
template <class T>
void train_run(TrainerState<T>& st, const TrainSet& set, const TrainPlan& plan,
               std::ostream* echo = nullptr) {
    plan.validate();
    set.validate();
    require(st.step <= plan.total_steps, ErrorCode::invalid_argument,
            "train_run: state is already past total_steps");

    std::ofstream journal;
    if (!plan.journal_path.empty()) {
        journal.open(plan.journal_path, std::ios::app);
        require(journal.good(), ErrorCode::io, "train_run: cannot open journal " + plan.journal_path);
    }
    auto should_checkpoint = [&](long completed) {
        if (plan.checkpoint_dir.empty()) return false;
        if (plan.checkpoint_every > 0 && completed % plan.checkpoint_every == 0) return true;
        for (long cs : plan.checkpoint_steps)
            if (cs == completed) return true;
        return false;
    };

    std::vector<DrawLog> draws;
    while (st.step < plan.total_steps) {
        const long s = st.step;
        const double lr = plan.schedule.lr_at(s);
        LossStats stats = train_step(st, set, plan.weights, plan.schedule, plan.batch_size,
                                     journal.is_open() ? &draws : nullptr);
        if (journal.is_open()) journal << journal_line(s, lr, stats, draws) << "\n";
        if (echo && plan.log_every > 0 && (s % plan.log_every == 0 || st.step == plan.total_steps))
            (*echo) << "step " << s << " total " << stats.total << " main " << stats.main
                    << " ssl " << stats.ssl << " coarse " << stats.coarse << " next "
                    << stats.next << "\n";
        if (should_checkpoint(st.step))
            save_checkpoint<T>(checkpoint_file(plan.checkpoint_dir, st.step), st.config, st.params,
                               st.opt, st.step, st.run_seed);
    }
    if (journal.is_open()) {
        journal.flush();
        require(journal.good(), ErrorCode::io, "train_run: journal write failed");
    }
    if (plan.final_checkpoint && !plan.checkpoint_dir.empty())
        save_checkpoint<T>(plan.checkpoint_dir + "/final.bin", st.config, st.params, st.opt,
                           st.step, st.run_seed);
}

}  // namespace unitlm
