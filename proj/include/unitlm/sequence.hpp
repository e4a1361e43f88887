#pragma once

// MixedSequence: one training/scoring record over the unified vocabulary.
// Positions carry a modality flag, a target mask, optional auxiliary labels,
// and the originating frame index for audio positions (the hook that keeps
// alignment features attached across augmentation).

#include <string>
#include <vector>

#include <json.hpp>

#include "unitlm/common.hpp"
#include "unitlm/distill.hpp"
#include "unitlm/synth.hpp"
#include "unitlm/vocab.hpp"

namespace unitlm {

using Json = nlohmann::json;

enum class Modality : uint8_t { text = 0, audio = 1, delimiter = 2, special = 3 };

struct MixedSequence {
    std::vector<TokenId> ids;
    std::vector<Modality> modality;
    std::vector<bool> loss_mask;      // position participates as a prediction target
    std::vector<int> coarse_labels;   // per-position bucket target, -1 when absent
    std::vector<int> code_labels;     // per-position next-code target, -1 when absent
    std::vector<int> frame_index;     // original frame for audio positions, -1 otherwise

    // Interleaving metadata: achieved text-duration fraction and whether the
    // requested budget was attainable. Speech-only sequences report 0 / true.
    double text_fraction = 0.0;
    bool budget_ok = true;

    int length() const { return int(ids.size()); }

    void check_consistent() const {
        size_t n = ids.size();
        require(modality.size() == n && loss_mask.size() == n && coarse_labels.size() == n &&
                    code_labels.size() == n && frame_index.size() == n,
                ErrorCode::invalid_argument, "MixedSequence: field lengths differ");
    }
};

// [Speech] c_0 ... c_{T-1} </s>. Position 0 is never a target.
inline MixedSequence speech_only_sequence(const FrameStream& stream, const UnifiedVocab& vocab) {
    MixedSequence s;
    int T = stream.length();
    s.ids.reserve(size_t(T) + 2);
    auto push = [&](TokenId id, Modality m, bool mask, int frame) {
        s.ids.push_back(id);
        s.modality.push_back(m);
        s.loss_mask.push_back(mask);
        s.coarse_labels.push_back(-1);
        s.code_labels.push_back(-1);
        s.frame_index.push_back(frame);
    };
    push(vocab.speech_delim_id(), Modality::delimiter, false, -1);
    for (int t = 0; t < T; ++t)
        push(vocab.speech_id(stream.codes[size_t(t)]), Modality::audio, true, t);
    push(vocab.eos_id(), Modality::special, true, -1);
    return s;
}

// Auxiliary labels: at audio position t with an audio position at t + delta,
// the coarse head targets that future token's bucket and the next-code head
// targets its codec index. Everywhere else the labels stay absent.
inline void fill_aux_labels(MixedSequence& seq, const UnifiedVocab& vocab,
                            const CoarseMap& coarse, int delta) {
    require(delta >= 1, ErrorCode::invalid_argument, "fill_aux_labels: delta must be >= 1");
    require(coarse.n_codes() == vocab.n_codes(), ErrorCode::invalid_argument,
            "fill_aux_labels: coarse map code count mismatch");
    int T = seq.length();
    for (int t = 0; t < T; ++t) {
        seq.coarse_labels[size_t(t)] = -1;
        seq.code_labels[size_t(t)] = -1;
        if (seq.modality[size_t(t)] != Modality::audio) continue;
        int u = t + delta;
        if (u >= T || seq.modality[size_t(u)] != Modality::audio) continue;
        int code = vocab.code_of(seq.ids[size_t(u)]);
        seq.code_labels[size_t(t)] = code;
        seq.coarse_labels[size_t(t)] = coarse.bucket_of[size_t(code)];
    }
}

// Trailing pad positions: mask off, never targets, never context that
// precedes a target. Scoring trims them; tests use this to build padded
// variants.
inline MixedSequence append_padding(const MixedSequence& seq, const UnifiedVocab& vocab, int n) {
    MixedSequence s = seq;
    for (int i = 0; i < n; ++i) {
        s.ids.push_back(vocab.pad_id());
        s.modality.push_back(Modality::special);
        s.loss_mask.push_back(false);
        s.coarse_labels.push_back(-1);
        s.code_labels.push_back(-1);
        s.frame_index.push_back(-1);
    }
    return s;
}

// JSON-lines form, schema-versioned, modality run-length encoded.
inline Json mixed_sequence_to_json(const MixedSequence& seq) {
    seq.check_consistent();
    Json j;
    j["v"] = 1;
    j["ids"] = seq.ids;
    Json runs = Json::array();
    int i = 0;
    while (i < seq.length()) {
        int jx = i;
        while (jx < seq.length() && seq.modality[size_t(jx)] == seq.modality[size_t(i)]) ++jx;
        runs.push_back(Json::array({int(seq.modality[size_t(i)]), jx - i}));
        i = jx;
    }
    j["modality_rle"] = std::move(runs);
    std::vector<int> mask(seq.loss_mask.size());
    for (size_t k = 0; k < seq.loss_mask.size(); ++k) mask[k] = seq.loss_mask[k] ? 1 : 0;
    j["loss_mask"] = mask;
    j["coarse_labels"] = seq.coarse_labels;
    j["code_labels"] = seq.code_labels;
    j["frame_index"] = seq.frame_index;
    j["text_fraction"] = seq.text_fraction;
    j["budget_ok"] = seq.budget_ok;
    return j;
}

inline MixedSequence mixed_sequence_from_json(const Json& j) {
    require(j.value("v", 0) == 1, ErrorCode::version_mismatch,
            "mixed sequence record: unsupported schema version");
    MixedSequence s;
    s.ids = j.at("ids").get<std::vector<TokenId>>();
    for (const auto& run : j.at("modality_rle")) {
        int flag = run[0].get<int>();
        int len = run[1].get<int>();
        require(flag >= 0 && flag <= 3 && len >= 0, ErrorCode::format,
                "mixed sequence record: bad modality run");
        for (int k = 0; k < len; ++k) s.modality.push_back(Modality(flag));
    }
    for (int v : j.at("loss_mask").get<std::vector<int>>()) s.loss_mask.push_back(v != 0);
    s.coarse_labels = j.at("coarse_labels").get<std::vector<int>>();
    s.code_labels = j.at("code_labels").get<std::vector<int>>();
    s.frame_index = j.at("frame_index").get<std::vector<int>>();
    s.text_fraction = j.value("text_fraction", 0.0);
    s.budget_ok = j.value("budget_ok", true);
    s.check_consistent();
    require(s.modality.size() == s.ids.size(), ErrorCode::format,
            "mixed sequence record: modality length mismatch");
    return s;
}

}  // namespace unitlm
