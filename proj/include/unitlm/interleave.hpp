#pragma once

// Chronological text-audio interleaving and audio-only augmentation of mixed
// sequences. Text spans replace the audio tokens inside their time window;
// every modality change opens with its delimiter.

#include <algorithm>
#include <vector>

#include "unitlm/augment.hpp"
#include "unitlm/common.hpp"
#include "unitlm/rng.hpp"
#include "unitlm/sequence.hpp"
#include "unitlm/synth.hpp"
#include "unitlm/vocab.hpp"

namespace unitlm {

struct InterleaveBudget {
    double lo = 0.35;
    double hi = 0.55;
    int max_windows = 3;

    void validate() const {
        require(lo > 0.0 && hi < 1.0 && lo <= hi, ErrorCode::invalid_argument,
                "InterleaveBudget: need 0 < lo <= hi < 1");
        require(max_windows >= 1, ErrorCode::invalid_argument,
                "InterleaveBudget: max_windows must be >= 1");
    }
};

namespace interleave_detail {

struct WordWindow {
    int first = 0;  // word index range [first, last)
    int last = 0;
};

inline double window_duration(const std::vector<Word>& words, const WordWindow& w) {
    double d = 0.0;
    for (int i = w.first; i < w.last; ++i) d += words[size_t(i)].end - words[size_t(i)].start;
    return d;
}

}  // namespace interleave_detail

// Merge one utterance's audio tokens and word track into alternating spans.
// Word-aligned windows totaling a duration fraction f ~ U[lo, hi] are chosen
// at random positions; inside a window the words' text tokens stand in for
// the audio, outside the audio tokens stay. When the word granularity cannot
// land inside the budget the closest achievable fraction is used and the
// record is flagged (budget_ok = false), never silently accepted.
inline MixedSequence interleave(const FrameStream& stream, const UnifiedVocab& vocab,
                                const InterleaveBudget& budget, uint64_t seed) {
    budget.validate();
    require(!stream.words.empty(), ErrorCode::invalid_argument,
            "interleave: stream has no word track");
    const int n_words = int(stream.words.size());
    const int T = stream.length();
    require(T >= 1, ErrorCode::invalid_argument, "interleave: empty stream");
    const double total = stream.times.back().second - stream.times.front().first;
    require(total > 0.0, ErrorCode::invalid_argument, "interleave: degenerate duration");

    using interleave_detail::WordWindow;
    using interleave_detail::window_duration;

    Rng rng(derive_seed(seed, "interleave"));
    const double f_target = rng.uniform(budget.lo, budget.hi);
    int n_windows = 1 + int(rng.uniform_int(uint64_t(budget.max_windows)));
    n_windows = std::min(n_windows, n_words);

    // Seed each window at a random word, then grow windows one word at a time
    // (right edge first, then left) until the duration target is met or no
    // growth is possible. Windows never touch: a one-word gap is kept so
    // spans genuinely alternate.
    std::vector<WordWindow> windows;
    std::vector<bool> taken(size_t(n_words), false);
    auto can_take = [&](int i) { return i >= 0 && i < n_words && !taken[size_t(i)]; };
    auto take = [&](int i) { taken[size_t(i)] = true; };
    for (int w = 0; w < n_windows; ++w) {
        int tries = 0;
        int anchor = -1;
        while (tries++ < 64) {
            int cand = int(rng.uniform_int(uint64_t(n_words)));
            // Require a free slot with free margins so windows stay separated.
            bool margin_ok = can_take(cand) && (cand == 0 || !taken[size_t(cand - 1)]) &&
                             (cand == n_words - 1 || !taken[size_t(cand + 1)]);
            if (margin_ok) {
                anchor = cand;
                break;
            }
        }
        if (anchor < 0) break;
        take(anchor);
        windows.push_back(WordWindow{anchor, anchor + 1});
    }
    require(!windows.empty(), ErrorCode::invalid_argument, "interleave: no window could be seeded");

    auto achieved = [&]() {
        double d = 0.0;
        for (const auto& w : windows) d += window_duration(stream.words, w);
        return d / total;
    };

    // Grow round-robin until the sampled target is reached.
    bool grew = true;
    while (achieved() < f_target && grew) {
        grew = false;
        for (auto& w : windows) {
            if (achieved() >= f_target) break;
            // Keep one free word between windows (margin of 2 from any taken
            // word that is not ours).
            int right = w.last;
            if (can_take(right) && (right + 1 >= n_words || !taken[size_t(right + 1)])) {
                take(right);
                w.last++;
                grew = true;
                continue;
            }
            int left = w.first - 1;
            if (can_take(left) && (left - 1 < 0 || !taken[size_t(left - 1)])) {
                take(left);
                w.first--;
                grew = true;
            }
        }
    }
    // Trim back if the last growth step overshot past the budget ceiling.
    while (achieved() > budget.hi) {
        bool shrunk = false;
        for (auto& w : windows) {
            if (achieved() <= budget.hi) break;
            if (w.last - w.first > 1) {
                taken[size_t(w.last - 1)] = false;
                w.last--;
                shrunk = true;
            }
        }
        if (!shrunk) break;  // single-word windows cannot shrink further
    }

    const double f_achieved = achieved();
    const bool ok = f_achieved >= budget.lo && f_achieved <= budget.hi;

    // Emit chronologically. A frame is replaced when its midpoint falls in a
    // window's word time span.
    std::sort(windows.begin(), windows.end(),
              [](const WordWindow& a, const WordWindow& b) { return a.first < b.first; });
    std::vector<int> window_of_frame(size_t(T), -1);
    for (size_t wi = 0; wi < windows.size(); ++wi) {
        double ws = stream.words[size_t(windows[wi].first)].start;
        double we = stream.words[size_t(windows[wi].last - 1)].end;
        for (int t = 0; t < T; ++t) {
            double mid = 0.5 * (stream.times[size_t(t)].first + stream.times[size_t(t)].second);
            if (mid >= ws && mid < we) window_of_frame[size_t(t)] = int(wi);
        }
    }

    MixedSequence s;
    s.text_fraction = f_achieved;
    s.budget_ok = ok;
    auto push = [&](TokenId id, Modality m, bool mask, int frame) {
        s.ids.push_back(id);
        s.modality.push_back(m);
        s.loss_mask.push_back(mask);
        s.coarse_labels.push_back(-1);
        s.code_labels.push_back(-1);
        s.frame_index.push_back(frame);
    };

    int t = 0;
    int current = -2;  // -2: nothing emitted yet, -1: in audio span, >= 0: that window
    while (t < T) {
        int wi = window_of_frame[size_t(t)];
        if (wi >= 0) {
            if (current != wi) {
                push(vocab.text_delim_id(), Modality::delimiter, current != -2, -1);
                for (int i = windows[size_t(wi)].first; i < windows[size_t(wi)].last; ++i)
                    push(vocab.text_id(stream.words[size_t(i)].symbol), Modality::text, true, -1);
                current = wi;
            }
            ++t;  // frame consumed by the window's words
        } else {
            if (current != -1) {
                push(vocab.speech_delim_id(), Modality::delimiter, current != -2, -1);
                current = -1;
            }
            push(vocab.speech_id(stream.codes[size_t(t)]), Modality::audio, true, t);
            ++t;
        }
    }
    push(vocab.eos_id(), Modality::special, true, -1);
    if (!s.loss_mask.empty()) s.loss_mask[0] = false;
    return s;
}

// Thin and erase each contiguous audio span independently; text spans and
// delimiters pass through bit-identical. Labels realign implicitly: targets
// are recomputed on the surviving sequence, and the last token of a span
// bridges to whatever follows it.
inline MixedSequence apply_audio_augment(const MixedSequence& seq, const ThinSpec& spec,
                                         uint64_t seed,
                                         std::vector<Augmentation>* applied = nullptr) {
    seq.check_consistent();
    spec.validate();
    MixedSequence out;
    out.text_fraction = seq.text_fraction;
    out.budget_ok = seq.budget_ok;
    const int T = seq.length();
    int span_index = 0;
    int t = 0;
    while (t < T) {
        if (seq.modality[size_t(t)] != Modality::audio) {
            out.ids.push_back(seq.ids[size_t(t)]);
            out.modality.push_back(seq.modality[size_t(t)]);
            out.loss_mask.push_back(seq.loss_mask[size_t(t)]);
            out.coarse_labels.push_back(-1);
            out.code_labels.push_back(-1);
            out.frame_index.push_back(seq.frame_index[size_t(t)]);
            ++t;
            continue;
        }
        int e = t;
        while (e < T && seq.modality[size_t(e)] == Modality::audio) ++e;
        std::vector<TokenId> run(seq.ids.begin() + t, seq.ids.begin() + e);
        Augmentation aug =
            sample_augmentation(spec, int(run.size()), derive_seed(seed, "audio-span", uint64_t(span_index)));
        if (applied) applied->push_back(aug);
        ThinnedSequence th = thin(run, aug.rate, aug.spans);
        for (size_t i = 0; i < th.tokens.size(); ++i) {
            int orig_pos = t + th.kept_positions[i];
            out.ids.push_back(th.tokens[i]);
            out.modality.push_back(Modality::audio);
            out.loss_mask.push_back(seq.loss_mask[size_t(orig_pos)]);
            out.coarse_labels.push_back(-1);
            out.code_labels.push_back(-1);
            out.frame_index.push_back(seq.frame_index[size_t(orig_pos)]);
        }
        ++span_index;
        t = e;
    }
    if (!out.loss_mask.empty()) out.loss_mask[0] = false;
    return out;
}

}  // namespace unitlm
