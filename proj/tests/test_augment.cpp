// Thinning, span erasure, interleaving, and mixed-sequence plumbing.

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "unitlm/interleave.hpp"
#include "unitlm/sequence.hpp"

using namespace unitlm;

namespace {

std::vector<TokenId> iota_tokens(int n) {
    std::vector<TokenId> t(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) t[size_t(i)] = 100 + i;
    return t;
}

// A small synthetic world shared by the interleave tests.
struct TinyWorld {
    LatentSpec spec;
    LatentVectors lv;
    Codebook cb;
    UnifiedVocab vocab;

    TinyWorld()
        : lv(LatentVectors::make(spec, 42)),
          cb(make_codebook(42, 64, spec.feature_dim)),
          vocab(UnifiedVocab::build(derive_text_symbols(spec), 64)) {}

    FrameStream utt(uint64_t seed, int length) const {
        return synth_utterance(spec, lv, cb, seed, int(seed) % spec.n_speakers,
                               int(seed) % spec.n_contents, length);
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// thin
// ---------------------------------------------------------------------------

TEST_CASE("thin keeps every r-th index: T=8, r=2") {
    ThinnedSequence out = thin(iota_tokens(8), 2, {});
    CHECK(out.kept_positions == std::vector<int>{0, 2, 4, 6});
    CHECK(out.tokens == std::vector<TokenId>{100, 102, 104, 106});
}

TEST_CASE("thin at r=1 with no erasure is the identity with shifted labels") {
    auto tokens = iota_tokens(5);
    ThinnedSequence out = thin(tokens, 1, {});
    CHECK(out.tokens == tokens);
    CHECK(out.kept_positions == std::vector<int>{0, 1, 2, 3, 4});
    for (size_t i = 0; i + 1 < out.size(); ++i) {
        CHECK(out.labels[i] == tokens[i + 1]);
        CHECK(out.label_mask[i]);
    }
    CHECK_FALSE(out.label_mask.back());
}

TEST_CASE("thin worked example: T=10, r=3, erase span (1,1)") {
    // Thinned originals {0,3,6,9}; erasing thinned slot 1 removes original 3.
    ThinnedSequence out = thin(iota_tokens(10), 3, {Span{1, 1}});
    CHECK(out.kept_positions == std::vector<int>{0, 6, 9});
    CHECK(out.tokens == std::vector<TokenId>{100, 106, 109});
    CHECK(out.labels[0] == 106);
    CHECK(out.labels[1] == 109);
    CHECK(out.label_mask[0]);
    CHECK(out.label_mask[1]);
    CHECK_FALSE(out.label_mask[2]);
}

TEST_CASE("thin rejects overlapping or out-of-bounds spans") {
    CHECK_THROWS_AS(thin(iota_tokens(10), 1, {Span{0, 3}, Span{2, 2}}), Error);
    CHECK_THROWS_AS(thin(iota_tokens(10), 1, {Span{8, 5}}), Error);
    CHECK_THROWS_AS(thin(iota_tokens(10), 1, {Span{-1, 2}}), Error);
    CHECK_THROWS_AS(thin(iota_tokens(10), 1, {Span{0, 0}}), Error);
    CHECK_THROWS_AS(thin(iota_tokens(10), 0, {}), Error);
    // Touching spans are fine (they do not overlap).
    CHECK_NOTHROW(thin(iota_tokens(10), 1, {Span{0, 3}, Span{3, 2}}));
}

TEST_CASE("thin size arithmetic: |kept| = ceil(T/r) - erased") {
    for (int T = 1; T <= 30; ++T)
        for (int r = 1; r <= 4; ++r) {
            int n = thinned_length(T, r);
            CHECK(n == (T + r - 1) / r);
            std::vector<Span> spans;
            if (n >= 3) spans.push_back(Span{1, 2});
            ThinnedSequence out = thin(iota_tokens(T), r, spans);
            int erased = spans.empty() ? 0 : 2;
            CHECK(int(out.size()) == n - erased);
            for (size_t i = 1; i < out.kept_positions.size(); ++i)
                CHECK(out.kept_positions[i] > out.kept_positions[i - 1]);
        }
}

// ---------------------------------------------------------------------------
// sample_augmentation
// ---------------------------------------------------------------------------

TEST_CASE("sample_augmentation honors degenerate specs") {
    ThinSpec no_erase;
    no_erase.p_erase = 0.0;
    for (uint64_t s = 0; s < 200; ++s) CHECK(sample_augmentation(no_erase, 50, s).spans.empty());

    ThinSpec only_r1;
    only_r1.rates = {1};
    for (uint64_t s = 0; s < 200; ++s) CHECK(sample_augmentation(only_r1, 50, s).rate == 1);

    ThinSpec spec;
    Augmentation a = sample_augmentation(spec, 40, 9);
    Augmentation b = sample_augmentation(spec, 40, 9);
    CHECK(a.rate == b.rate);
    CHECK(a.spans.size() == b.spans.size());
}

TEST_CASE("sampled spans are always valid for thin, never total") {
    ThinSpec spec;
    spec.p_erase = 0.35;  // aggressive, to stress the never-erase-all clamp
    spec.span_mean = 5.0;
    for (uint64_t s = 0; s < 3000; ++s) {
        int T = 1 + int(s % 37);
        Augmentation aug = sample_augmentation(spec, T, s);
        ThinnedSequence out = thin(iota_tokens(T), aug.rate, aug.spans);  // must not throw
        CHECK(out.size() >= 1);
    }
}

TEST_CASE("empirical erased fraction matches the renewal-process rate") {
    // The walk advances 1 with prob 1-p or erases a Geometric(mean m) span
    // with prob p, so the stationary erased fraction is p*m / (p*m + 1-p).
    ThinSpec spec;
    spec.rates = {1};  // isolate erasure
    spec.p_erase = 0.1;
    spec.span_mean = 3.0;
    const double expected = 0.1 * 3.0 / (0.1 * 3.0 + 0.9);

    const int T = 400;
    long erased = 0, total = 0;
    for (uint64_t s = 0; s < 100000; ++s) {
        Augmentation aug = sample_augmentation(spec, T, s);
        for (const Span& sp : aug.spans) erased += sp.len;
        total += T;
    }
    double frac = double(erased) / double(total);
    CHECK(std::abs(frac - expected) / expected < 0.05);
}

// ---------------------------------------------------------------------------
// speech-only sequences
// ---------------------------------------------------------------------------

TEST_CASE("speech_only_sequence is delimiter + audio + eos") {
    TinyWorld w;
    FrameStream fs = w.utt(3, 12);
    MixedSequence s = speech_only_sequence(fs, w.vocab);
    s.check_consistent();
    REQUIRE(s.length() == 14);
    CHECK(s.ids.front() == w.vocab.speech_delim_id());
    CHECK(s.modality.front() == Modality::delimiter);
    CHECK_FALSE(s.loss_mask.front());
    CHECK(s.ids.back() == w.vocab.eos_id());
    CHECK(s.modality.back() == Modality::special);
    int delims = 0;
    for (int t = 0; t < s.length(); ++t) {
        if (s.modality[size_t(t)] == Modality::delimiter) ++delims;
        if (t >= 1 && t <= 12) {
            CHECK(s.modality[size_t(t)] == Modality::audio);
            CHECK(w.vocab.code_of(s.ids[size_t(t)]) == fs.codes[size_t(t - 1)]);
            CHECK(s.frame_index[size_t(t)] == t - 1);
        }
    }
    CHECK(delims == 1);
    CHECK(s.text_fraction == 0.0);
    CHECK(s.budget_ok);
}

// ---------------------------------------------------------------------------
// interleave
// ---------------------------------------------------------------------------

TEST_CASE("interleaved text fraction lands in the budget across 1000 seeds") {
    TinyWorld w;
    InterleaveBudget budget;
    FrameStream fs = w.utt(5, 60);  // 30 words of ~3.3% duration each
    int flagged = 0;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        MixedSequence s = interleave(fs, w.vocab, budget, seed);
        s.check_consistent();
        if (!s.budget_ok) {
            ++flagged;
            continue;
        }
        CHECK(s.text_fraction >= budget.lo);
        CHECK(s.text_fraction <= budget.hi);
    }
    // Word granularity is fine enough that the budget is always attainable.
    CHECK(flagged == 0);
}

TEST_CASE("interleave determinism and delimiter discipline") {
    TinyWorld w;
    InterleaveBudget budget;
    FrameStream fs = w.utt(6, 48);
    MixedSequence a = interleave(fs, w.vocab, budget, 77);
    MixedSequence b = interleave(fs, w.vocab, budget, 77);
    CHECK(a.ids == b.ids);

    // Every modality change passes through a delimiter; delimiters alternate.
    TokenId expect_next_delim = -1;
    Modality prev = Modality::special;
    for (int t = 0; t < a.length(); ++t) {
        Modality m = a.modality[size_t(t)];
        if (m == Modality::delimiter) {
            if (expect_next_delim >= 0) CHECK(a.ids[size_t(t)] == expect_next_delim);
            expect_next_delim = a.ids[size_t(t)] == w.vocab.text_delim_id()
                                    ? w.vocab.speech_delim_id()
                                    : w.vocab.text_delim_id();
        } else if (m != prev && (prev == Modality::text || prev == Modality::audio) &&
                   (m == Modality::text || m == Modality::audio)) {
            FAIL("modality switch without a delimiter at position " + std::to_string(t));
        }
        prev = m;
    }

    // Audio frames stay chronological.
    int last_frame = -1;
    for (int t = 0; t < a.length(); ++t)
        if (a.modality[size_t(t)] == Modality::audio) {
            CHECK(a.frame_index[size_t(t)] > last_frame);
            last_frame = a.frame_index[size_t(t)];
        }
    // Ends with eos; position 0 is never a target.
    CHECK(a.ids.back() == w.vocab.eos_id());
    CHECK_FALSE(a.loss_mask.front());
}

TEST_CASE("single leading window gives exactly [Text] ... [Speech] ...") {
    TinyWorld w;
    InterleaveBudget budget;
    budget.max_windows = 1;
    FrameStream fs = w.utt(8, 40);
    // Scan seeds for one where the single window sits at the sequence start.
    bool found = false;
    for (uint64_t seed = 0; seed < 400 && !found; ++seed) {
        MixedSequence s = interleave(fs, w.vocab, budget, seed);
        if (!s.budget_ok) continue;
        if (s.modality[0] != Modality::delimiter || s.ids[0] != w.vocab.text_delim_id()) continue;
        std::vector<TokenId> delims;
        for (int t = 0; t < s.length(); ++t)
            if (s.modality[size_t(t)] == Modality::delimiter) delims.push_back(s.ids[size_t(t)]);
        REQUIRE(delims.size() == 2);
        CHECK(delims[0] == w.vocab.text_delim_id());
        CHECK(delims[1] == w.vocab.speech_delim_id());
        found = true;
    }
    CHECK(found);
}

TEST_CASE("unattainable budget is flagged, never silently violated") {
    TinyWorld w;
    // One giant word covering the full utterance: any window is ~100% text.
    FrameStream fs = w.utt(9, 20);
    fs.words.clear();
    fs.words.push_back(Word{"c0w0", 0.0, 20 * kFrameSeconds});
    InterleaveBudget budget;
    MixedSequence s = interleave(fs, w.vocab, budget, 1);
    CHECK_FALSE(s.budget_ok);
    CHECK(s.text_fraction > budget.hi);

    FrameStream no_words = w.utt(9, 20);
    no_words.words.clear();
    CHECK_THROWS_AS(interleave(no_words, w.vocab, budget, 1), Error);
}

// ---------------------------------------------------------------------------
// apply_audio_augment
// ---------------------------------------------------------------------------

TEST_CASE("augmenting an all-text sequence changes nothing") {
    TinyWorld w;
    MixedSequence s;
    auto push = [&](TokenId id, Modality m) {
        s.ids.push_back(id);
        s.modality.push_back(m);
        s.loss_mask.push_back(true);
        s.coarse_labels.push_back(-1);
        s.code_labels.push_back(-1);
        s.frame_index.push_back(-1);
    };
    push(w.vocab.text_delim_id(), Modality::delimiter);
    push(w.vocab.text_id("c0w0"), Modality::text);
    push(w.vocab.text_id("c0w1"), Modality::text);
    push(w.vocab.eos_id(), Modality::special);
    s.loss_mask[0] = false;

    ThinSpec spec;
    spec.p_erase = 0.5;
    MixedSequence out = apply_audio_augment(s, spec, 3);
    CHECK(out.ids == s.ids);
    CHECK(out.modality == s.modality);
    CHECK(out.loss_mask == s.loss_mask);
}

TEST_CASE("augmenting a speech-only sequence equals thin on the audio run") {
    TinyWorld w;
    FrameStream fs = w.utt(4, 30);
    MixedSequence s = speech_only_sequence(fs, w.vocab);
    ThinSpec spec;
    spec.p_erase = 0.3;

    const uint64_t seed = 17;
    std::vector<Augmentation> applied;
    MixedSequence out = apply_audio_augment(s, spec, seed, &applied);
    REQUIRE(applied.size() == 1);

    // Reference: the same augmentation drawn for span 0, applied via thin.
    std::vector<TokenId> run(s.ids.begin() + 1, s.ids.end() - 1);
    Augmentation expect = sample_augmentation(spec, int(run.size()), derive_seed(seed, "audio-span", 0));
    CHECK(expect.rate == applied[0].rate);
    ThinnedSequence th = thin(run, expect.rate, expect.spans);

    REQUIRE(out.length() == int(th.size()) + 2);
    for (size_t i = 0; i < th.size(); ++i) {
        CHECK(out.ids[i + 1] == th.tokens[i]);
        CHECK(out.frame_index[i + 1] == th.kept_positions[i]);  // original frames survive
        CHECK(out.modality[i + 1] == Modality::audio);
    }
    CHECK(out.ids.front() == w.vocab.speech_delim_id());
    CHECK(out.ids.back() == w.vocab.eos_id());
}

TEST_CASE("augmentation preserves text tokens and delimiters bit-exactly") {
    TinyWorld w;
    InterleaveBudget budget;
    ThinSpec spec;
    spec.p_erase = 0.25;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        FrameStream fs = w.utt(seed, 44);
        MixedSequence s = interleave(fs, w.vocab, budget, seed);
        MixedSequence out = apply_audio_augment(s, spec, seed + 1000);
        out.check_consistent();

        auto non_audio = [](const MixedSequence& q) {
            std::vector<TokenId> v;
            for (int t = 0; t < q.length(); ++t)
                if (q.modality[size_t(t)] != Modality::audio) v.push_back(q.ids[size_t(t)]);
            return v;
        };
        CHECK(non_audio(out) == non_audio(s));  // order and multiset both preserved

        // Audio tokens are a subsequence of the originals.
        std::vector<TokenId> orig, kept;
        for (int t = 0; t < s.length(); ++t)
            if (s.modality[size_t(t)] == Modality::audio) orig.push_back(s.ids[size_t(t)]);
        for (int t = 0; t < out.length(); ++t)
            if (out.modality[size_t(t)] == Modality::audio) kept.push_back(out.ids[size_t(t)]);
        CHECK(kept.size() <= orig.size());
        size_t j = 0;
        for (TokenId id : orig) {
            if (j < kept.size() && kept[j] == id) ++j;
        }
        // Not exact subsequence matching (ids repeat), but frame indices are authoritative:
        int last = -1;
        for (int t = 0; t < out.length(); ++t)
            if (out.modality[size_t(t)] == Modality::audio) {
                CHECK(out.frame_index[size_t(t)] > last);
                last = out.frame_index[size_t(t)];
            }
    }
}

// ---------------------------------------------------------------------------
// auxiliary labels
// ---------------------------------------------------------------------------

TEST_CASE("fill_aux_labels targets the code at t+delta, audio only") {
    TinyWorld w;
    FrameStream fs = w.utt(12, 6);
    MixedSequence s = speech_only_sequence(fs, w.vocab);

    CoarseMap coarse;
    coarse.K = 4;
    coarse.bucket_of.assign(size_t(w.vocab.n_codes()), 0);
    for (int c = 0; c < w.vocab.n_codes(); ++c) coarse.bucket_of[size_t(c)] = c % 4;
    coarse.bucket_centers = MatD::Zero(4, w.spec.feature_dim);

    fill_aux_labels(s, w.vocab, coarse, 1);
    for (int t = 0; t < s.length(); ++t) {
        bool audio = s.modality[size_t(t)] == Modality::audio;
        bool next_audio = t + 1 < s.length() && s.modality[size_t(t + 1)] == Modality::audio;
        if (audio && next_audio) {
            int code = w.vocab.code_of(s.ids[size_t(t + 1)]);
            CHECK(s.code_labels[size_t(t)] == code);
            CHECK(s.coarse_labels[size_t(t)] == code % 4);
        } else {
            CHECK(s.code_labels[size_t(t)] == -1);
            CHECK(s.coarse_labels[size_t(t)] == -1);
        }
    }

    SECTION("delta=2 skips the last audio pair") {
        fill_aux_labels(s, w.vocab, coarse, 2);
        for (int t = 0; t < s.length(); ++t) {
            bool valid = s.modality[size_t(t)] == Modality::audio && t + 2 < s.length() &&
                         s.modality[size_t(t + 2)] == Modality::audio;
            CHECK((s.code_labels[size_t(t)] >= 0) == valid);
        }
    }
    SECTION("delta must be positive and the map must match the vocab") {
        CHECK_THROWS_AS(fill_aux_labels(s, w.vocab, coarse, 0), Error);
        CoarseMap wrong = coarse;
        wrong.bucket_of.pop_back();
        CHECK_THROWS_AS(fill_aux_labels(s, w.vocab, wrong, 1), Error);
    }
}

// ---------------------------------------------------------------------------
// MixedSequence serialization
// ---------------------------------------------------------------------------

TEST_CASE("mixed sequence JSON round-trip preserves every field") {
    TinyWorld w;
    InterleaveBudget budget;
    FrameStream fs = w.utt(14, 36);
    MixedSequence s = interleave(fs, w.vocab, budget, 5);
    CoarseMap coarse;
    coarse.K = 2;
    coarse.bucket_of.assign(size_t(w.vocab.n_codes()), 1);
    coarse.bucket_centers = MatD::Zero(2, w.spec.feature_dim);
    fill_aux_labels(s, w.vocab, coarse, 1);

    MixedSequence back = mixed_sequence_from_json(mixed_sequence_to_json(s));
    CHECK(back.ids == s.ids);
    CHECK(back.modality == s.modality);
    CHECK(back.loss_mask == s.loss_mask);
    CHECK(back.coarse_labels == s.coarse_labels);
    CHECK(back.code_labels == s.code_labels);
    CHECK(back.frame_index == s.frame_index);
    CHECK(back.text_fraction == s.text_fraction);
    CHECK(back.budget_ok == s.budget_ok);
}

TEST_CASE("mixed sequence schema version is guarded") {
    TinyWorld w;
    MixedSequence s = speech_only_sequence(w.utt(1, 4), w.vocab);
    Json j = mixed_sequence_to_json(s);
    j["v"] = 2;
    try {
        mixed_sequence_from_json(j);
        FAIL("wrong version accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::version_mismatch);
    }
}

TEST_CASE("padding helper extends with masked pad ids only") {
    TinyWorld w;
    MixedSequence s = speech_only_sequence(w.utt(2, 6), w.vocab);
    MixedSequence p = append_padding(s, w.vocab, 5);
    REQUIRE(p.length() == s.length() + 5);
    for (int t = s.length(); t < p.length(); ++t) {
        CHECK(p.ids[size_t(t)] == w.vocab.pad_id());
        CHECK_FALSE(p.loss_mask[size_t(t)]);
        CHECK(p.modality[size_t(t)] == Modality::special);
    }
}
