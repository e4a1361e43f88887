#pragma once

// Synthetic corpus generator. Utterances are built from planted latent
// factors (content, speaker, background); a frozen codebook stands in for the
// audio codec and the per-frame feature vector stands in for a frozen SSL
// encoder's output. Everything is a pure function of (spec, seed), so
// regeneration is bit-exact.

#include <array>
#include <string>
#include <vector>

#include "unitlm/common.hpp"
#include "unitlm/linalg.hpp"
#include "unitlm/rng.hpp"

namespace unitlm {

// Frame duration for timestamps. Arbitrary but fixed: interleaving only needs
// a consistent clock shared by frames and words.
inline constexpr double kFrameSeconds = 0.025;

struct LatentSpec {
    int n_speakers = 8;
    int n_contents = 10;
    int n_backgrounds = 4;
    int feature_dim = 16;       // d_ssl
    double noise_scale = 0.08;

    // Texture of the synthetic world. Each content class is a cyclic sequence
    // of `phones_per_content` phone vectors held for `phone_hold` frames. With
    // phone_pool_size == 0 each class draws its own phone vectors; with a
    // positive pool size, classes are sequences over a shared phone inventory
    // (so single frames do not betray the class, only the order does).
    int phones_per_content = 4;
    int phone_hold = 2;
    int phone_pool_size = 0;
    double speaker_scale = 1.0;
    double content_scale = 1.0;
    double background_scale = 0.5;

    void validate() const {
        require(n_speakers >= 1 && n_contents >= 1 && n_backgrounds >= 1,
                ErrorCode::invalid_argument, "LatentSpec: factor counts must be >= 1");
        require(feature_dim >= 1, ErrorCode::invalid_argument, "LatentSpec: feature_dim must be >= 1");
        require(noise_scale >= 0.0, ErrorCode::invalid_argument,
                "LatentSpec: noise_scale must be >= 0");
        require(phones_per_content >= 1 && phone_hold >= 1, ErrorCode::invalid_argument,
                "LatentSpec: phone layout must be positive");
        require(phone_pool_size == 0 || phone_pool_size >= 2, ErrorCode::invalid_argument,
                "LatentSpec: phone_pool_size must be 0 or >= 2");
    }
};

// The fixed, unit-norm latent vectors of one corpus. Deterministic per seed.
struct LatentVectors {
    MatD speakers;     // n_speakers x d
    MatD backgrounds;  // n_backgrounds x d
    MatD phones;       // pool x d (pool = n_contents * phones_per_content when private)
    std::vector<std::vector<int>> content_phones;  // per class: phone indices, length phones_per_content

    static LatentVectors make(const LatentSpec& spec, uint64_t corpus_seed) {
        spec.validate();
        LatentVectors lv;
        auto unit_rows = [&](int n, const char* label) {
            MatD m(n, spec.feature_dim);
            Rng rng(derive_seed(corpus_seed, label));
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < spec.feature_dim; ++j) m(i, j) = rng.gaussian();
                double norm = m.row(i).norm();
                while (norm == 0.0) {
                    for (int j = 0; j < spec.feature_dim; ++j) m(i, j) = rng.gaussian();
                    norm = m.row(i).norm();
                }
                m.row(i) /= norm;
            }
            return m;
        };
        lv.speakers = unit_rows(spec.n_speakers, "latent-speakers");
        lv.backgrounds = unit_rows(spec.n_backgrounds, "latent-backgrounds");

        int pool = spec.phone_pool_size > 0 ? spec.phone_pool_size
                                            : spec.n_contents * spec.phones_per_content;
        lv.phones = unit_rows(pool, "latent-phones");
        lv.content_phones.resize(size_t(spec.n_contents));
        Rng seq_rng(derive_seed(corpus_seed, "latent-content-seqs"));
        for (int c = 0; c < spec.n_contents; ++c) {
            auto& seq = lv.content_phones[size_t(c)];
            seq.resize(size_t(spec.phones_per_content));
            if (spec.phone_pool_size > 0) {
                for (int j = 0; j < spec.phones_per_content; ++j) {
                    int p = int(seq_rng.uniform_int(uint64_t(pool)));
                    // No immediate repeats, so every class cycles through
                    // at least two distinct phones.
                    while (j > 0 && p == seq[size_t(j - 1)])
                        p = int(seq_rng.uniform_int(uint64_t(pool)));
                    seq[size_t(j)] = p;
                }
            } else {
                for (int j = 0; j < spec.phones_per_content; ++j)
                    seq[size_t(j)] = c * spec.phones_per_content + j;
            }
        }
        return lv;
    }
};

struct Codebook {
    MatD vectors;  // n_codes x d_ssl, frozen after creation

    int n_codes() const { return int(vectors.rows()); }
    int dim() const { return int(vectors.cols()); }

    uint64_t content_hash() const {
        return fnv1a64(vectors.data(), size_t(vectors.size()) * sizeof(double));
    }
};

inline Codebook make_codebook(uint64_t seed, int n_codes, int d_ssl) {
    require(n_codes >= 2, ErrorCode::invalid_argument, "make_codebook: n_codes must be >= 2");
    require(d_ssl >= 1, ErrorCode::invalid_argument, "make_codebook: d_ssl must be >= 1");
    Codebook cb;
    cb.vectors.resize(n_codes, d_ssl);
    Rng rng(derive_seed(seed, "codebook"));
    double scale = 1.0 / std::sqrt(double(d_ssl));
    for (int k = 0; k < n_codes; ++k)
        for (int j = 0; j < d_ssl; ++j) cb.vectors(k, j) = scale * rng.gaussian();
    // Rows must be pairwise distinct; with continuous draws a collision is
    // practically impossible, but the invariant is checked outright.
    for (int a = 0; a < n_codes; ++a)
        for (int b = a + 1; b < n_codes; ++b)
            require((cb.vectors.row(a) - cb.vectors.row(b)).norm() > 0.0, ErrorCode::invalid_argument,
                    "make_codebook: duplicate rows");
    return cb;
}

inline int quantize(const Codebook& cb, const Eigen::RowVectorXd& x) {
    int best = 0;
    double best_d = (cb.vectors.row(0) - x).squaredNorm();
    for (int k = 1; k < cb.n_codes(); ++k) {
        double d = (cb.vectors.row(k) - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

struct Word {
    std::string symbol;
    double start = 0.0;
    double end = 0.0;
};

struct PlantedLatents {
    int speaker = -1;
    int content = -1;
    int background = -1;
    int phase = 0;
    bool has_switch = false;
    std::string switch_factor;  // empty when has_switch is false
    int switch_frame = -1;
};

struct FrameStream {
    std::vector<int> codes;
    MatD features;                           // T x d_ssl
    std::vector<std::pair<double, double>> times;
    std::vector<Word> words;
    PlantedLatents latents;
    uint64_t seed = 0;

    int length() const { return int(codes.size()); }

    void check_invariants(int n_codes) const {
        require(int(features.rows()) == length() && times.size() == codes.size(),
                ErrorCode::invalid_argument, "FrameStream: length mismatch");
        double prev_end = -1.0;
        for (size_t t = 0; t < times.size(); ++t) {
            require(times[t].first >= prev_end && times[t].second > times[t].first,
                    ErrorCode::invalid_argument, "FrameStream: times must be increasing");
            prev_end = times[t].second;
        }
        for (int c : codes)
            require(c >= 0 && c < n_codes, ErrorCode::invalid_argument,
                    "FrameStream: code out of range");
    }
};

namespace detail {

// Composite latent feature for one frame, before noise.
inline Eigen::RowVectorXd frame_base(const LatentSpec& spec, const LatentVectors& lv, int speaker,
                                     int content, int background, int frame, int phase) {
    int seg = (frame / spec.phone_hold + phase) % spec.phones_per_content;
    int phone = lv.content_phones[size_t(content)][size_t(seg)];
    return spec.content_scale * lv.phones.row(phone) + spec.speaker_scale * lv.speakers.row(speaker) +
           spec.background_scale * lv.backgrounds.row(background);
}

inline Word word_for_segment(int content, int seg_pos, int frame_begin, int frame_end) {
    Word w;
    w.symbol = "c" + std::to_string(content) + "w" + std::to_string(seg_pos);
    w.start = frame_begin * kFrameSeconds;
    w.end = frame_end * kFrameSeconds;
    return w;
}

}  // namespace detail

// One utterance. The word track mirrors the phone segmentation: one word per
// phone segment, named by (content class, position in the class sequence).
inline FrameStream synth_utterance(const LatentSpec& spec, const LatentVectors& lv,
                                   const Codebook& codebook, uint64_t seed, int speaker,
                                   int content, int length) {
    spec.validate();
    require(speaker >= 0 && speaker < spec.n_speakers, ErrorCode::invalid_argument,
            "synth_utterance: speaker out of range");
    require(content >= 0 && content < spec.n_contents, ErrorCode::invalid_argument,
            "synth_utterance: content out of range");
    require(length >= 1, ErrorCode::invalid_argument, "synth_utterance: length must be >= 1");
    require(codebook.dim() == spec.feature_dim, ErrorCode::invalid_argument,
            "synth_utterance: codebook dim mismatch");

    Rng draw(derive_seed(seed, "utt-draws"));
    int background = int(draw.uniform_int(uint64_t(spec.n_backgrounds)));
    int phase = int(draw.uniform_int(uint64_t(spec.phones_per_content)));

    FrameStream fs;
    fs.seed = seed;
    fs.latents = {speaker, content, background, phase, false, "", -1};
    fs.codes.resize(size_t(length));
    fs.features.resize(length, spec.feature_dim);
    fs.times.resize(size_t(length));

    Rng noise(derive_seed(seed, "utt-noise"));
    for (int t = 0; t < length; ++t) {
        Eigen::RowVectorXd f = detail::frame_base(spec, lv, speaker, content, background, t, phase);
        for (int j = 0; j < spec.feature_dim; ++j) f(j) += spec.noise_scale * noise.gaussian();
        fs.features.row(t) = f;
        fs.codes[size_t(t)] = quantize(codebook, f);
        fs.times[size_t(t)] = {t * kFrameSeconds, (t + 1) * kFrameSeconds};
    }

    for (int begin = 0; begin < length; begin += spec.phone_hold) {
        int end = std::min(begin + spec.phone_hold, length);
        int seg = (begin / spec.phone_hold + phase) % spec.phones_per_content;
        fs.words.push_back(detail::word_for_segment(content, seg, begin, end));
    }
    return fs;
}

enum class Factor { speaker, background, content };

inline const char* factor_name(Factor f) {
    switch (f) {
        case Factor::speaker: return "speaker";
        case Factor::background: return "background";
        case Factor::content: return "content";
    }
    return "?";
}

struct PreferenceStreams {
    FrameStream natural;
    FrameStream perturbed;
    Factor factor;
    int switch_frame = 0;
};

// A matched (natural, perturbed) pair. Both streams share every latent draw
// and every noise draw; the perturbed one swaps the named factor's latent
// vector from the switch frame onward. The switch frame is uniform over the
// middle 50% of the utterance.
inline PreferenceStreams synth_pair(const LatentSpec& spec, const LatentVectors& lv,
                                    const Codebook& codebook, uint64_t seed, Factor factor,
                                    int length) {
    spec.validate();
    require(length >= 2, ErrorCode::invalid_argument, "synth_pair: length must be >= 2");
    int n_values = factor == Factor::speaker      ? spec.n_speakers
                   : factor == Factor::background ? spec.n_backgrounds
                                                  : spec.n_contents;
    require(n_values >= 2, ErrorCode::invalid_argument,
            std::string("synth_pair: fewer than 2 values for factor ") + factor_name(factor));

    Rng draw(derive_seed(seed, "pair-draws"));
    int speaker = int(draw.uniform_int(uint64_t(spec.n_speakers)));
    int content = int(draw.uniform_int(uint64_t(spec.n_contents)));
    int background = int(draw.uniform_int(uint64_t(spec.n_backgrounds)));
    int phase = int(draw.uniform_int(uint64_t(spec.phones_per_content)));

    int lo = (length + 3) / 4;        // ceil(0.25 T)
    int hi = (3 * length) / 4;        // floor(0.75 T)
    if (hi < lo) hi = lo;
    int switch_frame = lo + int(draw.uniform_int(uint64_t(hi - lo + 1)));

    int base_value = factor == Factor::speaker      ? speaker
                     : factor == Factor::background ? background
                                                    : content;
    int alt = int(draw.uniform_int(uint64_t(n_values - 1)));
    if (alt >= base_value) ++alt;

    PreferenceStreams out;
    out.factor = factor;
    out.switch_frame = switch_frame;

    // Shared noise: one stream of draws, applied identically to both variants.
    MatD noise(length, spec.feature_dim);
    Rng noise_rng(derive_seed(seed, "pair-noise"));
    for (int t = 0; t < length; ++t)
        for (int j = 0; j < spec.feature_dim; ++j) noise(t, j) = noise_rng.gaussian();

    auto build = [&](bool switched) {
        FrameStream fs;
        fs.seed = seed;
        fs.latents = {speaker, content, background, phase, switched,
                      switched ? factor_name(factor) : "", switched ? switch_frame : -1};
        fs.codes.resize(size_t(length));
        fs.features.resize(length, spec.feature_dim);
        fs.times.resize(size_t(length));
        for (int t = 0; t < length; ++t) {
            int spk = speaker, bg = background, ct = content;
            if (switched && t >= switch_frame) {
                if (factor == Factor::speaker) spk = alt;
                else if (factor == Factor::background) bg = alt;
                else ct = alt;
            }
            Eigen::RowVectorXd f = detail::frame_base(spec, lv, spk, ct, bg, t, phase);
            f += spec.noise_scale * noise.row(t);
            fs.features.row(t) = f;
            fs.codes[size_t(t)] = quantize(codebook, f);
            fs.times[size_t(t)] = {t * kFrameSeconds, (t + 1) * kFrameSeconds};
        }
        for (int begin = 0; begin < length; begin += spec.phone_hold) {
            int end = std::min(begin + spec.phone_hold, length);
            int ct = content;
            if (switched && factor == Factor::content && begin >= switch_frame) ct = alt;
            int seg = (begin / spec.phone_hold + phase) % spec.phones_per_content;
            fs.words.push_back(detail::word_for_segment(ct, seg, begin, end));
        }
        return fs;
    };

    out.natural = build(false);
    out.perturbed = build(true);
    return out;
}

// Text symbols implied by a latent spec: one word per (content class,
// position in the class phone sequence).
inline std::vector<std::string> derive_text_symbols(const LatentSpec& spec) {
    std::vector<std::string> symbols;
    symbols.reserve(size_t(spec.n_contents) * size_t(spec.phones_per_content));
    for (int c = 0; c < spec.n_contents; ++c)
        for (int j = 0; j < spec.phones_per_content; ++j)
            symbols.push_back("c" + std::to_string(c) + "w" + std::to_string(j));
    return symbols;
}

}  // namespace unitlm
