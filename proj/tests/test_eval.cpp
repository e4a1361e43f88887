// Scoring (length-normalized NLL), constrained generation, preference
// evaluation, bootstrap intervals, and the linear probe.

#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "unitlm/eval.hpp"
#include "unitlm/interleave.hpp"
#include "unitlm/pipeline.hpp"
#include "unitlm/scoring.hpp"

using namespace unitlm;

namespace {

struct TinyWorld {
    LatentSpec spec;
    LatentVectors lv;
    Codebook cb;
    UnifiedVocab vocab;

    TinyWorld()
        : lv(LatentVectors::make(spec, 31)),
          cb(make_codebook(31, 64, spec.feature_dim)),
          vocab(UnifiedVocab::build(derive_text_symbols(spec), 64)) {}

    FrameStream utt(uint64_t seed, int length) const {
        return synth_utterance(spec, lv, cb, seed, int(seed) % spec.n_speakers,
                               int(seed) % spec.n_contents, length);
    }

    ModelConfig config(int d_model = 16) const {
        ModelConfig c;
        c.d_model = d_model;
        c.n_layers = 2;
        c.n_heads = 2;
        c.d_ff = 2 * d_model;
        c.max_seq_len = 256;
        c.vocab_size = vocab.total_size();
        c.n_codes = vocab.n_codes();
        c.speech_base = vocab.speech_id(0);
        c.coarse_k = 4;
        c.d_ssl = spec.feature_dim;
        return c;
    }
};

// A bare sequence of speech ids with an unmasked-from-1 loss mask.
MixedSequence bare_speech(const UnifiedVocab& v, const std::vector<int>& codes) {
    MixedSequence s;
    auto push = [&](TokenId id, Modality m, bool mask) {
        s.ids.push_back(id);
        s.modality.push_back(m);
        s.loss_mask.push_back(mask);
        s.coarse_labels.push_back(-1);
        s.code_labels.push_back(-1);
        s.frame_index.push_back(-1);
    };
    push(v.speech_delim_id(), Modality::delimiter, false);
    for (int c : codes) push(v.speech_id(c), Modality::audio, true);
    return s;
}

double ids_hash_score(const MixedSequence& seq) {
    uint64_t h = fnv1a64(seq.ids.data(), seq.ids.size() * sizeof(TokenId));
    return double(h % 100000) / 100000.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// score_sequence
// ---------------------------------------------------------------------------

TEST_CASE("uniform logits score exactly ln V") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<double> model(cfg);
    Parameters<double> zero = Parameters<double>::shaped(cfg);

    for (uint64_t seed = 0; seed < 5; ++seed) {
        MixedSequence s = speech_only_sequence(w.utt(seed, 10 + int(seed)), w.vocab);
        ScoreResult r = score_sequence<double>(model, zero, s);
        CHECK(std::abs(r.nll_mean - std::log(double(cfg.vocab_size))) < 1e-9);
        CHECK(r.score == -r.nll_mean);
        CHECK(r.token_count == s.length() - 1);
    }
}

TEST_CASE("padding a sequence never changes its score, bit for bit") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<float> model(cfg);
    Parameters<float> p = init_parameters<float>(cfg, 3);

    for (uint64_t i = 0; i < 100; ++i) {
        Rng rng(derive_seed(900, "case", i));
        int len = 4 + int(rng.uniform_int(12));
        MixedSequence s = speech_only_sequence(w.utt(i, len), w.vocab);
        ScoreResult base = score_sequence<float>(model, p, s);
        MixedSequence padded = append_padding(s, w.vocab, 1 + int(rng.uniform_int(9)));
        ScoreResult ext = score_sequence<float>(model, p, padded);
        CHECK(ext.nll_mean == base.nll_mean);  // bit-exact, not approximately
        CHECK(ext.token_count == base.token_count);
    }
}

TEST_CASE("a peaked model scores its own sequence near zero NLL") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<double> model(cfg);
    Parameters<double> p = Parameters<double>::shaped(cfg);
    const int code = 9;
    p.head_b(0, w.vocab.speech_id(code)) = 40.0;  // uniform hidden, spiked bias

    MixedSequence s = bare_speech(w.vocab, {code, code, code, code});
    ScoreResult r = score_sequence<double>(model, p, s);
    CHECK(r.nll_mean < 1e-6);
    CHECK(r.nll_mean >= 0.0);
}

TEST_CASE("per-token NLLs decompose the mean") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<float> model(cfg);
    Parameters<float> p = init_parameters<float>(cfg, 4);
    MixedSequence s = speech_only_sequence(w.utt(2, 12), w.vocab);
    ScoreResult r = score_sequence<float>(model, p, s, true);
    REQUIRE(long(r.per_token.size()) == r.token_count);
    double sum = 0.0;
    for (double v : r.per_token) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(r.nll_mean == Catch::Approx(sum / double(r.token_count)).epsilon(1e-12));
}

TEST_CASE("scoring a fully masked sequence is rejected") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<float> model(cfg);
    Parameters<float> p = init_parameters<float>(cfg, 5);
    MixedSequence s = speech_only_sequence(w.utt(1, 6), w.vocab);
    for (size_t i = 0; i < s.loss_mask.size(); ++i) s.loss_mask[i] = false;
    CHECK_THROWS_AS(score_sequence<float>(model, p, s), Error);
}

// ---------------------------------------------------------------------------
// incremental decoding
// ---------------------------------------------------------------------------

TEST_CASE("KV-cache decoding matches the full-context forward pass") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<double> model(cfg);
    Parameters<double> p = init_parameters<double>(cfg, 6);

    std::vector<TokenId> ids;
    ids.push_back(w.vocab.speech_delim_id());
    for (int t = 0; t < 11; ++t) ids.push_back(w.vocab.speech_id((3 * t) % 64));

    ForwardResult<double> full = model.forward(p, ids);
    KvCache<double> cache(cfg);
    for (size_t t = 0; t < ids.size(); ++t) {
        auto row = forward_step<double>(model, p, cache, ids[t]);
        double diff = (row - full.logits.row(Eigen::Index(t))).cwiseAbs().maxCoeff();
        CHECK(diff < 1e-9);
    }
    CHECK(cache.length == int(ids.size()));
}

TEST_CASE("speech-only generation emits speech codes and the terminator only") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<float> model(cfg);
    Parameters<float> p = init_parameters<float>(cfg, 7);

    long checked = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        GenerateOptions opts;
        opts.max_new_tokens = 200;
        opts.temperature = 1.0;
        opts.seed = seed;
        opts.speech_only = true;
        GenerateResult r =
            generate<float>(model, p, w.vocab, {w.vocab.speech_delim_id()}, opts);
        for (TokenId id : r.tokens) {
            bool speech = id >= w.vocab.speech_id(0) && id <= w.vocab.speech_id(63);
            bool eos = id == w.vocab.eos_id();
            if (!speech && !eos) FAIL("non-speech id " << id << " emitted under speech_only");
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("greedy decoding is deterministic and breaks ties toward low ids") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<float> model(cfg);

    GenerateOptions opts;
    opts.max_new_tokens = 20;
    opts.temperature = 0.0;

    Parameters<float> p = init_parameters<float>(cfg, 8);
    GenerateResult a = generate<float>(model, p, w.vocab, {w.vocab.speech_delim_id()}, opts);
    GenerateResult b = generate<float>(model, p, w.vocab, {w.vocab.speech_delim_id()}, opts);
    CHECK(a.tokens == b.tokens);

    // All-equal logits: ties break toward the lowest allowed id, which under
    // the [text][speech][specials] layout is the first speech code.
    Parameters<float> zero = Parameters<float>::shaped(cfg);
    GenerateResult t = generate<float>(model, zero, w.vocab, {w.vocab.speech_delim_id()}, opts);
    REQUIRE(t.tokens.size() == 20);
    for (TokenId id : t.tokens) CHECK(id == w.vocab.speech_id(0));
    CHECK_FALSE(t.hit_eos);
}

TEST_CASE("temperature-1 first-token frequencies match the masked softmax") {
    UnifiedVocab vocab = UnifiedVocab::build({"a", "b", "c"}, 8);
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.max_seq_len = 8;
    cfg.vocab_size = vocab.total_size();
    cfg.n_codes = 8;
    cfg.speech_base = vocab.speech_id(0);
    cfg.coarse_k = 2;
    cfg.d_ssl = 4;
    Transformer<double> model(cfg);
    Parameters<double> p = init_parameters<double>(cfg, 9);
    p.head_b.setRandom();  // spread the first-token distribution

    // Reference: masked softmax of the prompt's last logits row.
    std::vector<TokenId> prompt{vocab.speech_delim_id()};
    ForwardResult<double> fwd = model.forward(p, prompt);
    std::vector<int> allowed;
    for (int k = 0; k < 8; ++k) allowed.push_back(vocab.speech_id(k));
    allowed.push_back(vocab.eos_id());
    double mx = -1e300;
    for (int id : allowed) mx = std::max(mx, fwd.logits(0, id));
    std::map<int, double> ref;
    double z = 0.0;
    for (int id : allowed) {
        double e = std::exp(fwd.logits(0, id) - mx);
        ref[id] = e;
        z += e;
    }
    for (auto& kv : ref) kv.second /= z;

    const int n = 10000;
    std::map<int, int> counts;
    GenerateOptions opts;
    opts.max_new_tokens = 1;
    opts.temperature = 1.0;
    opts.speech_only = true;
    for (int i = 0; i < n; ++i) {
        opts.seed = uint64_t(i);
        GenerateResult r = generate<double>(model, p, vocab, prompt, opts);
        REQUIRE(r.tokens.size() == 1);
        counts[r.tokens[0]] += 1;
    }
    double tv = 0.0;
    for (int id : allowed) tv += std::abs(double(counts[id]) / n - ref[id]);
    tv /= 2.0;
    INFO("total variation distance " << tv);
    CHECK(tv < 0.03);
}

TEST_CASE("generation guards its inputs") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<float> model(cfg);
    Parameters<float> p = init_parameters<float>(cfg, 10);
    GenerateOptions opts;

    CHECK_THROWS_AS(generate<float>(model, p, w.vocab, {}, opts), Error);
    opts.max_new_tokens = -1;
    CHECK_THROWS_AS(generate<float>(model, p, w.vocab, {w.vocab.eos_id()}, opts), Error);
    opts.max_new_tokens = 0;
    GenerateResult r = generate<float>(model, p, w.vocab, {w.vocab.eos_id()}, opts);
    CHECK(r.tokens.empty());

    UnifiedVocab other = UnifiedVocab::build({"x"}, 4);
    CHECK_THROWS_AS(generate<float>(model, p, other, {0}, opts), Error);
}

// ---------------------------------------------------------------------------
// preference evaluation
// ---------------------------------------------------------------------------

TEST_CASE("a constant scorer ties every pair: accuracy exactly one half") {
    TinyWorld w;
    std::vector<std::pair<MixedSequence, MixedSequence>> pairs;
    for (int i = 0; i < 7; ++i)
        pairs.emplace_back(bare_speech(w.vocab, {i, i + 1}), bare_speech(w.vocab, {i + 2, i}));
    PreferenceOutcome out = preference_eval(pairs, [](const MixedSequence&) { return 42.0; });
    CHECK(out.accuracy == 0.5);
    CHECK(out.ties == 7);
    CHECK(out.wins == 0);
    CHECK(out.losses == 0);
    CHECK(out.excluded == 0);
}

TEST_CASE("an oracle scorer reaches exactly one") {
    TinyWorld w;
    std::vector<std::pair<MixedSequence, MixedSequence>> pairs;
    for (int i = 0; i < 9; ++i)
        pairs.emplace_back(bare_speech(w.vocab, {0, i}), bare_speech(w.vocab, {1, i}));
    // "Natural" sequences carry code 0 in slot 1; the oracle knows it.
    auto oracle = [&](const MixedSequence& s) {
        return s.ids[1] == w.vocab.speech_id(0) ? 1.0 : 0.0;
    };
    PreferenceOutcome out = preference_eval(pairs, oracle);
    CHECK(out.accuracy == 1.0);
    CHECK(out.wins == 9);
}

TEST_CASE("swapping each pair flips the accuracy around one half") {
    TinyWorld w;
    std::vector<std::pair<MixedSequence, MixedSequence>> pairs, swapped;
    for (int i = 0; i < 25; ++i) {
        MixedSequence a = bare_speech(w.vocab, {i % 64, (i * 7) % 64, 3});
        MixedSequence b = bare_speech(w.vocab, {(i * 5) % 64, i % 64, 4});
        pairs.emplace_back(a, b);
        swapped.emplace_back(b, a);
    }
    PreferenceOutcome fwd = preference_eval(pairs, ids_hash_score);
    PreferenceOutcome rev = preference_eval(swapped, ids_hash_score);
    CHECK(fwd.ties == rev.ties);
    CHECK(fwd.wins == rev.losses);
    CHECK(fwd.accuracy + rev.accuracy == Catch::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("a blind scorer sits near chance over 1000 pairs") {
    TinyWorld w;
    std::vector<std::pair<MixedSequence, MixedSequence>> pairs;
    Rng rng(77);
    for (int i = 0; i < 1000; ++i) {
        std::vector<int> ca, cb;
        for (int t = 0; t < 6; ++t) {
            ca.push_back(int(rng.uniform_int(64)));
            cb.push_back(int(rng.uniform_int(64)));
        }
        pairs.emplace_back(bare_speech(w.vocab, ca), bare_speech(w.vocab, cb));
    }
    PreferenceOutcome out = preference_eval(pairs, ids_hash_score);
    CHECK(out.accuracy > 0.45);
    CHECK(out.accuracy < 0.55);
}

TEST_CASE("unscorable pairs are excluded and logged, not silently dropped") {
    TinyWorld w;
    std::vector<std::pair<MixedSequence, MixedSequence>> pairs;
    for (int i = 0; i < 5; ++i)
        pairs.emplace_back(bare_speech(w.vocab, {i, 1}), bare_speech(w.vocab, {i, 2}));
    // Pair 3's natural side is unscorable.
    pairs[3].first.loss_mask.assign(pairs[3].first.loss_mask.size(), false);

    TinyWorld w2;
    ModelConfig cfg = w2.config();
    Transformer<float> model(cfg);
    Parameters<float> p = init_parameters<float>(cfg, 11);
    auto scorer = [&](const MixedSequence& s) { return score_sequence<float>(model, p, s).score; };

    PreferenceOutcome out = preference_eval(pairs, scorer);
    CHECK(out.excluded == 1);
    REQUIRE(out.excluded_index.size() == 1);
    CHECK(out.excluded_index[0] == 3);
    CHECK(out.outcomes.size() == 4);

    // Everything excluded -> error, not an NaN accuracy.
    for (auto& pr : pairs) pr.first.loss_mask.assign(pr.first.loss_mask.size(), false);
    CHECK_THROWS_AS(preference_eval(pairs, scorer), Error);
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

TEST_CASE("bootstrap intervals are deterministic per seed and bracket the mean") {
    // Continuous outcomes so quantile coincidences across seeds are
    // vanishingly unlikely (0/1 outcomes put resample means on a lattice).
    std::vector<double> outcomes;
    Rng rng(13);
    for (int i = 0; i < 80; ++i) outcomes.push_back(rng.uniform());

    BootstrapCi a = bootstrap_ci(outcomes, 10000, 7);
    BootstrapCi b = bootstrap_ci(outcomes, 10000, 7);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.mean == b.mean);
    CHECK(a.lo <= a.mean);
    CHECK(a.mean <= a.hi);
    CHECK(a.lo < a.hi);

    BootstrapCi c = bootstrap_ci(outcomes, 10000, 8);
    CHECK((c.lo != a.lo || c.hi != a.hi));

    // Wider alpha gives a narrower interval.
    BootstrapCi tight = bootstrap_ci(outcomes, 10000, 7, 0.5);
    CHECK(tight.lo >= a.lo);
    CHECK(tight.hi <= a.hi);

    // Constant outcomes collapse the interval exactly.
    std::vector<double> flat(20, 0.5);
    BootstrapCi f = bootstrap_ci(flat, 500, 1);
    CHECK(f.lo == 0.5);
    CHECK(f.hi == 0.5);
    CHECK(f.mean == 0.5);

    CHECK_THROWS_AS(bootstrap_ci({}, 100, 1), Error);
    CHECK_THROWS_AS(bootstrap_ci(flat, 0, 1), Error);
    CHECK_THROWS_AS(bootstrap_ci(flat, 100, 1, 0.0), Error);
}

// ---------------------------------------------------------------------------
// linear probe
// ---------------------------------------------------------------------------

TEST_CASE("the probe separates one-hot classes perfectly") {
    const int n = 60, d = 6, classes = 3;
    MatD X = MatD::Zero(n, d);
    std::vector<int> y(n);
    Rng rng(21);
    for (int i = 0; i < n; ++i) {
        int c = i % classes;
        y[size_t(i)] = c;
        X(i, c) = 5.0;
        for (int j = 0; j < d; ++j) X(i, j) += 0.05 * rng.gaussian();
    }
    ProbeResult r = linear_probe(X, y, classes, 11);
    CHECK(r.test_accuracy == 1.0);
    CHECK(r.train_accuracy == 1.0);
    CHECK(r.n_train == 48);
    CHECK(r.n_test == 12);
}

TEST_CASE("the probe stays near chance on pure noise") {
    const int n = 400, d = 4;
    MatD X(n, d);
    std::vector<int> y(n);
    Rng rng(22);
    for (int i = 0; i < n; ++i) {
        y[size_t(i)] = int(rng.uniform_int(2));
        for (int j = 0; j < d; ++j) X(i, j) = rng.gaussian();
    }
    ProbeResult r = linear_probe(X, y, 2, 11);
    CHECK(r.test_accuracy > 0.3);
    CHECK(r.test_accuracy < 0.7);
}

TEST_CASE("probe determinism and input validation") {
    MatD X(10, 3);
    std::vector<int> y(10);
    Rng rng(23);
    for (int i = 0; i < 10; ++i) {
        y[size_t(i)] = i % 2;
        for (int j = 0; j < 3; ++j) X(i, j) = rng.gaussian() + double(y[size_t(i)]);
    }
    ProbeResult a = linear_probe(X, y, 2, 5);
    ProbeResult b = linear_probe(X, y, 2, 5);
    CHECK(a.test_accuracy == b.test_accuracy);
    CHECK(a.train_accuracy == b.train_accuracy);
    CHECK(a.n_train == 8);
    CHECK(a.n_test == 2);

    std::vector<int> short_y(9, 0);
    CHECK_THROWS_AS(linear_probe(X, short_y, 2, 5), Error);
    std::vector<int> bad_y = y;
    bad_y[0] = 2;
    CHECK_THROWS_AS(linear_probe(X, bad_y, 2, 5), Error);
    CHECK_THROWS_AS(linear_probe(X, y, 1, 5), Error);
    MatD tiny = X.topRows(4);
    std::vector<int> tiny_y(y.begin(), y.begin() + 4);
    CHECK_THROWS_AS(linear_probe(tiny, tiny_y, 2, 5), Error);
}

TEST_CASE("pooled hidden states require audio positions") {
    TinyWorld w;
    ModelConfig cfg = w.config();
    Transformer<float> model(cfg);
    Parameters<float> p = init_parameters<float>(cfg, 12);

    MixedSequence s = speech_only_sequence(w.utt(3, 8), w.vocab);
    VecD h = pooled_hidden<float>(model, p, s);
    CHECK(h.size() == cfg.d_model);
    CHECK(std::isfinite(h.sum()));

    MixedSequence text_only;
    text_only.ids = {w.vocab.text_delim_id(), w.vocab.text_id("c0w0"), w.vocab.eos_id()};
    text_only.modality = {Modality::delimiter, Modality::text, Modality::special};
    text_only.loss_mask = {false, true, true};
    text_only.coarse_labels = {-1, -1, -1};
    text_only.code_labels = {-1, -1, -1};
    text_only.frame_index = {-1, -1, -1};
    CHECK_THROWS_AS(pooled_hidden<float>(model, p, text_only), Error);
}

TEST_CASE("factor probes read the right label off the stream") {
    TinyWorld w;
    RunConfig cfg;
    cfg.data.seed = 31;
    cfg.data.n_codes = 64;
    ModelConfig mc = w.config();
    Transformer<float> model(mc);
    Parameters<float> p = init_parameters<float>(mc, 13);

    std::vector<FrameStream> corpus;
    for (uint64_t s = 0; s < 12; ++s) corpus.push_back(w.utt(s, 10));
    MatD X;
    std::vector<int> y;
    probe_features<float>(mc, p, corpus, w.vocab, Factor::speaker, X, y);
    CHECK(X.rows() == 12);
    CHECK(X.cols() == mc.d_model);
    for (size_t i = 0; i < corpus.size(); ++i) CHECK(y[i] == corpus[i].latents.speaker);
    probe_features<float>(mc, p, corpus, w.vocab, Factor::content, X, y);
    for (size_t i = 0; i < corpus.size(); ++i) CHECK(y[i] == corpus[i].latents.content);
}
