// Command-line front end. One declarative JSON config drives every subcommand;
// section.key=value overrides adjust it. Every artifact gets a manifest with
// input hashes and the config hash, and inputs with manifests are verified
// before use. Exit codes: 0 success, 2 invalid argument, 3 I/O, 4 hash
// mismatch, 5 format, 6 version mismatch, 7 checksum, 8 non-finite loss.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unitlm/checkpoint.hpp"
#include "unitlm/config.hpp"
#include "unitlm/pipeline.hpp"
#include "unitlm/scoring.hpp"

namespace fs = std::filesystem;
using namespace unitlm;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path, "JSON run configuration (defaults apply if omitted)");
    cmd->add_option("--set", c.overrides, "override as section.key=value (repeatable)")
        ->take_all();
}

RunConfig resolve(const CommonOpts& c) { return load_run_config(c.config_path, c.overrides); }

std::string hash_str(const RunConfig& cfg) { return hex64(config_hash(cfg)); }

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorCode::io, "cannot create directory " + dir);
}

void emit(const nlohmann::json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        write_file_bytes(out_path, j.dump(2) + "\n");
        std::cout << "wrote " << out_path << "\n";
    }
}

std::vector<uint64_t> parse_seeds(const std::string& csv, int fallback_count) {
    std::vector<uint64_t> seeds;
    if (csv.empty()) {
        for (int i = 1; i <= fallback_count; ++i) seeds.push_back(uint64_t(i));
        return seeds;
    }
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        std::string tok = csv.substr(pos, comma - pos);
        require(!tok.empty(), ErrorCode::invalid_argument, "empty seed in list: " + csv);
        seeds.push_back(std::stoull(tok));
        pos = comma + 1;
        if (comma == csv.size()) break;
    }
    return seeds;
}

// --------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& common, const std::string& out_dir) {
    RunConfig cfg = resolve(common);
    ensure_dir(out_dir);
    World w = build_world(cfg);

    std::string corpus_path = out_dir + "/corpus.jsonl";
    auto corpus = make_train_corpus(w, cfg);
    save_corpus(corpus_path, corpus);
    save_corpus_manifest(corpus_path, cfg.world, cfg.data.seed, corpus.size());

    std::string vocab_path = out_dir + "/vocab.txt";
    w.vocab.save(vocab_path);
    write_artifact_manifest(vocab_path, "gen-data", hash_str(cfg), {});

    std::string cb_path = out_dir + "/codebook.bin";
    codebook_to_archive(w.codebook).save(cb_path);
    write_artifact_manifest(cb_path, "gen-data", hash_str(cfg), {});

    for (Factor f : {Factor::speaker, Factor::content, Factor::background}) {
        std::string path = out_dir + "/pairs-" + factor_name(f) + ".jsonl";
        save_pairs(path, make_pref_pairs(w, cfg, f));
        write_artifact_manifest(path, "gen-data", hash_str(cfg), {});
    }

    write_file_bytes(out_dir + "/config.json", run_config_to_json(cfg).dump(2) + "\n");
    std::cout << "generated " << corpus.size() << " utterances, " << cfg.data.n_pairs
              << " pairs per factor, vocab of " << w.vocab.total_size() << " ids in " << out_dir
              << "\n";
    return 0;
}

int cmd_fit_codebook(const CommonOpts& common, const std::string& out_path) {
    RunConfig cfg = resolve(common);
    cfg.data.refine_codebook = true;  // this subcommand exists to run the refinement
    World w = build_world(cfg);
    codebook_to_archive(w.codebook).save(out_path);
    write_artifact_manifest(out_path, "fit-codebook", hash_str(cfg), {});
    std::cout << "fitted codebook with " << w.codebook.n_codes() << " codes -> " << out_path
              << "\n";
    return 0;
}

int cmd_fit_centroids(const CommonOpts& common, const std::string& corpus_path,
                      const std::string& out_path) {
    RunConfig cfg = resolve(common);
    verify_input_hash(corpus_path);
    auto corpus = load_corpus(corpus_path);
    Centroids c = fit_centroids(corpus, cfg.data.n_codes);
    c.to_archive().save(out_path);
    write_artifact_manifest(out_path, "fit-centroids", hash_str(cfg), {corpus_path});
    std::cout << "fitted centroids for " << c.populated_count() << "/" << c.n_codes()
              << " populated codes -> " << out_path << "\n";
    return 0;
}

int cmd_init_embed(const CommonOpts& common, const std::string& centroids_path,
                   const std::string& out_path) {
    RunConfig cfg = resolve(common);
    verify_input_hash(centroids_path);
    Centroids c = Centroids::from_archive(Archive::load(centroids_path, "unitlm-centroids"));
    DistillArtifacts d = distill_from_centroids(std::move(c), cfg);
    Archive a = distill_to_archive(d);
    a.metadata["config_hash"] = hash_str(cfg);
    a.save(out_path);
    write_artifact_manifest(out_path, "init-embed", hash_str(cfg), {centroids_path});
    std::cout << "initialized " << d.embed_init.rows() << " speech embeddings (sigma " << d.sigma
              << ", " << d.coarse.K << " buckets) -> " << out_path << "\n";
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& data_dir, const std::string& out_dir,
              const std::string& embed_path, bool fresh) {
    RunConfig cfg = resolve(common);
    std::string corpus_path = data_dir + "/corpus.jsonl";
    std::string vocab_path = data_dir + "/vocab.txt";
    verify_input_hash(corpus_path);
    verify_input_hash(vocab_path);
    auto corpus = load_corpus(corpus_path);
    UnifiedVocab vocab = UnifiedVocab::load(vocab_path);

    DistillArtifacts distilled;
    bool have_distilled = !embed_path.empty();
    if (have_distilled) {
        verify_input_hash(embed_path);
        distilled = distill_from_archive(Archive::load(embed_path, "unitlm-embed-init"));
    } else {
        Centroids cen = fit_centroids(corpus, vocab.n_codes());
        int k_eff = std::min(cfg.distill.coarse_k, cen.populated_count());
        distilled.coarse = fit_coarse(cen, k_eff, derive_seed(cfg.data.seed, "coarse"));
    }

    ModelConfig mc = resolve_model_config(cfg, vocab, distilled.coarse.K);
    TrainSet set = build_train_set(vocab, corpus, cfg, &distilled.coarse);
    TrainerState<float> st = make_trainer<float>(mc, cfg.train.adamw, cfg.train.run_seed);
    if (have_distilled) install_distilled_init<float>(st.params, mc, distilled);

    ensure_dir(out_dir);
    ensure_dir(out_dir + "/checkpoints");
    TrainPlan plan = build_train_plan(cfg);
    plan.checkpoint_dir = out_dir + "/checkpoints";
    plan.journal_path = out_dir + "/journal.jsonl";
    if (fresh && fs::exists(plan.journal_path)) fs::remove(plan.journal_path);

    train_run(st, set, plan, &std::cout);

    nlohmann::json manifest{{"schema", "unitlm-run-v1"},
                            {"config", run_config_to_json(cfg)},
                            {"config_hash", hash_str(cfg)},
                            {"inputs",
                             {{corpus_path, file_hash_hex(corpus_path)},
                              {vocab_path, file_hash_hex(vocab_path)}}},
                            {"steps", st.step},
                            {"final_checkpoint", plan.checkpoint_dir + "/final.bin"}};
    if (have_distilled) manifest["inputs"][embed_path] = file_hash_hex(embed_path);
    write_file_bytes(out_dir + "/manifest.json", manifest.dump(2) + "\n");
    std::cout << "trained " << st.step << " steps -> " << plan.checkpoint_dir << "/final.bin\n";
    return 0;
}

std::string find_latest_checkpoint(const std::string& dir) {
    std::string best;
    long best_step = -1;
    require(fs::is_directory(dir), ErrorCode::io, "checkpoint directory not found: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        long step = -1;
        if (name.rfind("checkpoint-", 0) == 0 && name.size() >= 15)
            step = std::atol(name.substr(11, 6).c_str());
        if (step > best_step) {
            best_step = step;
            best = entry.path().string();
        }
    }
    require(!best.empty(), ErrorCode::io, "no step checkpoints in " + dir);
    return best;
}

int cmd_resume(const CommonOpts& common, const std::string& data_dir, const std::string& run_dir,
               std::string checkpoint_path, long extend_steps) {
    RunConfig cfg = resolve(common);
    if (checkpoint_path.empty()) checkpoint_path = find_latest_checkpoint(run_dir + "/checkpoints");
    LoadedCheckpoint<float> ck = load_checkpoint<float>(checkpoint_path);

    std::string corpus_path = data_dir + "/corpus.jsonl";
    std::string vocab_path = data_dir + "/vocab.txt";
    verify_input_hash(corpus_path);
    verify_input_hash(vocab_path);
    auto corpus = load_corpus(corpus_path);
    UnifiedVocab vocab = UnifiedVocab::load(vocab_path);

    // The checkpoint's architecture echo is authoritative; the config supplies
    // the rest of the plan and must agree with it.
    ModelConfig expect = resolve_model_config(cfg, vocab, ck.config.coarse_k);
    require(model_config_to_json(expect) == model_config_to_json(ck.config),
            ErrorCode::invalid_argument,
            "resume: config does not match the checkpoint's architecture echo");

    Centroids cen = fit_centroids(corpus, vocab.n_codes());
    CoarseMap coarse = fit_coarse(cen, ck.config.coarse_k, derive_seed(cfg.data.seed, "coarse"));
    TrainSet set = build_train_set(vocab, corpus, cfg, &coarse);

    TrainerState<float> st = trainer_from_checkpoint(ck);
    TrainPlan plan = build_train_plan(cfg);
    if (extend_steps > 0) plan.total_steps = extend_steps;
    require(plan.total_steps >= st.step, ErrorCode::invalid_argument,
            "resume: checkpoint is already past the requested step count");
    plan.checkpoint_dir = run_dir + "/checkpoints";
    plan.journal_path = run_dir + "/journal.jsonl";
    ensure_dir(plan.checkpoint_dir);

    train_run(st, set, plan, &std::cout);
    std::cout << "resumed from step " << ck.step << ", now at " << st.step << "\n";
    return 0;
}

int cmd_score(const std::string& checkpoint_path, const std::string& records_path,
              const std::string& corpus_path, const std::string& vocab_path,
              const std::string& out_path) {
    LoadedCheckpoint<float> ck = load_checkpoint<float>(checkpoint_path);
    Transformer<float> model(ck.config);

    std::vector<MixedSequence> seqs;
    if (!records_path.empty()) {
        verify_input_hash(records_path);
        std::string bytes = read_file_bytes(records_path);
        size_t pos = 0;
        while (pos < bytes.size()) {
            size_t nl = bytes.find('\n', pos);
            if (nl == std::string::npos) nl = bytes.size();
            std::string_view line(bytes.data() + pos, nl - pos);
            pos = nl + 1;
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            require(!j.is_discarded(), ErrorCode::format, "bad JSON record in " + records_path);
            seqs.push_back(mixed_sequence_from_json(j));
        }
    } else {
        require(!corpus_path.empty() && !vocab_path.empty(), ErrorCode::invalid_argument,
                "score: pass either --records, or --corpus with --vocab");
        verify_input_hash(corpus_path);
        verify_input_hash(vocab_path);
        UnifiedVocab vocab = UnifiedVocab::load(vocab_path);
        for (const auto& fs : load_corpus(corpus_path))
            seqs.push_back(speech_only_sequence(fs, vocab));
    }
    require(!seqs.empty(), ErrorCode::invalid_argument, "score: no input sequences");

    nlohmann::json lines = nlohmann::json::array();
    for (size_t i = 0; i < seqs.size(); ++i) {
        ScoreResult r = score_sequence(model, ck.params, seqs[i]);
        lines.push_back({{"index", i},
                         {"nll_mean", r.nll_mean},
                         {"score", r.score},
                         {"tokens", r.token_count}});
    }
    emit(nlohmann::json{{"checkpoint", checkpoint_path}, {"results", lines}}, out_path);
    return 0;
}

int cmd_eval_pref(const CommonOpts& common, const std::string& checkpoint_path,
                  const std::string& pairs_path, const std::string& vocab_path,
                  const std::string& out_path) {
    RunConfig cfg = resolve(common);
    verify_input_hash(pairs_path);
    verify_input_hash(vocab_path);
    LoadedCheckpoint<float> ck = load_checkpoint<float>(checkpoint_path);
    UnifiedVocab vocab = UnifiedVocab::load(vocab_path);
    auto pairs = load_pairs(pairs_path);
    require(!pairs.empty(), ErrorCode::invalid_argument, "eval-pref: pair file is empty");

    PreferenceOutcome po = model_preference<float>(ck.config, ck.params, pairs, vocab);
    BootstrapCi ci =
        bootstrap_ci(po.outcomes, cfg.eval.bootstrap_resamples, cfg.eval.bootstrap_seed);
    for (size_t idx : po.excluded_index)
        std::cerr << "note: pair " << idx << " excluded from scoring\n";

    nlohmann::json rep{{"factor", factor_name(pairs.front().factor)},
                       {"pairs", pairs.size()},
                       {"accuracy", po.accuracy},
                       {"wins", po.wins},
                       {"ties", po.ties},
                       {"losses", po.losses},
                       {"excluded", po.excluded},
                       {"ci_lo", ci.lo},
                       {"ci_hi", ci.hi},
                       {"resamples", ci.n_resamples}};
    emit(rep, out_path);
    return 0;
}

int cmd_ablate(const CommonOpts& common, const std::string& seeds_csv,
               const std::string& out_path) {
    RunConfig cfg = resolve(common);
    std::vector<uint64_t> seeds = parse_seeds(seeds_csv, 5);
    World w = build_world(cfg);
    auto corpus = make_train_corpus(w, cfg);
    auto pairs = make_pref_pairs(w, cfg, Factor::speaker);
    AblationReport rep = run_ablation(cfg, w, corpus, pairs, seeds, Factor::speaker);

    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& r : rep.per_seed)
        per_seed.push_back(
            {{"seed", r.seed}, {"with_aux", r.acc_plus}, {"without_aux", r.acc_minus}});
    emit(nlohmann::json{{"factor", factor_name(rep.factor)},
                        {"seeds", per_seed},
                        {"mean_with_aux", rep.mean_plus},
                        {"mean_without_aux", rep.mean_minus},
                        {"mean_difference", rep.mean_diff}},
         out_path);
    return 0;
}

int cmd_probe(const CommonOpts& common, const std::vector<std::string>& checkpoints,
              const std::string& factor_str, const std::string& out_path) {
    RunConfig cfg = resolve(common);
    Factor factor = factor_from_name(factor_str);
    World w = build_world(cfg);
    auto probe_corpus = make_probe_corpus(w, cfg, cfg.eval.probe_examples);

    nlohmann::json results = nlohmann::json::array();
    for (const auto& path : checkpoints) {
        LoadedCheckpoint<float> ck = load_checkpoint<float>(path);
        double acc = probe_accuracy<float>(ck.config, ck.params, probe_corpus, w.vocab, factor,
                                           cfg.eval);
        results.push_back({{"checkpoint", path}, {"step", ck.step}, {"accuracy", acc}});
    }
    emit(nlohmann::json{{"factor", factor_str},
                        {"examples", probe_corpus.size()},
                        {"results", results}},
         out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified text+speech language modeling toolkit"};
    app.require_subcommand(1);

    CommonOpts c_gen, c_cb, c_cen, c_emb, c_train, c_res, c_pref, c_abl, c_probe;
    std::string out_dir, cb_out, cen_corpus, cen_out, emb_centroids, emb_out;
    std::string tr_data, tr_out, tr_embed;
    bool tr_fresh = true;
    std::string rs_data, rs_run, rs_ckpt;
    long rs_steps = 0;
    std::string sc_ckpt, sc_records, sc_corpus, sc_vocab, sc_out;
    std::string ep_ckpt, ep_pairs, ep_vocab, ep_out;
    std::string ab_seeds, ab_out;
    std::vector<std::string> pr_ckpts;
    std::string pr_factor = "content", pr_out;

    auto* gen = app.add_subcommand("gen-data", "synthesize corpus, pairs, vocab, and codebook");
    add_common(gen, c_gen);
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* fcb = app.add_subcommand("fit-codebook", "k-means refinement of the frozen codebook");
    add_common(fcb, c_cb);
    fcb->add_option("--out", cb_out, "output archive path")->required();

    auto* fce = app.add_subcommand("fit-centroids", "per-code feature centroids from a corpus");
    add_common(fce, c_cen);
    fce->add_option("--corpus", cen_corpus, "corpus JSONL")->required();
    fce->add_option("--out", cen_out, "output archive path")->required();

    auto* ie = app.add_subcommand("init-embed", "distilled embedding init from centroids");
    add_common(ie, c_emb);
    ie->add_option("--centroids", emb_centroids, "centroid archive")->required();
    ie->add_option("--out", emb_out, "output archive path")->required();

    auto* tr = app.add_subcommand("train", "train a model on a generated corpus");
    add_common(tr, c_train);
    tr->add_option("--data", tr_data, "directory produced by gen-data")->required();
    tr->add_option("--out", tr_out, "run directory for checkpoints + journal")->required();
    tr->add_option("--init-embed", tr_embed, "distilled init archive (random init if omitted)");
    tr->add_flag("!--no-fresh-journal", tr_fresh, "append to an existing journal");

    auto* rs = app.add_subcommand("resume", "continue training from a checkpoint");
    add_common(rs, c_res);
    rs->add_option("--data", rs_data, "directory produced by gen-data")->required();
    rs->add_option("--run", rs_run, "run directory of the interrupted training")->required();
    rs->add_option("--checkpoint", rs_ckpt, "checkpoint file (default: latest step checkpoint)");
    rs->add_option("--steps", rs_steps, "extend training to this step count");

    auto* sc = app.add_subcommand("score", "length-normalized likelihoods of sequences");
    sc->add_option("--checkpoint", sc_ckpt, "model checkpoint")->required();
    sc->add_option("--records", sc_records, "JSONL of token records");
    sc->add_option("--corpus", sc_corpus, "corpus JSONL (scored as speech-only records)");
    sc->add_option("--vocab", sc_vocab, "vocabulary file (required with --corpus)");
    sc->add_option("--out", sc_out, "write the JSON report here instead of stdout");

    auto* ep = app.add_subcommand("eval-pref", "pairwise preference accuracy with bootstrap CI");
    add_common(ep, c_pref);
    ep->add_option("--checkpoint", ep_ckpt, "model checkpoint")->required();
    ep->add_option("--pairs", ep_pairs, "pair JSONL from gen-data")->required();
    ep->add_option("--vocab", ep_vocab, "vocabulary file")->required();
    ep->add_option("--out", ep_out, "write the JSON report here instead of stdout");

    auto* ab = app.add_subcommand("ablate", "auxiliary-loss ablation study");
    add_common(ab, c_abl);
    ab->add_option("--seeds", ab_seeds, "comma-separated seeds (default 1..5)");
    ab->add_option("--out", ab_out, "write the JSON report here instead of stdout");

    auto* pr = app.add_subcommand("probe", "linear probe of checkpoints");
    add_common(pr, c_probe);
    pr->add_option("--checkpoint", pr_ckpts, "checkpoint file (repeatable)")
        ->required()
        ->take_all();
    pr->add_option("--factor", pr_factor, "speaker | content | background");
    pr->add_option("--out", pr_out, "write the JSON report here instead of stdout");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(c_gen, out_dir);
        if (fcb->parsed()) return cmd_fit_codebook(c_cb, cb_out);
        if (fce->parsed()) return cmd_fit_centroids(c_cen, cen_corpus, cen_out);
        if (ie->parsed()) return cmd_init_embed(c_emb, emb_centroids, emb_out);
        if (tr->parsed()) return cmd_train(c_train, tr_data, tr_out, tr_embed, tr_fresh);
        if (rs->parsed()) return cmd_resume(c_res, rs_data, rs_run, rs_ckpt, rs_steps);
        if (sc->parsed()) return cmd_score(sc_ckpt, sc_records, sc_corpus, sc_vocab, sc_out);
        if (ep->parsed()) return cmd_eval_pref(c_pref, ep_ckpt, ep_pairs, ep_vocab, ep_out);
        if (ab->parsed()) return cmd_ablate(c_abl, ab_seeds, ab_out);
        if (pr->parsed()) return cmd_probe(c_probe, pr_ckpts, pr_factor, pr_out);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
