#pragma once

// Corpus persistence: one JSON record per line, plus a manifest carrying the
// latent spec, seed, and counts. Feature rows are float32, base64-encoded by
// default (plain arrays also accepted on read).

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitlm/common.hpp"
#include "unitlm/synth.hpp"

namespace unitlm {

using Json = nlohmann::json;

inline Json latent_spec_to_json(const LatentSpec& s) {
    return Json{{"n_speakers", s.n_speakers},
                {"n_contents", s.n_contents},
                {"n_backgrounds", s.n_backgrounds},
                {"feature_dim", s.feature_dim},
                {"noise_scale", s.noise_scale},
                {"phones_per_content", s.phones_per_content},
                {"phone_hold", s.phone_hold},
                {"phone_pool_size", s.phone_pool_size},
                {"speaker_scale", s.speaker_scale},
                {"content_scale", s.content_scale},
                {"background_scale", s.background_scale}};
}

inline LatentSpec latent_spec_from_json(const Json& j) {
    LatentSpec s;
    s.n_speakers = j.at("n_speakers").get<int>();
    s.n_contents = j.at("n_contents").get<int>();
    s.n_backgrounds = j.at("n_backgrounds").get<int>();
    s.feature_dim = j.at("feature_dim").get<int>();
    s.noise_scale = j.at("noise_scale").get<double>();
    s.phones_per_content = j.value("phones_per_content", s.phones_per_content);
    s.phone_hold = j.value("phone_hold", s.phone_hold);
    s.phone_pool_size = j.value("phone_pool_size", s.phone_pool_size);
    s.speaker_scale = j.value("speaker_scale", s.speaker_scale);
    s.content_scale = j.value("content_scale", s.content_scale);
    s.background_scale = j.value("background_scale", s.background_scale);
    s.validate();
    return s;
}

inline Json frame_stream_to_json(const FrameStream& fs, bool base64_features = true) {
    Json j;
    j["codes"] = fs.codes;
    j["feature_dim"] = fs.features.cols();
    if (base64_features) {
        // Raw little-endian doubles: the round-trip is bit-exact, which keeps
        // "regenerate from manifest" and "load from file" indistinguishable.
        j["features_b64"] =
            base64_encode(fs.features.data(), size_t(fs.features.size()) * sizeof(double));
    } else {
        Json rows = Json::array();
        for (int t = 0; t < fs.features.rows(); ++t) {
            Json row = Json::array();
            for (int d = 0; d < fs.features.cols(); ++d) row.push_back(fs.features(t, d));
            rows.push_back(std::move(row));
        }
        j["features"] = std::move(rows);
    }
    Json times = Json::array();
    for (auto& [s, e] : fs.times) times.push_back(Json::array({s, e}));
    j["times"] = std::move(times);
    if (!fs.words.empty()) {
        Json words = Json::array();
        for (auto& w : fs.words) words.push_back(Json::array({w.symbol, w.start, w.end}));
        j["words"] = std::move(words);
    }
    j["latents"] = Json{{"speaker", fs.latents.speaker},
                        {"content", fs.latents.content},
                        {"background", fs.latents.background},
                        {"phase", fs.latents.phase}};
    if (fs.latents.has_switch) {
        j["latents"]["switch_factor"] = fs.latents.switch_factor;
        j["latents"]["switch_frame"] = fs.latents.switch_frame;
    }
    j["seed"] = fs.seed;
    return j;
}

inline FrameStream frame_stream_from_json(const Json& j) {
    FrameStream fs;
    fs.codes = j.at("codes").get<std::vector<int>>();
    int T = int(fs.codes.size());
    int d = j.at("feature_dim").get<int>();
    fs.features.resize(T, d);
    if (j.contains("features_b64")) {
        auto bytes = base64_decode(j.at("features_b64").get<std::string>());
        require(bytes.size() == size_t(T) * size_t(d) * sizeof(double), ErrorCode::format,
                "corpus record: feature payload size mismatch");
        std::memcpy(fs.features.data(), bytes.data(), bytes.size());
    } else if (j.contains("features")) {
        const auto& rows = j.at("features");
        require(int(rows.size()) == T, ErrorCode::format, "corpus record: feature row count mismatch");
        for (int t = 0; t < T; ++t)
            for (int k = 0; k < d; ++k) fs.features(t, k) = rows[size_t(t)][size_t(k)].get<double>();
    } else {
        fail(ErrorCode::format, "corpus record: no features field");
    }
    for (const auto& te : j.at("times"))
        fs.times.emplace_back(te[0].get<double>(), te[1].get<double>());
    if (j.contains("words")) {
        for (const auto& we : j.at("words"))
            fs.words.push_back(Word{we[0].get<std::string>(), we[1].get<double>(), we[2].get<double>()});
    }
    if (j.contains("latents")) {
        const auto& l = j.at("latents");
        fs.latents.speaker = l.value("speaker", -1);
        fs.latents.content = l.value("content", -1);
        fs.latents.background = l.value("background", -1);
        fs.latents.phase = l.value("phase", 0);
        if (l.contains("switch_factor")) {
            fs.latents.has_switch = true;
            fs.latents.switch_factor = l.at("switch_factor").get<std::string>();
            fs.latents.switch_frame = l.value("switch_frame", -1);
        }
    }
    fs.seed = j.value("seed", uint64_t{0});
    return fs;
}

inline void save_corpus(const std::string& path, const std::vector<FrameStream>& records) {
    std::string out;
    for (const auto& fs : records) out += frame_stream_to_json(fs).dump() + "\n";
    write_file_bytes(path, out);
}

inline std::vector<FrameStream> load_corpus(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    std::vector<FrameStream> records;
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < bytes.size()) {
        size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) nl = bytes.size();
        ++line_no;
        std::string_view line(bytes.data() + pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        Json j = Json::parse(line, nullptr, false);
        require(!j.is_discarded(), ErrorCode::format,
                path + ": invalid JSON on line " + std::to_string(line_no));
        records.push_back(frame_stream_from_json(j));
    }
    return records;
}

inline void save_corpus_manifest(const std::string& corpus_path, const LatentSpec& spec,
                                 uint64_t seed, size_t count) {
    Json j{{"schema", "unitlm-corpus-v1"},
           {"spec", latent_spec_to_json(spec)},
           {"seed", seed},
           {"count", count},
           {"corpus_hash", file_hash_hex(corpus_path)}};
    write_file_bytes(corpus_path + ".manifest.json", j.dump(2) + "\n");
}

// Provenance guard shared by all subcommands: if `<path>.manifest.json`
// exists and records a content hash, the actual file must match it.
inline void verify_input_hash(const std::string& path) {
    std::string manifest_path = path + ".manifest.json";
    std::ifstream probe(manifest_path);
    if (!probe.good()) return;
    Json j = Json::parse(read_file_bytes(manifest_path), nullptr, false);
    require(!j.is_discarded(), ErrorCode::format, "unreadable manifest: " + manifest_path);
    std::string declared;
    if (j.contains("corpus_hash")) declared = j["corpus_hash"].get<std::string>();
    else if (j.contains("output_hash")) declared = j["output_hash"].get<std::string>();
    if (declared.empty()) return;
    std::string actual = file_hash_hex(path);
    require(actual == declared, ErrorCode::hash_mismatch,
            path + ": content hash " + actual + " does not match manifest " + declared);
}

// Generic artifact manifest written by CLI subcommands.
inline void write_artifact_manifest(const std::string& output_path, const std::string& subcommand,
                                    const std::string& config_hash,
                                    const std::vector<std::string>& input_paths) {
    Json inputs = Json::object();
    for (const auto& p : input_paths) inputs[p] = file_hash_hex(p);
    Json j{{"schema", "unitlm-artifact-v1"},
           {"tool", "unitlm"},
           {"tool_version", "0.1.0"},
           {"subcommand", subcommand},
           {"config_hash", config_hash},
           {"inputs", inputs},
           {"output_hash", file_hash_hex(output_path)}};
    write_file_bytes(output_path + ".manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Preference pairs on disk: one JSON object per line.
// ---------------------------------------------------------------------------

inline Json preference_to_json(const PreferenceStreams& p) {
    return Json{{"v", 1},
                {"factor", factor_name(p.factor)},
                {"switch_frame", p.switch_frame},
                {"natural", frame_stream_to_json(p.natural)},
                {"perturbed", frame_stream_to_json(p.perturbed)}};
}

inline Factor factor_from_name(const std::string& name) {
    if (name == "speaker") return Factor::speaker;
    if (name == "content") return Factor::content;
    if (name == "background") return Factor::background;
    fail(ErrorCode::invalid_argument, "unknown factor name: " + name);
}

inline PreferenceStreams preference_from_json(const Json& j) {
    require(j.is_object() && j.value("v", 0) == 1, ErrorCode::format,
            "preference pair: unsupported record version");
    PreferenceStreams p;
    p.factor = factor_from_name(j.at("factor").get<std::string>());
    p.switch_frame = j.at("switch_frame").get<int>();
    p.natural = frame_stream_from_json(j.at("natural"));
    p.perturbed = frame_stream_from_json(j.at("perturbed"));
    return p;
}

inline void save_pairs(const std::string& path, const std::vector<PreferenceStreams>& pairs) {
    std::string out;
    for (const auto& p : pairs) out += preference_to_json(p).dump() + "\n";
    write_file_bytes(path, out);
}

inline std::vector<PreferenceStreams> load_pairs(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    std::vector<PreferenceStreams> pairs;
    size_t pos = 0, line_no = 0;
    while (pos < bytes.size()) {
        size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) nl = bytes.size();
        ++line_no;
        std::string_view line(bytes.data() + pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        Json j = Json::parse(line, nullptr, false);
        require(!j.is_discarded(), ErrorCode::format,
                "bad JSON on line " + std::to_string(line_no) + " of " + path);
        pairs.push_back(preference_from_json(j));
    }
    return pairs;
}

}  // namespace unitlm
