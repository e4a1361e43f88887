#pragma once

// Checkpoint container: model parameters, both Adam moment sets, the step
// counter, the run seed (which, with the step index, is the entire RNG state
// of the stateless sampling scheme), and an echo of the model configuration.
// Round-trips are bit-exact: tensors are stored in their working precision.

#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "unitlm/archive.hpp"
#include "unitlm/common.hpp"
#include "unitlm/model.hpp"
#include "unitlm/optimizer.hpp"

namespace unitlm {

template <class T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>)
        return "f32";
    else
        return "f64";
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"d_model", c.d_model},
                          {"n_layers", c.n_layers},
                          {"n_heads", c.n_heads},
                          {"d_ff", c.d_ff},
                          {"max_seq_len", c.max_seq_len},
                          {"vocab_size", c.vocab_size},
                          {"n_codes", c.n_codes},
                          {"speech_base", c.speech_base},
                          {"coarse_k", c.coarse_k},
                          {"d_ssl", c.d_ssl},
                          {"init_std", c.init_std},
                          {"align_trainable", c.align_trainable}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.n_codes = j.at("n_codes").get<int>();
    c.speech_base = j.at("speech_base").get<int>();
    c.coarse_k = j.at("coarse_k").get<int>();
    c.d_ssl = j.at("d_ssl").get<int>();
    c.init_std = j.at("init_std").get<double>();
    c.align_trainable = j.at("align_trainable").get<bool>();
    c.validate();
    return c;
}

inline nlohmann::json adamw_config_to_json(const AdamWConfig& c) {
    return nlohmann::json{{"beta1", c.beta1},
                          {"beta2", c.beta2},
                          {"eps", c.eps},
                          {"weight_decay", c.weight_decay}};
}

inline AdamWConfig adamw_config_from_json(const nlohmann::json& j) {
    AdamWConfig c;
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.validate();
    return c;
}

namespace detail {

template <class T>
void put_tensor(Archive& a, const std::string& name, const Mat<T>& m) {
    if constexpr (std::is_same_v<T, float>)
        a.put_f32(name, m);
    else
        a.put_f64(name, m);
}

template <class T>
const Mat<T>& get_tensor(const Archive& a, const std::string& name) {
    if constexpr (std::is_same_v<T, float>)
        return a.get_f32(name);
    else
        return a.get_f64(name);
}

template <class T>
void put_params(Archive& a, const std::string& prefix, const Parameters<T>& p) {
    p.for_each_tensor([&](const std::string& name, const Mat<T>& m) {
        put_tensor<T>(a, prefix + name, m);
    });
}

template <class T>
void get_params(const Archive& a, const std::string& prefix, Parameters<T>& p) {
    p.for_each_tensor([&](const std::string& name, Mat<T>& m) {
        const Mat<T>& src = get_tensor<T>(a, prefix + name);
        require(src.rows() == m.rows() && src.cols() == m.cols(), ErrorCode::format,
                "checkpoint: tensor " + name + " has unexpected shape");
        m = src;
    });
}

}  // namespace detail

inline constexpr const char* kCheckpointKind = "checkpoint";

template <class T>
void save_checkpoint(const std::string& path, const ModelConfig& mc, const Parameters<T>& params,
                     const AdamW<T>& opt, long step, uint64_t run_seed,
                     nlohmann::json extra = nlohmann::json::object()) {
    Archive a;
    a.kind = kCheckpointKind;
    extra["model"] = model_config_to_json(mc);
    extra["adamw"] = adamw_config_to_json(opt.config());
    extra["dtype"] = dtype_name<T>();
    extra["step"] = step;
    extra["opt_step"] = opt.step_count();
    extra["run_seed"] = run_seed;
    a.metadata = std::move(extra);
    detail::put_params(a, "param.", params);
    detail::put_params(a, "m.", opt.moment1());
    detail::put_params(a, "v.", opt.moment2());
    a.save(path);
}

template <class T>
struct LoadedCheckpoint {
    ModelConfig config;
    Parameters<T> params;
    AdamW<T> opt;
    long step = 0;
    uint64_t run_seed = 0;
    nlohmann::json metadata;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    Archive a = Archive::load(path, kCheckpointKind);
    require(a.metadata.contains("dtype") && a.metadata["dtype"] == dtype_name<T>(),
            ErrorCode::format, "checkpoint: dtype mismatch (expected " +
                                   std::string(dtype_name<T>()) + ")");
    LoadedCheckpoint<T> out;
    out.config = model_config_from_json(a.metadata.at("model"));
    out.params = Parameters<T>::shaped(out.config);
    detail::get_params(a, "param.", out.params);
    out.opt = AdamW<T>(out.config, adamw_config_from_json(a.metadata.at("adamw")));
    detail::get_params(a, "m.", out.opt.moment1());
    detail::get_params(a, "v.", out.opt.moment2());
    out.step = a.metadata.at("step").get<long>();
    out.opt.set_step_count(a.metadata.at("opt_step").get<long>());
    out.run_seed = a.metadata.at("run_seed").get<uint64_t>();
    out.metadata = a.metadata;
    return out;
}

}  // namespace unitlm
