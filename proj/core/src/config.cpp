#include "dsam/config.hpp"

#include <fstream>
#include <set>

#include "dsam/error.hpp"
#include "dsam/hash.hpp"

namespace dsam::harness {

void RunConfig::validate() const {
    auto bad = [](const std::string& what) { fail(Errc::BadConfig, what); };
    if (image_size < 16 || image_size % 8 != 0) bad("image_size must be a multiple of 8 and at least 16");
    if ((image_size / 4) % 2 != 0) bad("image_size / 4 must be even for the wavelet split");
    if (embed_dim <= 0 || embed_dim % 2 != 0) bad("embed_dim must be positive and even");
    if (student_dim0 <= 0 || student_dim1 <= 0) bad("student dims must be positive");
    if (k != 2 && k != 4 && k != 8 && k != 16) bad("k must be one of 2, 4, 8, 16");
    if (embed_dim % k != 0) bad("embed_dim must be divisible by k");
    if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha must lie in [0,1]");
    if (!(beta >= 0.0 && beta <= 1.0)) bad("beta must lie in [0,1]");
    if (!(temperature > 0.0)) bad("temperature must be positive");
    if (dilation < 1) bad("dilation must be >= 1");
    if (gf_radius < 1 || 2 * gf_radius + 1 > image_size / 4) bad("gf_radius window exceeds the embedding grid");
    if (!(gf_eps > 0.0)) bad("gf_eps must be positive");
    int side = 1;
    while (side * side < n_a) ++side;
    if (n_a <= 0 || side * side != n_a || n_a > (image_size / 4) * (image_size / 4))
        bad("n_a must be a perfect square no larger than the token count");
    if (!(lr > 0.0)) bad("lr must be positive");
    if (lr_schedule != "constant" && lr_schedule != "cosine") bad("lr_schedule must be constant or cosine");
    if (epochs < 0) bad("epochs must be >= 0");
    if (batch_size <= 0) bad("batch_size must be positive");
    if (fm_inputs != "I+I" && fm_inputs != "I+D" && fm_inputs != "D+D") bad("fm_inputs must be I+I, I+D or D+D");
    if (use_fm && !use_pdm && fm_inputs != "D+D") bad("image-embedding FM streams need the PDM student");
    if (sam_loss_on != "final" && sam_loss_on != "sam") bad("sam_loss_on must be final or sam");
    if (pred_norm != "minmax" && pred_norm != "none") bad("pred_norm must be minmax or none");
    if (synth_train_n <= 0 || synth_test_n <= 0) bad("synthetic sample counts must be positive");
    if (!(box_jitter >= 0.0 && box_jitter < 0.5)) bad("box_jitter must lie in [0, 0.5)");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
    return {{"image_size", c.image_size},
            {"embed_dim", c.embed_dim},
            {"student_dim0", c.student_dim0},
            {"student_dim1", c.student_dim1},
            {"k", c.k},
            {"alpha", c.alpha},
            {"beta", c.beta},
            {"temperature", c.temperature},
            {"dilation", c.dilation},
            {"gf_radius", c.gf_radius},
            {"gf_eps", c.gf_eps},
            {"n_a", c.n_a},
            {"lr", c.lr},
            {"lr_schedule", c.lr_schedule},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"train_data", c.train_data},
            {"test_data", c.test_data},
            {"ablation_id", c.ablation_id},
            {"use_pdm", c.use_pdm},
            {"use_fm", c.use_fm},
            {"fm_inputs", c.fm_inputs},
            {"sam_loss_on", c.sam_loss_on},
            {"pred_norm", c.pred_norm},
            {"synth_train_n", c.synth_train_n},
            {"synth_test_n", c.synth_test_n},
            {"data_seed", c.data_seed},
            {"box_jitter", c.box_jitter}};
}

RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(Errc::BadConfig, "config must be a JSON object");
    RunConfig c;
    const auto known = to_json(c);
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) fail(Errc::BadConfig, "unknown config key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("image_size", c.image_size);
        get("embed_dim", c.embed_dim);
        get("student_dim0", c.student_dim0);
        get("student_dim1", c.student_dim1);
        get("k", c.k);
        get("alpha", c.alpha);
        get("beta", c.beta);
        get("temperature", c.temperature);
        get("dilation", c.dilation);
        get("gf_radius", c.gf_radius);
        get("gf_eps", c.gf_eps);
        get("n_a", c.n_a);
        get("lr", c.lr);
        get("lr_schedule", c.lr_schedule);
        get("epochs", c.epochs);
        get("batch_size", c.batch_size);
        get("seed", c.seed);
        get("train_data", c.train_data);
        get("test_data", c.test_data);
        get("ablation_id", c.ablation_id);
        get("use_pdm", c.use_pdm);
        get("use_fm", c.use_fm);
        get("fm_inputs", c.fm_inputs);
        get("sam_loss_on", c.sam_loss_on);
        get("pred_norm", c.pred_norm);
        get("synth_train_n", c.synth_train_n);
        get("synth_test_n", c.synth_test_n);
        get("data_seed", c.data_seed);
        get("box_jitter", c.box_jitter);
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::BadConfig, std::string("malformed config value: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::Io, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::BadConfig, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) fail(Errc::Io, "cannot write config " + path.string());
    out << to_json(cfg).dump(2) << '\n';
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(to_json(cfg).dump()); }

std::string variant_name(const RunConfig& cfg) {
    if (cfg.use_pdm) return cfg.use_fm ? "M4" : "M2";
    return cfg.use_fm ? "M3" : "M1";
}

void apply_variant(RunConfig& cfg, const std::string& variant) {
    if (variant == "M1") {
        cfg.use_pdm = false;
        cfg.use_fm = false;
    } else if (variant == "M2") {
        cfg.use_pdm = true;
        cfg.use_fm = false;
    } else if (variant == "M3") {
        cfg.use_pdm = false;
        cfg.use_fm = true;
    } else if (variant == "M4") {
        cfg.use_pdm = true;
        cfg.use_fm = true;
    } else {
        fail(Errc::BadConfig, "unknown variant '" + variant + "'");
    }
}

}  // namespace dsam::harness
