#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

namespace dsam::harness {

/// Everything that, together with the dataset, determines a run. Empty
/// dataset paths select the deterministic synthetic corpus.
struct RunConfig {
    int image_size = 64;
    int embed_dim = 32;        ///< E = E_t
    int student_dim0 = 32;     ///< stride-4 student level (Em_i)
    int student_dim1 = 64;     ///< stride-8 student level
    int k = 8;                 ///< finer-module channel segments
    double alpha = 0.9;
    double beta = 0.9;
    double temperature = 4.0;
    int dilation = 2;
    int gf_radius = 2;
    double gf_eps = 1e-2;
    int n_a = 16;
    double lr = 1e-3;
    std::string lr_schedule = "cosine";  ///< "constant" or "cosine" (decay to 0 over the run)
    int epochs = 200;          ///< one optimizer step per batch
    int batch_size = 8;
    std::uint64_t seed = 0;
    std::string train_data;
    std::string test_data;
    std::string ablation_id;

    bool use_pdm = true;
    bool use_fm = true;
    std::string fm_inputs = "D+D";   ///< stream1+stream2, I = student embedding, D = teacher embedding
    std::string sam_loss_on = "final";  ///< "final" or "sam": prediction the segmentation loss sees
    std::string pred_norm = "minmax";   ///< "minmax" or "none"
    int synth_train_n = 8;
    int synth_test_n = 8;
    std::uint64_t data_seed = 0;
    double box_jitter = 0.0;

    /// Throws BadConfig on any violated invariant.
    void validate() const;
};

/// Canonical JSON (keys in declaration order); unknown keys are rejected on load.
nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

/// FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& cfg);

/// Variant name of the module switches: M1 (decoder only) .. M4 (PDM + FM).
std::string variant_name(const RunConfig& cfg);
void apply_variant(RunConfig& cfg, const std::string& variant);

}  // namespace dsam::harness
