#pragma once

// Full forward path: frozen encoders -> PDM dense prompt -> mask decoder ->
// finer module -> fused prediction and loss terms.

#include <memory>
#include <optional>

#include "dsam/config.hpp"
#include "dsam/fm.hpp"
#include "dsam/fusion_loss.hpp"
#include "dsam/pdm.hpp"

namespace dsam::harness {

/// Frozen-encoder outputs for one sample; constant across training.
struct FrozenInputs {
    FeatureMap image_embedding;  ///< frozen image encoder on RGB, [E, S, S]
    FeatureMap teacher;          ///< frozen teacher on depth (Em_t), [E, S, S]
    ag::Var box_tokens;          ///< [2, E]
};

struct ForwardResult {
    PredictionMap pred_sam;
    std::optional<PredictionMap> pred_fm;
    PredictionMap pred_final;
    std::optional<ag::Var> loss_kd;
};

struct LossTerms {
    ag::Var loss;
    ag::Var loss_sam;
    std::optional<ag::Var> loss_kd;
};

class DsamModel {
public:
    explicit DsamModel(const RunConfig& cfg);
    DsamModel(const DsamModel&) = delete;
    DsamModel& operator=(const DsamModel&) = delete;

    const RunConfig& config() const noexcept { return cfg_; }
    nn::ParameterStore& store() noexcept { return store_; }
    const nn::ParameterStore& store() const noexcept { return store_; }

    /// Sample must already be preprocessed to config().image_size.
    FrozenInputs precompute(const data::Sample& sample) const;
    /// Box tokens for an arbitrary (e.g. jittered) box.
    ag::Var box_tokens(const data::Box& box) const;

    ForwardResult forward(const data::Sample& sample, const FrozenInputs& frozen) const;
    LossTerms losses(const ForwardResult& out, const Tensor& gt) const;

private:
    RunConfig cfg_;
    encoders::EncoderConfig enc_cfg_;
    fm::FmConfig fm_cfg_;
    nn::ParameterStore store_;
    std::unique_ptr<encoders::FrozenEncoder> frozen_encoder_;
    std::unique_ptr<encoders::PromptEncoder> prompt_encoder_;
    std::unique_ptr<encoders::StudentEncoder> student_;
    std::unique_ptr<pdm::PromptDeeper> pdm_;
    std::unique_ptr<encoders::MaskDecoder> decoder_;
    std::optional<fm::FmParams> fm_;
};

/// Independent stream per module so that switching a module off leaves the
/// initial values of the others unchanged.
nn::Rng module_rng(std::uint64_t seed, const std::string& module);

}  // namespace dsam::harness
