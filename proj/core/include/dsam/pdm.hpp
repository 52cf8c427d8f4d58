#pragma once

// Prompt-Deeper Module: distils depth knowledge into the RGB branch and turns
// the distilled features into a depth-aware dense prompt.

#include <string>

#include "dsam/encoders.hpp"

namespace dsam::pdm {

/// Bias-correction block: projection P, residual dilated channel projection
/// CP (up to 2C then back to C), and a channel-reducing Down projection.
struct BcmParams {
    nn::Conv2d proj;
    nn::Conv2d cp_up;
    nn::Conv2d cp_down;
    nn::Conv2d down;

    static BcmParams create(nn::ParameterStore& store, const std::string& prefix, int in_channels, int out_channels,
                            nn::Rng& rng, int dilation = 2);
};

/// Resamples x to grid x grid, then Down(P(x) + CP(P(x))).
FeatureMap bcm(const BcmParams& params, const FeatureMap& x, int grid);

/// Channel-wise distillation: per channel, softmax over spatial positions of
/// teacher/T and student/T; returns T^2 * mean_c KL(p_c || q_c). The teacher
/// never receives gradient.
ag::Var cwd_loss(const FeatureMap& em_t, const FeatureMap& em_s, double temperature);

/// Haar detail subbands (LH, HL, HH) of cat(em_i, em_s), upsampled back to the
/// input grid: the input of the high-frequency projection.
ag::Var highfreq_bands(const FeatureMap& em_i, const FeatureMap& em_s);

struct HighFreqParams {
    nn::Conv2d proj;  ///< 1x1, 3 * (C_i + C_s) -> E

    static HighFreqParams create(nn::ParameterStore& store, const std::string& prefix, int in_channels, int out_channels,
                                 nn::Rng& rng);
};

FeatureMap dwt_highfreq(const HighFreqParams& params, const FeatureMap& em_i, const FeatureMap& em_s);

struct PfmParams {
    nn::Conv2d dcs1;  ///< 3x3 E -> E
    nn::Conv2d dcs2;  ///< 3x3 E -> E
    nn::Conv2d dc;    ///< 3x3 dilated, 2E -> E

    static PfmParams create(nn::ParameterStore& store, const std::string& prefix, int embed_dim, nn::Rng& rng,
                            int dilation = 2);
};

/// Box tokens [2, E] averaged and broadcast over the grid, passed through the
/// conv stack, concatenated with hf and fused by the dilated conv.
FeatureMap pfm(const PfmParams& params, const ag::Var& box_tokens, const FeatureMap& hf);

struct PdmConfig {
    int embed_dim = 32;
    int student_dim = 32;
    int grid = 16;
    double temperature = 4.0;
    int dilation = 2;
};

class PromptDeeper {
public:
    PromptDeeper(nn::ParameterStore& store, const PdmConfig& cfg, nn::Rng& rng, const std::string& prefix = "pdm");

    struct Output {
        FeatureMap em_s;
        FeatureMap prompt_depth;
        ag::Var loss_kd;
    };

    Output forward(const FeatureMap& em_t, const FeatureMap& em_i, const ag::Var& box_tokens) const;
    const PdmConfig& config() const noexcept { return cfg_; }

private:
    PdmConfig cfg_;
    BcmParams bcm_;
    HighFreqParams hf_;
    PfmParams pfm_;
};

}  // namespace dsam::pdm
