#pragma once

// Finer Module: re-mines regions the decoder missed. The inverted decoder mask
// is interleaved into channel segments of an embedding, then processed by a
// guided-filter stream and an agent-attention stream before joint mining.

#include <string>

#include "dsam/pdm.hpp"

namespace dsam::fm {

struct NestedFeature {
    ag::Var data;  ///< [C + k, S, S]: seg_1, m', seg_2, m', ..., seg_k, m'
    int segments = 0;
};

/// m' = 1 - bilinear_downsample(sigmoid(pred_sam)), interleaved after each of
/// the k channel segments of the embedding.
NestedFeature reverse_and_nest(const FeatureMap& embedding, const PredictionMap& pred_sam, int segments);

/// Self-guided filter per channel: window mean/variance over the clipped
/// (2r+1)^2 box, a = var / (var + eps), b = mean (1 - a),
/// out = mean_window(a) * x + mean_window(b).
ag::Var guided_filter(const ag::Var& x, int radius, double eps);

struct AgentAttentionParams {
    nn::Linear q, k, v;

    static AgentAttentionParams create(nn::ParameterStore& store, const std::string& prefix, int channels,
                                       nn::Rng& rng);
};

/// Two-stage softmax attention through n_agents pooled query tokens, plus a
/// residual. n_agents must be a perfect square no larger than S*S.
ag::Var agent_attention(const AgentAttentionParams& params, const ag::Var& x, int n_agents);

enum class StreamSource { Image, Depth };

struct FmConfig {
    int embed_dim = 32;
    int segments = 8;
    int gf_radius = 2;
    double gf_eps = 1e-2;
    int n_agents = 16;
    int image_size = 64;
    StreamSource stream1 = StreamSource::Depth;
    StreamSource stream2 = StreamSource::Depth;
};

struct FmParams {
    pdm::BcmParams bc1;
    pdm::BcmParams bc2;
    AgentAttentionParams agent2;
    pdm::BcmParams jm_bc;
    AgentAttentionParams jm_agent;
    nn::Conv2d head;

    static FmParams create(nn::ParameterStore& store, const FmConfig& cfg, nn::Rng& rng, const std::string& prefix = "fm");
};

/// Pred_FM = head(agent(BC(BC1(GF(R1)) + agent(BC2(R2))))) upsampled to the image.
/// stream1_src / stream2_src are the embeddings nested for each stream; when
/// they are the same map the nested feature is computed once.
PredictionMap fm_forward(const FmParams& params, const FmConfig& cfg, const FeatureMap& stream1_src,
                         const FeatureMap& stream2_src, const PredictionMap& pred_sam);

}  // namespace dsam::fm
