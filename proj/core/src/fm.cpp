#include "dsam/fm.hpp"

#include <cmath>

#include "dsam/error.hpp"

namespace dsam::fm {

NestedFeature reverse_and_nest(const FeatureMap& embedding, const PredictionMap& pred_sam, int k) {
    const int c = embedding.channels();
    if (k < 1 || c % k != 0)
        fail(Errc::BadSegments, std::to_string(c) + " channels cannot be split into " + std::to_string(k) + " segments");
    if (pred_sam.logits.value().rank() != 3 || pred_sam.logits.shape()[0] != 1)
        fail(Errc::BadShape, "prediction must be [1,H,W], got " + pred_sam.logits.value().shape_str());
    const ag::Var mask = ag::resize_bilinear(ag::sigmoid(pred_sam.logits), embedding.height(), embedding.width());
    const ag::Var reversed = ag::one_minus(mask);
    const int seg = c / k;
    std::vector<ag::Var> parts;
    parts.reserve(static_cast<std::size_t>(2 * k));
    for (int i = 0; i < k; ++i) {
        parts.push_back(ag::slice(embedding.data, i * seg, (i + 1) * seg));
        parts.push_back(reversed);
    }
    return {ag::concat(parts), k};
}

ag::Var guided_filter(const ag::Var& x, int radius, double eps) {
    if (x.value().rank() != 3) fail(Errc::BadShape, "guided_filter expects [C,S,S]");
    if (radius < 1 || 2 * radius + 1 > std::min(x.shape()[1], x.shape()[2]))
        fail(Errc::BadRadius, "radius " + std::to_string(radius) + " too large for " + x.value().shape_str());
    const ag::Var mean = ag::box_mean(x, radius);
    const ag::Var mean_sq = ag::box_mean(ag::square(x), radius);
    const ag::Var var = ag::sub(mean_sq, ag::square(mean));
    const ag::Var a = ag::div(var, ag::add_scalar(var, eps));
    const ag::Var b = ag::mul(mean, ag::one_minus(a));
    return ag::add(ag::mul(ag::box_mean(a, radius), x), ag::box_mean(b, radius));
}

AgentAttentionParams AgentAttentionParams::create(nn::ParameterStore& store, const std::string& prefix, int channels,
                                                  nn::Rng& rng) {
    return {nn::Linear::create(store, prefix + ".q", channels, channels, rng, false),
            nn::Linear::create(store, prefix + ".k", channels, channels, rng, false),
            nn::Linear::create(store, prefix + ".v", channels, channels, rng, false, 0.5)};
}

ag::Var agent_attention(const AgentAttentionParams& params, const ag::Var& x, int n_agents) {
    if (x.value().rank() != 3) fail(Errc::BadShape, "agent_attention expects [C,S,S]");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_agents))));
    if (n_agents < 1 || side * side != n_agents || side > h || side > w)
        fail(Errc::BadShape, "agent count " + std::to_string(n_agents) + " must be a square <= " +
                                 std::to_string(h * w));
    const double s = 1.0 / std::sqrt(static_cast<double>(c));
    const ag::Var tokens = ag::to_tokens(x);
    const ag::Var q = params.q(tokens), k = params.k(tokens), v = params.v(tokens);
    const ag::Var agents = ag::to_tokens(ag::adaptive_avg_pool(ag::from_tokens(q, h, w), side, side));
    const ag::Var agent_values = ag::matmul(ag::softmax_rows(ag::scale(ag::matmul(agents, k, false, true), s)), v);
    const ag::Var out = ag::matmul(ag::softmax_rows(ag::scale(ag::matmul(q, agents, false, true), s)), agent_values);
    return ag::from_tokens(ag::add(out, tokens), h, w);
}

FmParams FmParams::create(nn::ParameterStore& store, const FmConfig& cfg, nn::Rng& rng, const std::string& prefix) {
    const int e = cfg.embed_dim, nested = cfg.embed_dim + cfg.segments;
    FmParams p;
    p.bc1 = pdm::BcmParams::create(store, prefix + ".bc1", nested, e, rng);
    p.bc2 = pdm::BcmParams::create(store, prefix + ".bc2", nested, e, rng);
    p.agent2 = AgentAttentionParams::create(store, prefix + ".agent2", e, rng);
    p.jm_bc = pdm::BcmParams::create(store, prefix + ".jm.bc", e, e, rng);
    p.jm_agent = AgentAttentionParams::create(store, prefix + ".jm.agent", e, rng);
    p.head = nn::Conv2d::create(store, prefix + ".head", e, 1, 1, {}, rng, false, 1.0);
    return p;
}

PredictionMap fm_forward(const FmParams& params, const FmConfig& cfg, const FeatureMap& src1, const FeatureMap& src2,
                         const PredictionMap& pred_sam) {
    const int grid = src1.height();
    if (src2.height() != grid || src2.width() != src1.width())
        fail(Errc::BadShape, "finer module streams need equal spatial sizes");
    const NestedFeature r1 = reverse_and_nest(src1, pred_sam, cfg.segments);
    const NestedFeature r2 = (src1.data.node() == src2.data.node()) ? r1 : reverse_and_nest(src2, pred_sam, cfg.segments);

    const FeatureMap filtered{guided_filter(r1.data, cfg.gf_radius, cfg.gf_eps), src1.stride};
    const FeatureMap stream1 = pdm::bcm(params.bc1, filtered, grid);
    const FeatureMap corrected2 = pdm::bcm(params.bc2, {r2.data, src2.stride}, grid);
    const ag::Var stream2 = agent_attention(params.agent2, corrected2.data, cfg.n_agents);

    const FeatureMap joint = pdm::bcm(params.jm_bc, {ag::add(stream1.data, stream2), src1.stride}, grid);
    const ag::Var mined = agent_attention(params.jm_agent, joint.data, cfg.n_agents);
    return {ag::resize_bilinear(params.head(mined), cfg.image_size, cfg.image_size)};
}

}  // namespace dsam::fm
