#include "dsam/pdm.hpp"

#include <cmath>

#include "dsam/error.hpp"

namespace dsam::pdm {

BcmParams BcmParams::create(nn::ParameterStore& store, const std::string& prefix, int in_channels, int out_channels,
                            nn::Rng& rng, int dilation) {
    BcmParams p;
    p.proj = nn::Conv2d::create(store, prefix + ".proj", in_channels, in_channels, 1, {}, rng, false, 1.0);
    p.cp_up = nn::Conv2d::create(store, prefix + ".cp_up", in_channels, 2 * in_channels, 3,
                                 nn::Conv2d::same(3, dilation), rng, false);
    p.cp_down = nn::Conv2d::create(store, prefix + ".cp_down", 2 * in_channels, in_channels, 3,
                                   nn::Conv2d::same(3, dilation), rng, false, 0.5);
    p.down = nn::Conv2d::create(store, prefix + ".down", in_channels, out_channels, 1, {}, rng, false, 1.0);
    return p;
}

FeatureMap bcm(const BcmParams& params, const FeatureMap& x, int grid) {
    if (x.channels() != params.proj.in_channels())
        fail(Errc::BadShape, "bcm expects " + std::to_string(params.proj.in_channels()) + " channels, got " +
                                 x.data.value().shape_str());
    const ag::Var resampled = ag::resize_bilinear(x.data, grid, grid);
    const ag::Var p = params.proj(resampled);
    const ag::Var cp = params.cp_down(ag::gelu(params.cp_up(p)));
    const int stride = x.stride * x.height() / grid;
    return {params.down(ag::add(p, cp)), stride};
}

ag::Var cwd_loss(const FeatureMap& em_t, const FeatureMap& em_s, double temperature) {
    if (!(temperature > 0.0)) fail(Errc::BadConfig, "distillation temperature must be positive");
    const Tensor& t = em_t.data.value();
    const Tensor& s = em_s.data.value();
    if (!t.same_shape(s) || t.rank() != 3)
        fail(Errc::BadShape, "cwd_loss: teacher " + t.shape_str() + " vs student " + s.shape_str());
    const int channels = t.dim(0);
    const std::size_t n = static_cast<std::size_t>(t.dim(1)) * t.dim(2);

    Tensor p = Tensor::zeros_like(t), q = Tensor::zeros_like(s);
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        const std::size_t off = c * n;
        auto log_softmax = [&](const Tensor& src, Tensor& prob, std::vector<double>& logp) {
            double mx = src[off];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, src[off + i]);
            double z = 0.0;
            for (std::size_t i = 0; i < n; ++i) z += std::exp((src[off + i] - mx) / temperature);
            const double lse = std::log(z);
            for (std::size_t i = 0; i < n; ++i) {
                logp[i] = (src[off + i] - mx) / temperature - lse;
                prob[off + i] = std::exp(logp[i]);
            }
        };
        std::vector<double> logp(n), logq(n);
        log_softmax(t, p, logp);
        log_softmax(s, q, logq);
        double kl = 0.0;
        for (std::size_t i = 0; i < n; ++i) kl += p[off + i] * (logp[i] - logq[i]);
        total += kl;
    }
    const double loss = temperature * temperature * total / channels;
    // Teacher enters as a constant: gradient reaches the student only.
    return ag::make_op(Tensor::scalar(loss), {em_s.data}, [p, q, temperature, channels](ag::Node& node) {
        ag::Node& in = *node.inputs[0];
        Tensor g = Tensor::zeros_like(in.value);
        const double k = node.grad[0] * temperature / channels;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = k * (q[i] - p[i]);
        ag::accumulate(in, g);
    });
}

ag::Var highfreq_bands(const FeatureMap& em_i, const FeatureMap& em_s) {
    const int grid = em_s.height();
    if (em_s.width() != grid) fail(Errc::BadShape, "dwt_highfreq expects a square student embedding");
    if (grid % 2 != 0) fail(Errc::BadShape, "dwt_highfreq needs an even grid, got " + std::to_string(grid));
    const ag::Var joined = ag::concat({ag::resize_bilinear(em_i.data, grid, grid), em_s.data});
    return ag::resize_bilinear(ag::haar_details(joined), grid, grid);
}

HighFreqParams HighFreqParams::create(nn::ParameterStore& store, const std::string& prefix, int in_channels,
                                      int out_channels, nn::Rng& rng) {
    return {nn::Conv2d::create(store, prefix + ".proj", in_channels, out_channels, 1, {}, rng, false, 1.0)};
}

FeatureMap dwt_highfreq(const HighFreqParams& params, const FeatureMap& em_i, const FeatureMap& em_s) {
    const ag::Var bands = highfreq_bands(em_i, em_s);
    if (bands.shape()[0] != params.proj.in_channels())
        fail(Errc::BadShape, "dwt_highfreq: " + std::to_string(bands.shape()[0]) + " band channels, projection expects " +
                                 std::to_string(params.proj.in_channels()));
    return {params.proj(bands), em_s.stride};
}

PfmParams PfmParams::create(nn::ParameterStore& store, const std::string& prefix, int e, nn::Rng& rng, int dilation) {
    PfmParams p;
    p.dcs1 = nn::Conv2d::create(store, prefix + ".dcs1", e, e, 3, nn::Conv2d::same(3), rng, false);
    p.dcs2 = nn::Conv2d::create(store, prefix + ".dcs2", e, e, 3, nn::Conv2d::same(3), rng, false, 1.0);
    p.dc = nn::Conv2d::create(store, prefix + ".dc", 2 * e, e, 3, nn::Conv2d::same(3, dilation), rng, false, 0.5);
    return p;
}

FeatureMap pfm(const PfmParams& params, const ag::Var& box_tokens, const FeatureMap& hf) {
    const int e = params.dcs1.in_channels();
    if (box_tokens.value().rank() != 2 || box_tokens.shape()[1] != e)
        fail(Errc::BadShape, "pfm: box tokens must be [n," + std::to_string(e) + "], got " +
                                 box_tokens.value().shape_str());
    if (hf.data.value().rank() != 3 || hf.channels() != e)
        fail(Errc::BadShape, "pfm: hf must be [" + std::to_string(e) + ",S,S], got " + hf.data.value().shape_str());
    const ag::Var broadcast = ag::broadcast_spatial(ag::mean_rows(box_tokens), hf.height(), hf.width());
    const ag::Var dcs = params.dcs2(ag::gelu(params.dcs1(broadcast)));
    return {params.dc(ag::concat({dcs, hf.data})), hf.stride};
}

PromptDeeper::PromptDeeper(nn::ParameterStore& store, const PdmConfig& cfg, nn::Rng& rng, const std::string& prefix)
    : cfg_(cfg),
      bcm_(BcmParams::create(store, prefix + ".bcm", cfg.student_dim, cfg.embed_dim, rng, cfg.dilation)),
      hf_(HighFreqParams::create(store, prefix + ".hf", 3 * (cfg.student_dim + cfg.embed_dim), cfg.embed_dim, rng)),
      pfm_(PfmParams::create(store, prefix + ".pfm", cfg.embed_dim, rng, cfg.dilation)) {}

PromptDeeper::Output PromptDeeper::forward(const FeatureMap& em_t, const FeatureMap& em_i,
                                           const ag::Var& box_tokens) const {
    Output out;
    out.em_s = bcm(bcm_, em_i, em_t.height());
    out.loss_kd = cwd_loss(em_t, out.em_s, cfg_.temperature);
    const FeatureMap hf = dwt_highfreq(hf_, em_i, out.em_s);
    out.prompt_depth = pfm(pfm_, box_tokens, hf);
    return out;
}

}  // namespace dsam::pdm
