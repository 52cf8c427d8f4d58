#include "dsam/encoders.hpp"

#include <cmath>
#include <numbers>

#include "dsam/error.hpp"

namespace dsam::encoders {

namespace {

ag::Var attend(const ag::Var& q, const ag::Var& k, const ag::Var& v) {
    const double s = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
    return ag::matmul(ag::softmax_rows(ag::scale(ag::matmul(q, k, false, true), s)), v);
}

void check_square_input(const Tensor& x, int channels, int stride, const char* what) {
    if (x.rank() != 3 || x.dim(0) != channels)
        fail(Errc::BadShape, std::string(what) + ": expected [" + std::to_string(channels) + ",H,W], got " +
                                 x.shape_str());
    if (x.dim(1) != x.dim(2)) fail(Errc::BadShape, std::string(what) + ": input must be square, got " + x.shape_str());
    if (x.dim(1) % stride != 0)
        fail(Errc::BadShape, std::string(what) + ": size " + std::to_string(x.dim(1)) + " not divisible by stride " +
                                 std::to_string(stride));
}

}  // namespace

// ---------------------------------------------------------------------------
// FrozenEncoder
// ---------------------------------------------------------------------------

FrozenEncoder::FrozenEncoder(nn::ParameterStore& store, const EncoderConfig& cfg, const std::string& prefix)
    : cfg_(cfg) {
    nn::Rng rng(cfg.frozen_seed);
    const int e = cfg.embed_dim, p = cfg.patch_stride;
    patch_ = nn::Conv2d::create(store, prefix + ".patch", 3, e, p, {p, 0, 1}, rng, true);
    local_ = nn::Conv2d::create(store, prefix + ".local", e, e, 3, nn::Conv2d::same(3), rng, true);
    q_ = nn::Linear::create(store, prefix + ".attn.q", e, e, rng, true);
    k_ = nn::Linear::create(store, prefix + ".attn.k", e, e, rng, true);
    v_ = nn::Linear::create(store, prefix + ".attn.v", e, e, rng, true);
    out_ = nn::Linear::create(store, prefix + ".attn.out", e, e, rng, true, 0.5);
    neck_ = nn::Conv2d::create(store, prefix + ".neck", e, e, 1, {}, rng, true, 1.0);
}

FeatureMap FrozenEncoder::embed(const Tensor& image) const {
    check_square_input(image, 3, cfg_.patch_stride, "frozen encoder");
    const ag::Var x0 = ag::gelu(patch_(ag::Var(image)));
    const ag::Var x1 = ag::add(x0, ag::gelu(local_(x0)));
    const int s = x1.shape()[1];
    const ag::Var tok = ag::to_tokens(x1);
    const ag::Var att = out_(attend(q_(tok), k_(tok), v_(tok)));
    const ag::Var x2 = ag::from_tokens(ag::add(tok, att), s, s);
    return {neck_(x2), cfg_.patch_stride};
}

FeatureMap FrozenEncoder::encode_depth_teacher(const Tensor& depth) const {
    check_square_input(depth, 1, cfg_.patch_stride, "depth teacher");
    const int h = depth.dim(1), w = depth.dim(2);
    Tensor rgb({3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) rgb[c * plane + i] = (depth[i] - 0.5) / 0.25;
    return embed(rgb);
}

// ---------------------------------------------------------------------------
// StudentEncoder
// ---------------------------------------------------------------------------

StudentEncoder::StudentEncoder(nn::ParameterStore& store, const EncoderConfig& cfg, nn::Rng& rng,
                               const std::string& prefix)
    : cfg_(cfg) {
    const int c0 = cfg.student_dim0, c1 = cfg.student_dim1, p = cfg.patch_stride;
    if (c1 < c0) fail(Errc::BadConfig, "student pyramid channels must not decrease with stride");
    patch0_ = nn::Conv2d::create(store, prefix + ".patch0", 3, c0, p, {p, 0, 1}, rng, false);
    block0_ = nn::Conv2d::create(store, prefix + ".block0", c0, c0, 3, nn::Conv2d::same(3), rng, false, 1.0);
    patch1_ = nn::Conv2d::create(store, prefix + ".patch1", c0, c1, 2, {2, 0, 1}, rng, false);
    block1_ = nn::Conv2d::create(store, prefix + ".block1", c1, c1, 3, nn::Conv2d::same(3), rng, false, 1.0);
    lateral_ = nn::Conv2d::create(store, prefix + ".lateral", c1, c0, 1, {}, rng, false, 1.0);
}

FeaturePyramid StudentEncoder::encode_image_student(const Tensor& image) const {
    check_square_input(image, 3, 2 * cfg_.patch_stride, "student encoder");
    const ag::Var l0 = ag::gelu(patch0_(ag::Var(image)));
    const ag::Var f0 = ag::add(l0, ag::gelu(block0_(l0)));
    const ag::Var l1 = ag::gelu(patch1_(f0));
    const ag::Var f1 = ag::add(l1, ag::gelu(block1_(l1)));
    const ag::Var top_down = ag::resize_bilinear(lateral_(f1), f0.shape()[1], f0.shape()[2]);
    FeaturePyramid pyr;
    pyr.levels.push_back({ag::add(f0, top_down), cfg_.patch_stride});
    pyr.levels.push_back({f1, 2 * cfg_.patch_stride});
    pyr.designated = 0;
    return pyr;
}

// ---------------------------------------------------------------------------
// PromptEncoder
// ---------------------------------------------------------------------------

PromptEncoder::PromptEncoder(nn::ParameterStore& store, const EncoderConfig& cfg, const std::string& prefix)
    : cfg_(cfg) {
    if (cfg.embed_dim % 2 != 0) fail(Errc::BadConfig, "embed_dim must be even for the positional encoding");
    nn::Rng rng(cfg.frozen_seed ^ 0x9E3779B97F4A7C15ULL);
    gaussian_ = store.create(prefix + ".pe_gaussian", nn::kaiming_normal({2, cfg.embed_dim / 2}, 1, rng, 1.0), true);
    corners_ = store.create(prefix + ".corner_embed", nn::kaiming_normal({2, cfg.embed_dim}, 1, rng, 1.0), true);
}

Tensor PromptEncoder::positional_encoding(double u, double v) const {
    const int half = cfg_.embed_dim / 2;
    const Tensor& g = gaussian_.value();
    const double cu = 2.0 * u - 1.0, cv = 2.0 * v - 1.0;
    Tensor out({cfg_.embed_dim});
    for (int j = 0; j < half; ++j) {
        const double proj = 2.0 * std::numbers::pi * (cu * g.at(0, j) + cv * g.at(1, j));
        out[static_cast<std::size_t>(j)] = std::sin(proj);
        out[static_cast<std::size_t>(j + half)] = std::cos(proj);
    }
    return out;
}

Tensor PromptEncoder::corner_embedding(int corner) const {
    if (corner < 0 || corner > 1) fail(Errc::BadShape, "corner index must be 0 or 1");
    Tensor out({cfg_.embed_dim});
    for (int j = 0; j < cfg_.embed_dim; ++j) out[static_cast<std::size_t>(j)] = corners_.value().at(corner, j);
    return out;
}

Tensor PromptEncoder::dense_positional_encoding(int grid) const {
    Tensor out({cfg_.embed_dim, grid, grid});
    for (int y = 0; y < grid; ++y) {
        for (int x = 0; x < grid; ++x) {
            const Tensor pe = positional_encoding((x + 0.5) / grid, (y + 0.5) / grid);
            for (int c = 0; c < cfg_.embed_dim; ++c) out.at(c, y, x) = pe[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

PromptBundle PromptEncoder::encode_box_prompt(const data::Box& box, int image_size) const {
    if (!box.valid_for(image_size, image_size))
        fail(Errc::BadBox, "box (" + std::to_string(box.x_min) + "," + std::to_string(box.y_min) + "," +
                               std::to_string(box.x_max) + "," + std::to_string(box.y_max) + ") invalid for size " +
                               std::to_string(image_size));
    const double inv = 1.0 / image_size;
    const Tensor pts[2] = {positional_encoding(box.x_min * inv, box.y_min * inv),
                           positional_encoding(box.x_max * inv, box.y_max * inv)};
    Tensor tokens({2, cfg_.embed_dim});
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < cfg_.embed_dim; ++c)
            tokens.at(r, c) = pts[r][static_cast<std::size_t>(c)] + corners_.value().at(r, c);
    return {ag::Var(std::move(tokens)), std::nullopt};
}

// ---------------------------------------------------------------------------
// MaskDecoder
// ---------------------------------------------------------------------------

MaskDecoder::MaskDecoder(nn::ParameterStore& store, const EncoderConfig& cfg, const PromptEncoder& prompt,
                         nn::Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
    const int e = cfg.embed_dim;
    if (e % 4 != 0) fail(Errc::BadConfig, "embed_dim must be divisible by 4");
    const int s = cfg.grid();
    dense_pe_tokens_ = ag::to_tokens(ag::Var(prompt.dense_positional_encoding(s)));
    mask_token_ = store.create(prefix + ".mask_token", nn::kaiming_normal({1, e}, 1, rng, 1.0), false);
    t2i_q_ = nn::Linear::create(store, prefix + ".t2i.q", e, e, rng, false);
    t2i_k_ = nn::Linear::create(store, prefix + ".t2i.k", e, e, rng, false);
    t2i_v_ = nn::Linear::create(store, prefix + ".t2i.v", e, e, rng, false);
    t2i_o_ = nn::Linear::create(store, prefix + ".t2i.out", e, e, rng, false, 0.5);
    mlp1_ = nn::Linear::create(store, prefix + ".mlp1", e, 2 * e, rng, false, 1.4142135623730951);
    mlp2_ = nn::Linear::create(store, prefix + ".mlp2", 2 * e, e, rng, false, 0.5);
    i2t_q_ = nn::Linear::create(store, prefix + ".i2t.q", e, e, rng, false);
    i2t_k_ = nn::Linear::create(store, prefix + ".i2t.k", e, e, rng, false);
    i2t_v_ = nn::Linear::create(store, prefix + ".i2t.v", e, e, rng, false);
    i2t_o_ = nn::Linear::create(store, prefix + ".i2t.out", e, e, rng, false, 0.5);
    refine_ = nn::Conv2d::create(store, prefix + ".refine", e, e, 3, nn::Conv2d::same(3), rng, false, 0.5);
    up1_ = nn::Conv2d::create(store, prefix + ".up1", e, e / 2, 3, nn::Conv2d::same(3), rng, false);
    up2_ = nn::Conv2d::create(store, prefix + ".up2", e / 2, e / 4, 3, nn::Conv2d::same(3), rng, false);
    hyper1_ = nn::Linear::create(store, prefix + ".hyper1", e, e, rng, false, 1.4142135623730951);
    hyper2_ = nn::Linear::create(store, prefix + ".hyper2", e, e / 4, rng, false);
    mask_bias_ = store.create(prefix + ".mask_bias", Tensor({1}), false);
}

PredictionMap MaskDecoder::decode_mask(const FeatureMap& img_emb, const PromptBundle& prompts) const {
    const int e = cfg_.embed_dim, s = cfg_.grid();
    if (img_emb.data.value().rank() != 3 || img_emb.channels() != e || img_emb.height() != s || img_emb.width() != s)
        fail(Errc::BadShape, "decoder expects image embedding [" + std::to_string(e) + "," + std::to_string(s) + "," +
                                 std::to_string(s) + "], got " + img_emb.data.value().shape_str());
    if (prompts.sparse_tokens.value().rank() != 2 || prompts.sparse_tokens.shape()[1] != e)
        fail(Errc::BadShape, "sparse tokens must be [n," + std::to_string(e) + "]");

    ag::Var src = img_emb.data;
    if (prompts.dense_prompt) {
        if (prompts.dense_prompt->data.shape() != src.shape())
            fail(Errc::BadShape, "dense prompt " + prompts.dense_prompt->data.value().shape_str() +
                                     " does not match image embedding " + src.value().shape_str());
        src = ag::add(src, prompts.dense_prompt->data);
    }

    ag::Var src_tok = ag::to_tokens(src);
    const ag::Var keyed = ag::add(src_tok, dense_pe_tokens_);
    ag::Var tokens = ag::concat({mask_token_, prompts.sparse_tokens});

    tokens = ag::add(tokens, t2i_o_(attend(t2i_q_(tokens), t2i_k_(keyed), t2i_v_(src_tok))));
    tokens = ag::add(tokens, mlp2_(ag::gelu(mlp1_(tokens))));
    src_tok = ag::add(src_tok, i2t_o_(attend(i2t_q_(keyed), i2t_k_(tokens), i2t_v_(tokens))));

    ag::Var x = ag::from_tokens(src_tok, s, s);
    x = ag::add(x, ag::gelu(refine_(x)));
    x = ag::gelu(up1_(ag::resize_bilinear(x, 2 * s, 2 * s)));
    x = ag::gelu(up2_(ag::resize_bilinear(x, 4 * s, 4 * s)));
    x = ag::resize_bilinear(x, cfg_.image_size, cfg_.image_size);

    const ag::Var weights = hyper2_(ag::gelu(hyper1_(ag::slice(tokens, 0, 1))));  // [1, E/4]
    const ag::Var per_pixel = ag::matmul(ag::to_tokens(x), weights, false, true);  // [H*W, 1]
    const ag::Var logits = ag::from_tokens(per_pixel, cfg_.image_size, cfg_.image_size);
    return {ag::add(logits, mask_bias_)};
}

}  // namespace dsam::encoders
