#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsam/data.hpp"
#include "dsam/nn.hpp"

namespace dsam {

/// [C, H', W'] activation with the number of input pixels per cell.
struct FeatureMap {
    ag::Var data;
    int stride = 1;

    int channels() const { return data.shape()[0]; }
    int height() const { return data.shape()[1]; }
    int width() const { return data.shape()[2]; }
};

struct FeaturePyramid {
    std::vector<FeatureMap> levels;  ///< strictly increasing stride
    std::size_t designated = 0;      ///< level exposed as the image embedding

    const FeatureMap& em_i() const { return levels.at(designated); }
};

struct PromptBundle {
    ag::Var sparse_tokens;                  ///< [2, E] box-corner tokens
    std::optional<FeatureMap> dense_prompt; ///< depth-aware dense prompt, if any
};

struct PredictionMap {
    ag::Var logits;  ///< [1, H, W], pre-sigmoid
};

namespace encoders {

struct EncoderConfig {
    int image_size = 64;
    int embed_dim = 32;      ///< teacher and decoder width
    int patch_stride = 4;
    int student_dim0 = 32;   ///< stride-4 student level
    int student_dim1 = 64;   ///< stride-8 student level
    std::uint64_t frozen_seed = 0x5EED0D5A;

    int grid() const { return image_size / patch_stride; }
};

/// Frozen patch-conv + self-attention encoder. Applied to the RGB image it
/// plays the role of the promptable segmenter's image encoder; applied to the
/// depth map it is the distillation teacher.
class FrozenEncoder {
public:
    FrozenEncoder(nn::ParameterStore& store, const EncoderConfig& cfg, const std::string& prefix = "teacher");

    /// image: [3, H, W], square, H divisible by the patch stride.
    FeatureMap embed(const Tensor& image) const;
    /// depth: [1, H, W] in [0,1]; replicated to three standardised channels.
    FeatureMap encode_depth_teacher(const Tensor& depth) const;

private:
    EncoderConfig cfg_;
    nn::Conv2d patch_, local_, neck_;
    nn::Linear q_, k_, v_, out_;
};

/// Trainable two-level strided pyramid (strides 4 and 8) with a top-down
/// lateral connection into the stride-4 level.
class StudentEncoder {
public:
    StudentEncoder(nn::ParameterStore& store, const EncoderConfig& cfg, nn::Rng& rng,
                   const std::string& prefix = "student");

    FeaturePyramid encode_image_student(const Tensor& image) const;

private:
    EncoderConfig cfg_;
    nn::Conv2d patch0_, block0_, patch1_, block1_, lateral_;
};

/// Frozen box-prompt encoder: random Fourier positional encoding of each
/// corner plus a per-corner type embedding.
class PromptEncoder {
public:
    PromptEncoder(nn::ParameterStore& store, const EncoderConfig& cfg, const std::string& prefix = "prompt");

    PromptBundle encode_box_prompt(const data::Box& box, int image_size) const;

    /// Encoding of a point given in normalised [0,1] coordinates -> [E].
    Tensor positional_encoding(double u, double v) const;
    /// Corner-type embedding (0 = top-left, 1 = bottom-right) -> [E].
    Tensor corner_embedding(int corner) const;
    /// Encoding of every cell centre of an S x S grid -> [E, S, S].
    Tensor dense_positional_encoding(int grid) const;

private:
    EncoderConfig cfg_;
    ag::Var gaussian_;  ///< [2, E/2]
    ag::Var corners_;   ///< [2, E]
};

/// Lightweight two-way attention mask decoder with a hypernetwork mask head.
class MaskDecoder {
public:
    MaskDecoder(nn::ParameterStore& store, const EncoderConfig& cfg, const PromptEncoder& prompt, nn::Rng& rng,
                const std::string& prefix = "decoder");

    /// A dense prompt, when present, is added to the image embedding.
    PredictionMap decode_mask(const FeatureMap& img_emb, const PromptBundle& prompts) const;

private:
    EncoderConfig cfg_;
    ag::Var dense_pe_tokens_;  ///< [S*S, E], constant
    ag::Var mask_token_;
    nn::Linear t2i_q_, t2i_k_, t2i_v_, t2i_o_;
    nn::Linear mlp1_, mlp2_;
    nn::Linear i2t_q_, i2t_k_, i2t_v_, i2t_o_;
    nn::Conv2d refine_, up1_, up2_;
    nn::Linear hyper1_, hyper2_;
    ag::Var mask_bias_;
};

}  // namespace encoders
}  // namespace dsam
