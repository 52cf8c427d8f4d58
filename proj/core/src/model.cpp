#include "dsam/model.hpp"

#include "dsam/error.hpp"
#include "dsam/hash.hpp"

namespace dsam::harness {

nn::Rng module_rng(std::uint64_t seed, const std::string& module) {
    return nn::Rng(fnv1a(module, fnv1a(&seed, sizeof seed)));
}

DsamModel::DsamModel(const RunConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    enc_cfg_.image_size = cfg_.image_size;
    enc_cfg_.embed_dim = cfg_.embed_dim;
    enc_cfg_.student_dim0 = cfg_.student_dim0;
    enc_cfg_.student_dim1 = cfg_.student_dim1;

    frozen_encoder_ = std::make_unique<encoders::FrozenEncoder>(store_, enc_cfg_, "teacher");
    prompt_encoder_ = std::make_unique<encoders::PromptEncoder>(store_, enc_cfg_, "prompt");
    if (cfg_.use_pdm) {
        nn::Rng srng = module_rng(cfg_.seed, "student");
        student_ = std::make_unique<encoders::StudentEncoder>(store_, enc_cfg_, srng, "student");
        pdm::PdmConfig pc;
        pc.embed_dim = cfg_.embed_dim;
        pc.student_dim = cfg_.student_dim0;
        pc.grid = enc_cfg_.grid();
        pc.temperature = cfg_.temperature;
        pc.dilation = cfg_.dilation;
        nn::Rng prng = module_rng(cfg_.seed, "pdm");
        pdm_ = std::make_unique<pdm::PromptDeeper>(store_, pc, prng, "pdm");
    }
    nn::Rng drng = module_rng(cfg_.seed, "decoder");
    decoder_ = std::make_unique<encoders::MaskDecoder>(store_, enc_cfg_, *prompt_encoder_, drng, "decoder");
    if (cfg_.use_fm) {
        fm_cfg_.embed_dim = cfg_.embed_dim;
        fm_cfg_.segments = cfg_.k;
        fm_cfg_.gf_radius = cfg_.gf_radius;
        fm_cfg_.gf_eps = cfg_.gf_eps;
        fm_cfg_.n_agents = cfg_.n_a;
        fm_cfg_.image_size = cfg_.image_size;
        fm_cfg_.stream1 = cfg_.fm_inputs[0] == 'I' ? fm::StreamSource::Image : fm::StreamSource::Depth;
        fm_cfg_.stream2 = cfg_.fm_inputs[2] == 'I' ? fm::StreamSource::Image : fm::StreamSource::Depth;
        nn::Rng frng = module_rng(cfg_.seed, "fm");
        fm_ = fm::FmParams::create(store_, fm_cfg_, frng, "fm");
    }
}

ag::Var DsamModel::box_tokens(const data::Box& box) const {
    return prompt_encoder_->encode_box_prompt(box, cfg_.image_size).sparse_tokens;
}

FrozenInputs DsamModel::precompute(const data::Sample& sample) const {
    if (sample.height() != cfg_.image_size || sample.width() != cfg_.image_size)
        fail(Errc::BadConfig, "sample " + sample.id + " is " + std::to_string(sample.height()) + "x" +
                                  std::to_string(sample.width()) + ", model expects " +
                                  std::to_string(cfg_.image_size));
    FrozenInputs f;
    f.image_embedding = frozen_encoder_->embed(sample.image);
    f.teacher = frozen_encoder_->encode_depth_teacher(sample.depth);
    f.box_tokens = box_tokens(sample.box);
    return f;
}

ForwardResult DsamModel::forward(const data::Sample& sample, const FrozenInputs& frozen) const {
    PromptBundle prompts{frozen.box_tokens, std::nullopt};
    std::optional<FeatureMap> em_s;
    ForwardResult out;
    if (pdm_) {
        const FeaturePyramid pyramid = student_->encode_image_student(sample.image);
        pdm::PromptDeeper::Output p = pdm_->forward(frozen.teacher, pyramid.em_i(), frozen.box_tokens);
        prompts.dense_prompt = p.prompt_depth;
        em_s = p.em_s;
        out.loss_kd = p.loss_kd;
    }
    out.pred_sam = decoder_->decode_mask(frozen.image_embedding, prompts);
    out.pred_final = out.pred_sam;
    if (fm_) {
        auto source = [&](fm::StreamSource s) -> const FeatureMap& {
            return s == fm::StreamSource::Image ? *em_s : frozen.teacher;
        };
        out.pred_fm = fm::fm_forward(*fm_, fm_cfg_, source(fm_cfg_.stream1), source(fm_cfg_.stream2), out.pred_sam);
        out.pred_final = loss::fuse_predictions(*out.pred_fm, out.pred_sam, cfg_.alpha);
    }
    return out;
}

LossTerms DsamModel::losses(const ForwardResult& out, const Tensor& gt) const {
    LossTerms t;
    t.loss_sam = loss::dice_ce_loss(cfg_.sam_loss_on == "sam" ? out.pred_sam : out.pred_final, gt);
    t.loss_kd = out.loss_kd;
    t.loss = out.loss_kd ? loss::total_loss(t.loss_sam, *out.loss_kd, cfg_.beta) : t.loss_sam;
    return t;
}

}  // namespace dsam::harness
