#include "dsam/fusion_loss.hpp"

#include "dsam/error.hpp"

namespace dsam::loss {

void LossWeights::validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(alpha)) fail(Errc::BadConfig, "alpha must lie in [0,1]");
    if (!unit(beta)) fail(Errc::BadConfig, "beta must lie in [0,1]");
    if (dice_weight < 0.0 || ce_weight < 0.0 || dice_smooth < 0.0)
        fail(Errc::BadConfig, "loss weights must be non-negative");
}

PredictionMap fuse_predictions(const PredictionMap& pred_fm, const PredictionMap& pred_sam, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(Errc::BadConfig, "alpha must lie in [0,1]");
    if (pred_fm.logits.shape() != pred_sam.logits.shape())
        fail(Errc::BadShape, "fuse_predictions: " + pred_fm.logits.value().shape_str() + " vs " +
                                 pred_sam.logits.value().shape_str());
    return {ag::add(ag::scale(pred_fm.logits, 1.0 - alpha), ag::scale(pred_sam.logits, alpha))};
}

ag::Var dice_ce_loss(const PredictionMap& pred, const Tensor& gt, const LossWeights& w) {
    if (!pred.logits.value().same_shape(gt))
        fail(Errc::BadShape, "dice_ce_loss: " + pred.logits.value().shape_str() + " vs " + gt.shape_str());
    for (double v : gt.values())
        if (v != 0.0 && v != 1.0) fail(Errc::BadMask, "ground truth must be binary");
    const ag::Var target(gt);
    const ag::Var prob = ag::sigmoid(pred.logits);
    const ag::Var inter = ag::sum(ag::mul(prob, target));
    const ag::Var num = ag::add_scalar(ag::scale(inter, 2.0), w.dice_smooth);
    const ag::Var den = ag::add_scalar(ag::sum(prob), gt.sum() + w.dice_smooth);
    const ag::Var dice = ag::one_minus(ag::div(num, den));
    const ag::Var ce = ag::bce_with_logits_mean(pred.logits, gt);
    return ag::add(ag::scale(dice, w.dice_weight), ag::scale(ce, w.ce_weight));
}

ag::Var total_loss(const ag::Var& loss_sam, const ag::Var& loss_kd, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) fail(Errc::BadConfig, "beta must lie in [0,1]");
    return ag::add(ag::scale(loss_sam, beta), ag::scale(loss_kd, 1.0 - beta));
}

}  // namespace dsam::loss
