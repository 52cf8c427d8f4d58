#pragma once

#include "dsam/encoders.hpp"

namespace dsam::loss {

struct LossWeights {
    double alpha = 0.9;        ///< share of the decoder prediction in the fused logits
    double beta = 0.9;         ///< share of the segmentation loss in the objective
    double dice_weight = 1.0;
    double ce_weight = 1.0;
    double dice_smooth = 1.0;

    /// Throws BadConfig when alpha/beta leave [0,1] or a weight is negative.
    void validate() const;
};

/// (1 - alpha) * pred_fm + alpha * pred_sam, in logit space.
PredictionMap fuse_predictions(const PredictionMap& pred_fm, const PredictionMap& pred_sam, double alpha);

/// dice_weight * (1 - (2 sum(p g) + s) / (sum p + sum g + s)) + ce_weight * mean BCE,
/// with p = sigmoid(logits). gt must be {0,1}-valued.
ag::Var dice_ce_loss(const PredictionMap& pred, const Tensor& gt, const LossWeights& weights = {});

/// beta * loss_sam + (1 - beta) * loss_kd
ag::Var total_loss(const ag::Var& loss_sam, const ag::Var& loss_kd, double beta);

}  // namespace dsam::loss
