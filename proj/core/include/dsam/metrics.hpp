#pragma once

// Camouflaged-object evaluation measures. Every function takes a prediction
// in [0,1] and a {0,1} ground truth of the same shape ([H,W] or [1,H,W]).

#include <nlohmann/json.hpp>
#include <span>
#include <string>

#include "dsam/tensor.hpp"

namespace dsam::metrics {

struct MetricReport {
    double s_alpha = 0.0;
    double f_beta_w = 0.0;
    double f_beta_m = 0.0;
    double f_beta_mx = 0.0;
    double e_phi_m = 0.0;
    double e_phi_x = 0.0;
    double mae = 0.0;
    int n_samples = 0;
};

inline constexpr int kThresholds = 256;
inline constexpr double kBetaSquared = 0.3;

double mae(const Tensor& pred, const Tensor& gt);

/// Structure measure: 0.5 * object term + 0.5 * region term (region split at
/// the rounded GT centroid). All-background GT scores 1 - mean(pred),
/// all-foreground GT scores mean(pred).
double s_measure(const Tensor& pred, const Tensor& gt);

struct FMeasures {
    double weighted = 0.0;  ///< dependency-weighted F (beta = 1)
    double mean = 0.0;      ///< F at the adaptive threshold 2 * mean(pred), capped at 1
    double max = 0.0;       ///< max F over the 256 thresholds i/255
};

/// Adaptive and swept F use 8-bit prediction levels round(255 p); the sweep
/// binarises level >= i for i = 0..255 and the adaptive threshold always lands
/// on one of those cuts, so max >= mean. Empty GT gives 0 for all three.
FMeasures f_measure_suite(const Tensor& pred, const Tensor& gt);

struct EMeasures {
    double mean = 0.0;
    double max = 0.0;
};

/// Enhanced-alignment measure over the thresholds (i + 0.5) / 256, binarising
/// pred >= t. Degenerate GT uses the all-background / all-foreground branches.
EMeasures e_measure_suite(const Tensor& pred, const Tensor& gt);

MetricReport evaluate_sample(const Tensor& pred, const Tensor& gt);

/// Per-sample measures averaged over aligned lists.
MetricReport evaluate_batch(std::span<const Tensor> preds, std::span<const Tensor> gts);

enum class Normalize { MinMax, None };

/// Min-max rescale to [0,1]; constant maps are returned unchanged.
Tensor normalize_prediction(const Tensor& prob, Normalize mode = Normalize::MinMax);

/// Column order: S_alpha, F_beta_w, F_beta_m, E_phi_m, E_phi_x, MAE, then F_beta_mx.
nlohmann::ordered_json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);
std::string csv_header();
std::string csv_row(const std::string& label, const MetricReport& report);

}  // namespace dsam::metrics
