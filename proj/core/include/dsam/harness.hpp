#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dsam/checkpoint.hpp"
#include "dsam/data.hpp"
#include "dsam/error.hpp"
#include "dsam/metrics.hpp"
#include "dsam/model.hpp"

namespace dsam::harness {

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;      ///< mean over the epoch's samples, measured before each update
    double loss_sam = 0.0;
    double loss_kd = 0.0;   ///< 0 when the PDM is disabled
    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

struct TrainOptions {
    /// Sees every per-sample loss before backward; may overwrite it (fault injection).
    std::function<void(int step, double& loss)> loss_probe;
};

/// Raised on a non-finite loss; carries the last finite-loss checkpoint.
class TrainingFailure : public Error {
public:
    TrainingFailure(const std::string& what, Checkpoint last_good, std::vector<EpochLog> log)
        : Error(Errc::FailedRun, what), last_good_(std::move(last_good)), log_(std::move(log)) {}
    const Checkpoint& last_good() const noexcept { return last_good_; }
    const std::vector<EpochLog>& log() const noexcept { return log_; }

private:
    Checkpoint last_good_;
    std::vector<EpochLog> log_;
};

/// Adam over decoder, student, PDM and FM parameters; frozen encoders are
/// never updated. Samples must be preprocessed to cfg.image_size.
TrainResult train(const RunConfig& cfg, const std::vector<data::Sample>& train_set, const TrainOptions& opts = {});

struct Prediction {
    std::string id;
    Tensor prob;  ///< [1, H, W], normalised as the config requests
};

struct Evaluation {
    metrics::MetricReport report;
    std::vector<Prediction> predictions;  ///< sample order
};

/// Full forward per sample. Throws BadConfig if a sample's size differs from
/// the checkpoint's image_size.
Evaluation evaluate(const Checkpoint& ckpt, const std::vector<data::Sample>& samples, int threads = 1);

/// Raw sigmoid(Pred_final) maps, one per sample.
std::vector<Tensor> predict(const DsamModel& model, const std::vector<data::Sample>& samples, int threads = 1);

/// Preprocessed training / test samples: files when a path is set, otherwise
/// the synthetic corpus (train seed data_seed, test seed data_seed + 1).
std::vector<data::Sample> resolve_train_set(const RunConfig& cfg);
std::vector<data::Sample> resolve_test_set(const RunConfig& cfg);
std::vector<data::Sample> load_preprocessed(const std::filesystem::path& root, int image_size);

enum class GridKind { Modules, Layers, Inputs, RatioFusion, RatioLoss };

struct AblationGrid {
    GridKind kind = GridKind::Modules;
    std::vector<std::string> rows;  ///< row labels, e.g. M1..M4 or 1:9

    /// "modules", "layers", "inputs", "ratio_fusion", "ratio_loss", optionally
    /// restricted with ":label,label".
    static AblationGrid parse(const std::string& spec);
    std::string name() const;
};

struct AblationRow {
    std::string label;
    RunConfig config;
    std::vector<metrics::MetricReport> reports;  ///< one per dataset
};

struct AblationTable {
    std::string grid;
    std::vector<std::string> datasets;
    std::vector<AblationRow> rows;

    /// Row label, then S_alpha, F_beta_w, F_beta_m, E_phi_m, E_phi_x, MAE per dataset.
    std::string to_csv() const;
    nlohmann::ordered_json to_json() const;
};

/// Row configs: base with exactly the grid's variable changed.
std::vector<std::pair<std::string, RunConfig>> expand_grid(const AblationGrid& grid, const RunConfig& base);

struct NamedSet {
    std::string name;
    std::vector<data::Sample> samples;
};

AblationTable ablate(const AblationGrid& grid, const RunConfig& base, const std::vector<data::Sample>& train_set,
                     const std::vector<NamedSet>& eval_sets);

// Artifact writers.
std::string log_to_csv(const std::vector<EpochLog>& log);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_report(const std::filesystem::path& dir, const std::string& label, const metrics::MetricReport& report);
/// 8-bit grayscale after min-max normalisation.
void write_prediction_png(const std::filesystem::path& path, const Tensor& prob);

/// $DSAM_OUTPUT_ROOT, or ./runs when unset.
std::filesystem::path output_root();

}  // namespace dsam::harness
