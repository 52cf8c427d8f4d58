#include "dsam/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <sstream>
#include <thread>

namespace dsam::harness {
namespace {

void check_sizes(const RunConfig& cfg, const std::vector<data::Sample>& samples) {
    for (const auto& s : samples)
        if (s.height() != cfg.image_size || s.width() != cfg.image_size)
            fail(Errc::BadConfig, "sample " + s.id + " is " + std::to_string(s.height()) + "x" +
                                      std::to_string(s.width()) + " but the run expects " +
                                      std::to_string(cfg.image_size));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::vector<data::Sample>& train_set, const TrainOptions& opts) {
    cfg.validate();
    if (train_set.empty()) fail(Errc::BadConfig, "empty training set");
    check_sizes(cfg, train_set);

    DsamModel model(cfg);
    TrainResult result;
    if (cfg.epochs == 0) {
        result.checkpoint = snapshot(cfg, model.store());
        return result;
    }

    std::vector<FrozenInputs> frozen;
    frozen.reserve(train_set.size());
    for (const auto& s : train_set) frozen.push_back(model.precompute(s));

    nn::Adam adam(model.store(), {cfg.lr, 0.9, 0.999, 1e-8});
    nn::Rng order_rng = module_rng(cfg.seed, "order");
    nn::Rng jitter_rng = module_rng(cfg.seed, "jitter");
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Checkpoint last_good = snapshot(cfg, model.store());
    int step = 0;
    const std::size_t batches = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
    const double total_steps = static_cast<double>(batches) * cfg.epochs;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        EpochLog entry{epoch + 1};
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - begin);
            model.store().zero_grad();
            for (std::size_t b = begin; b < end; ++b) {
                const data::Sample& s = train_set[order[b]];
                FrozenInputs inputs = frozen[order[b]];
                if (cfg.box_jitter > 0.0)
                    inputs.box_tokens = model.box_tokens(data::derive_box_prompt(s.gt_mask, cfg.box_jitter, &jitter_rng));
                const ForwardResult out = model.forward(s, inputs);
                const LossTerms terms = model.losses(out, s.gt_mask);
                double loss = terms.loss.value()[0];
                if (opts.loss_probe) opts.loss_probe(step, loss);
                if (!std::isfinite(loss)) {
                    result.log.push_back(entry);
                    throw TrainingFailure("non-finite loss at step " + std::to_string(step) + " (sample " + s.id + ")",
                                          std::move(last_good), std::move(result.log));
                }
                entry.loss += loss;
                entry.loss_sam += terms.loss_sam.value()[0];
                if (terms.loss_kd) entry.loss_kd += terms.loss_kd->value()[0];
                ag::backward(ag::scale(terms.loss, inv_batch));
            }
            last_good = snapshot(cfg, model.store());
            if (cfg.lr_schedule == "cosine")
                adam.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total_steps)));
            adam.step();
            ++step;
        }
        const double n = static_cast<double>(train_set.size());
        entry.loss /= n;
        entry.loss_sam /= n;
        entry.loss_kd /= n;
        result.log.push_back(entry);
    }
    result.checkpoint = snapshot(cfg, model.store());
    return result;
}

std::vector<Tensor> predict(const DsamModel& model, const std::vector<data::Sample>& samples, int threads) {
    check_sizes(model.config(), samples);
    std::vector<Tensor> out(samples.size());
    auto run = [&](std::size_t i) {
        const ForwardResult r = model.forward(samples[i], model.precompute(samples[i]));
        out[i] = ag::sigmoid(r.pred_final.logits).value();
    };
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(samples.size(), 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < samples.size(); ++i) run(i);
        return out;
    }
    // Static striding: each slot is written by exactly one worker.
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < samples.size(); i += workers) run(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

Evaluation evaluate(const Checkpoint& ckpt, const std::vector<data::Sample>& samples, int threads) {
    check_sizes(ckpt.config, samples);
    DsamModel model(ckpt.config);
    restore(model.store(), ckpt);
    std::vector<Tensor> probs = predict(model, samples, threads);

    const auto mode = ckpt.config.pred_norm == "none" ? metrics::Normalize::None : metrics::Normalize::MinMax;
    Evaluation ev;
    std::vector<Tensor> gts;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ev.predictions.push_back({samples[i].id, metrics::normalize_prediction(probs[i], mode)});
        gts.push_back(samples[i].gt_mask);
    }
    std::vector<Tensor> preds;
    for (const auto& p : ev.predictions) preds.push_back(p.prob);
    ev.report = metrics::evaluate_batch(preds, gts);
    return ev;
}

std::vector<data::Sample> load_preprocessed(const std::filesystem::path& root, int image_size) {
    std::vector<data::Sample> out;
    for (const auto& s : data::load_dataset({root, data::Split::Test})) out.push_back(data::preprocess(s, image_size));
    return out;
}

namespace {

std::vector<data::Sample> resolve(const RunConfig& cfg, const std::string& path, int n, std::uint64_t seed) {
    if (!path.empty()) return load_preprocessed(path, cfg.image_size);
    std::vector<data::Sample> out;
    for (const auto& s : data::synth_dataset(n, seed, cfg.image_size)) out.push_back(data::preprocess(s, cfg.image_size));
    return out;
}

}  // namespace

std::vector<data::Sample> resolve_train_set(const RunConfig& cfg) {
    return resolve(cfg, cfg.train_data, cfg.synth_train_n, cfg.data_seed);
}

std::vector<data::Sample> resolve_test_set(const RunConfig& cfg) {
    return resolve(cfg, cfg.test_data, cfg.synth_test_n, cfg.data_seed + 1);
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

namespace {

struct GridInfo {
    GridKind kind;
    const char* name;
    std::vector<std::string> rows;
};

const std::vector<GridInfo>& grid_table() {
    static const std::vector<GridInfo> table{
        {GridKind::Modules, "modules", {"M1", "M2", "M3", "M4"}},
        {GridKind::Layers, "layers", {"2", "4", "8", "16"}},
        {GridKind::Inputs, "inputs", {"I+I", "I+D", "D+D"}},
        {GridKind::RatioFusion, "ratio_fusion", {"3:7", "2:8", "1:9", "0.5:9.5"}},
        {GridKind::RatioLoss, "ratio_loss", {"3:7", "2:8", "1:9", "0.5:9.5"}},
    };
    return table;
}

const GridInfo& info(GridKind kind) {
    for (const auto& g : grid_table())
        if (g.kind == kind) return g;
    fail(Errc::BadConfig, "unknown grid kind");
}

/// "a:b" with a + b = 10 -> share of the second term, b / 10.
double ratio_share(const std::string& label) {
    const auto colon = label.find(':');
    const double a = std::stod(label.substr(0, colon));
    const double b = std::stod(label.substr(colon + 1));
    return b / (a + b);
}

}  // namespace

AblationGrid AblationGrid::parse(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string name = spec.substr(0, colon);
    for (const auto& g : grid_table()) {
        if (name != g.name) continue;
        AblationGrid grid{g.kind, {}};
        if (colon == std::string::npos) {
            grid.rows = g.rows;
            return grid;
        }
        std::stringstream ss(spec.substr(colon + 1));
        for (std::string label; std::getline(ss, label, ',');) {
            if (std::find(g.rows.begin(), g.rows.end(), label) == g.rows.end())
                fail(Errc::BadConfig, "grid " + name + " has no row '" + label + "'");
            grid.rows.push_back(label);
        }
        if (grid.rows.empty()) fail(Errc::BadConfig, "grid " + name + " restricted to no rows");
        return grid;
    }
    fail(Errc::BadConfig, "unknown ablation grid '" + name + "'");
}

std::string AblationGrid::name() const { return info(kind).name; }

std::vector<std::pair<std::string, RunConfig>> expand_grid(const AblationGrid& grid, const RunConfig& base) {
    std::vector<std::pair<std::string, RunConfig>> out;
    for (const auto& label : grid.rows) {
        RunConfig c = base;
        c.ablation_id = grid.name();
        switch (grid.kind) {
            case GridKind::Modules: apply_variant(c, label); break;
            case GridKind::Layers: c.k = std::stoi(label); break;
            case GridKind::Inputs: c.fm_inputs = label; break;
            case GridKind::RatioFusion: c.alpha = ratio_share(label); break;
            case GridKind::RatioLoss: c.beta = ratio_share(label); break;
        }
        c.validate();
        out.emplace_back(label, std::move(c));
    }
    return out;
}

AblationTable ablate(const AblationGrid& grid, const RunConfig& base, const std::vector<data::Sample>& train_set,
                     const std::vector<NamedSet>& eval_sets) {
    AblationTable table;
    table.grid = grid.name();
    for (const auto& s : eval_sets) table.datasets.push_back(s.name);
    for (auto& [label, cfg] : expand_grid(grid, base)) {
        const TrainResult trained = train(cfg, train_set);
        AblationRow row{label, cfg, {}};
        for (const auto& set : eval_sets) row.reports.push_back(evaluate(trained.checkpoint, set.samples).report);
        table.rows.push_back(std::move(row));
    }
    return table;
}

namespace {

const char* const kSixColumns[] = {"S_alpha", "F_beta_w", "F_beta_m", "E_phi_m", "E_phi_x", "MAE"};

std::array<double, 6> six(const metrics::MetricReport& r) {
    return {r.s_alpha, r.f_beta_w, r.f_beta_m, r.e_phi_m, r.e_phi_x, r.mae};
}

}  // namespace

std::string AblationTable::to_csv() const {
    std::string out = "variant";
    for (const auto& d : datasets)
        for (const char* col : kSixColumns) out += "," + d + ":" + col;
    out += '\n';
    for (const auto& row : rows) {
        out += row.label;
        for (const auto& rep : row.reports)
            for (double v : six(rep)) out += "," + fmt(v);
        out += '\n';
    }
    return out;
}

nlohmann::ordered_json AblationTable::to_json() const {
    nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json per_set;
        for (std::size_t i = 0; i < datasets.size(); ++i) per_set[datasets[i]] = metrics::to_json(row.reports[i]);
        rows_json.push_back({{"variant", row.label}, {"config", harness::to_json(row.config)}, {"metrics", per_set}});
    }
    return {{"grid", grid}, {"datasets", datasets}, {"rows", rows_json}};
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

std::string log_to_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,loss,loss_sam,loss_kd\n";
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.loss, e.loss_sam, e.loss_kd);
        out += buf;
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::Io, "cannot write " + path.string());
    out << text;
}

void write_report(const std::filesystem::path& dir, const std::string& label, const metrics::MetricReport& report) {
    write_text(dir / "report.json", metrics::to_json(report).dump(2) + "\n");
    write_text(dir / "report.csv", metrics::csv_header() + "\n" + metrics::csv_row(label, report) + "\n");
}

void write_prediction_png(const std::filesystem::path& path, const Tensor& prob) {
    const Tensor norm = metrics::normalize_prediction(prob, metrics::Normalize::MinMax);
    const int h = norm.dim(norm.rank() - 2), w = norm.dim(norm.rank() - 1);
    cv::Mat img(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at<unsigned char>(y, x) =
                static_cast<unsigned char>(std::lround(std::clamp(norm[y * w + x], 0.0, 1.0) * 255.0));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) fail(Errc::Io, "cannot write " + path.string());
}

std::filesystem::path output_root() {
    const char* env = std::getenv("DSAM_OUTPUT_ROOT");
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

}  // namespace dsam::harness
