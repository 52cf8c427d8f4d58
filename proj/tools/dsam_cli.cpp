// dsam: train / eval / ablate / synth front end.

#include <CLI11.hpp>
#include <chrono>
#include <iostream>

#include "dsam/harness.hpp"
#include "dsam/hash.hpp"

namespace fs = std::filesystem;
using namespace dsam;
using namespace dsam::harness;

namespace {

std::string run_name(const RunConfig& cfg) {
    return variant_name(cfg) + "-" + hex64(config_hash(cfg)).substr(0, 8);
}

void write_predictions(const fs::path& dir, const Evaluation& ev) {
    for (const auto& p : ev.predictions) write_prediction_png(dir / (p.id + ".png"), p.prob);
}

int cmd_train(const fs::path& config_path, const std::string& out_override) {
    const RunConfig cfg = load_config(config_path);
    const fs::path dir = out_override.empty() ? output_root() / run_name(cfg) : fs::path(out_override);
    fs::create_directories(dir);
    save_config(dir / "config.json", cfg);

    const auto train_set = resolve_train_set(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        TrainResult r = train(cfg, train_set);
        save_checkpoint(dir / "checkpoint.bin", r.checkpoint);
        write_text(dir / "train_log.csv", log_to_csv(r.log));
        for (const auto& e : r.log)
            std::cout << "epoch " << e.epoch << " loss " << e.loss << " loss_sam " << e.loss_sam << " loss_kd "
                      << e.loss_kd << '\n';
        const Evaluation ev = evaluate(r.checkpoint, train_set);
        write_report(dir / "train_eval", "train", ev.report);
    } catch (const TrainingFailure& f) {
        save_checkpoint(dir / "last_good.bin", f.last_good());
        write_text(dir / "train_log.csv", log_to_csv(f.log()));
        throw;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "run written to " << dir.string() << " (" << secs << " s)\n";
    return 0;
}

int cmd_eval(const fs::path& ckpt_path, const std::string& data, const std::string& out_override, bool pngs,
             int threads) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto samples = data.empty() ? resolve_test_set(ckpt.config) : load_preprocessed(data, ckpt.config.image_size);
    const Evaluation ev = evaluate(ckpt, samples, threads);
    const fs::path dir = out_override.empty() ? output_root() / (run_name(ckpt.config) + "-eval") : fs::path(out_override);
    const std::string label = data.empty() ? "synthetic" : fs::path(data).filename().string();
    write_report(dir, label, ev.report);
    if (pngs) write_predictions(dir / "predictions", ev);
    std::cout << metrics::to_json(ev.report).dump(2) << '\n';
    return 0;
}

int cmd_ablate(const std::string& grid_spec, const fs::path& config_path, const std::string& out_override) {
    const RunConfig base = load_config(config_path);
    const AblationGrid grid = AblationGrid::parse(grid_spec);
    const auto train_set = resolve_train_set(base);
    std::vector<NamedSet> sets{{"train", train_set}, {"test", resolve_test_set(base)}};
    const AblationTable table = ablate(grid, base, train_set, sets);
    const fs::path dir = out_override.empty() ? output_root() / ("ablate-" + grid.name()) : fs::path(out_override);
    write_text(dir / "table.csv", table.to_csv());
    write_text(dir / "table.json", table.to_json().dump(2) + "\n");
    std::cout << table.to_csv();
    return 0;
}

int cmd_synth(int n, std::uint64_t seed, int size, const fs::path& out) {
    data::save_dataset(out, data::synth_dataset(n, seed, size));
    std::cout << "wrote " << n << " samples to " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth-aware promptable camouflaged-object segmentation"};
    app.require_subcommand(1);

    std::string config, ckpt, data, grid, out;
    int n = 8, size = 64, threads = 1;
    std::uint64_t seed = 0;
    bool pngs = false;

    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", out, "run directory (default: $DSAM_OUTPUT_ROOT/<variant>-<hash>)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", data, "dataset root with Image/ Depth/ GT/ (default: synthetic test set)");
    eval_cmd->add_option("--out", out, "report directory");
    eval_cmd->add_option("--threads", threads, "evaluation worker threads")->check(CLI::PositiveNumber);
    eval_cmd->add_flag("--png", pngs, "write 8-bit prediction PNGs");

    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
    ablate_cmd->add_option("--grid", grid, "modules | layers | inputs | ratio_fusion | ratio_loss [:row,row]")
        ->required();
    ablate_cmd->add_option("--config", config, "base run config (JSON)")->required()->check(CLI::ExistingFile);
    ablate_cmd->add_option("--out", out, "table directory");

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic RGB-D dataset");
    synth_cmd->add_option("--n", n, "sample count")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--seed", seed, "generator seed");
    synth_cmd->add_option("--size", size, "image side")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--out", out, "output root")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train_cmd) return cmd_train(config, out);
        if (*eval_cmd) return cmd_eval(ckpt, data, out, pngs, threads);
        if (*ablate_cmd) return cmd_ablate(grid, config, out);
        if (*synth_cmd) return cmd_synth(n, seed, size, out);
    } catch (const dsam::Error& e) {
        std::cerr << "error [" << dsam::to_string(e.code()) << "]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
