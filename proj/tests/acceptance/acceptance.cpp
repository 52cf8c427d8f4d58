// One PASS/FAIL line per acceptance criterion; exit status is the failure count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dsam/fm.hpp"
#include "dsam/fusion_loss.hpp"
#include "dsam/harness.hpp"
#include "dsam/kernels.hpp"
#include "dsam/pdm.hpp"
#include "metric_oracle.hpp"
#include "testing.hpp"

using namespace dsam;
using namespace dsam::harness;
using namespace dsam::loss;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double sum_squares(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return s;
}

void metric_oracles() {
    const auto t0 = Clock::now();
    nn::Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const int n = i % 2 == 0 ? 8 : 16;
        const Tensor pred = testkit::random_tensor({1, n, n}, rng, 0.0, 1.0);
        Tensor gt = testkit::random_mask({1, n, n}, rng, 0.1 + 0.8 * (i % 7) / 6.0);
        const auto f = metrics::f_measure_suite(pred, gt);
        const auto e = metrics::e_measure_suite(pred, gt);
        const auto [em, ex] = oracle::e_suite(pred, gt);
        for (double d : {metrics::mae(pred, gt) - oracle::mae(pred, gt),
                         metrics::s_measure(pred, gt) - oracle::s_measure(pred, gt),
                         f.weighted - oracle::f_weighted(pred, gt), f.mean - oracle::f_adaptive(pred, gt),
                         f.max - oracle::f_max(pred, gt), e.mean - em, e.max - ex})
            worst = std::max(worst, std::abs(d));
    }
    bool perfect = true;
    for (int n : {8, 16}) {
        const Tensor gt = testkit::random_mask({1, n, n}, rng, 0.4);
        const auto r = metrics::evaluate_sample(gt, gt);
        perfect = perfect && r.s_alpha == 1.0 && r.f_beta_w == 1.0 && r.f_beta_m == 1.0 && r.f_beta_mx == 1.0 &&
                  r.e_phi_m == 1.0 && r.e_phi_x == 1.0 && r.mae == 0.0;
    }
    const double secs = seconds_since(t0);
    report(1, worst <= 1e-9 && perfect && secs < 60.0,
           fmt("200 pairs, max |impl-oracle| %.3g (tol 1e-9), pred=gt exact %s, %.2fs", worst, perfect ? "yes" : "no",
               secs));
}

void distillation() {
    nn::Rng rng(202);
    auto fm = [](const Tensor& t) { return FeatureMap{ag::Var(t), 4}; };
    double self = 0.0, shift = 0.0, min_val = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor t = testkit::random_tensor({4, 6, 6}, rng, -3.0, 3.0);
        Tensor shifted = t;
        for (int c = 0; c < 4; ++c) {
            const double k = testkit::random_tensor({1}, rng, -10.0, 10.0)[0];
            for (int i = 0; i < 36; ++i) shifted[c * 36 + i] += k;
        }
        const Tensor s = testkit::random_tensor({4, 6, 6}, rng, -3.0, 3.0);
        self = std::max(self, std::abs(pdm::cwd_loss(fm(t), fm(t), 4.0).value()[0]));
        shift = std::max(shift, std::abs(pdm::cwd_loss(fm(t), fm(shifted), 4.0).value()[0]));
        min_val = std::min(min_val, pdm::cwd_loss(fm(t), fm(s), 1.0 + trial % 4).value()[0]);
    }
    const double pinned = 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
    const double got = pdm::cwd_loss(fm(Tensor({1, 1, 2}, std::vector<double>{0.0, std::log(3.0)})),
                                     fm(Tensor({1, 1, 2}, std::vector<double>{0.0, 0.0})), 1.0)
                           .value()[0];
    const bool ok = self == 0.0 && shift <= 1e-12 && min_val >= 0.0 && std::abs(got - pinned) <= 1e-10;
    report(2, ok,
           fmt("cwd(x,x)=%.3g, max shift response %.3g, min value %.3g, pinned KL err %.3g", self, shift, min_val,
               std::abs(got - pinned)));
}

void haar() {
    nn::Rng rng(303);
    double parseval = 0.0, recon = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = testkit::random_tensor({1, 8, 8}, rng);
        const auto b = kernels::haar_analysis(x);
        parseval = std::max(parseval, std::abs(sum_squares(b.ll) + sum_squares(b.lh) + sum_squares(b.hl) +
                                               sum_squares(b.hh) - sum_squares(x)));
        recon = std::max(recon, max_abs_diff(kernels::haar_synthesis(b), x));
    }
    const auto c = kernels::haar_analysis(Tensor({2, 8, 8}, 0.42));
    const bool zero_detail = sum_squares(c.lh) == 0.0 && sum_squares(c.hl) == 0.0 && sum_squares(c.hh) == 0.0;
    const auto p = kernels::haar_analysis(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    const bool pinned = p.lh[0] == -2.0 && p.hl[0] == -1.0 && p.hh[0] == 0.0;
    report(3, parseval <= 1e-6 && recon <= 1e-6 && zero_detail && pinned,
           fmt("Parseval err %.3g, reconstruction err %.3g, constant detail zero %s, pinned (LH,HL,HH)=(%g,%g,%g)",
               parseval, recon, zero_detail ? "yes" : "no", p.lh[0], p.hl[0], p.hh[0]));
}

Tensor guided_brute(const Tensor& x, int r, double eps) {
    const int H = x.dim(1), W = x.dim(2);
    auto wmean = [&](const std::vector<double>& v, int y, int xx) {
        double s = 0.0;
        int n = 0;
        for (int yy = std::max(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
            for (int xc = std::max(0, xx - r); xc <= std::min(W - 1, xx + r); ++xc) {
                s += v[yy * W + xc];
                ++n;
            }
        return s / n;
    };
    std::vector<double> img(x.values().begin(), x.values().end()), sq(img.size()), a(img.size()), b(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) sq[i] = img[i] * img[i];
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            const double m = wmean(img, y, xx), var = wmean(sq, y, xx) - m * m;
            a[y * W + xx] = var / (var + eps);
            b[y * W + xx] = m - a[y * W + xx] * m;
        }
    Tensor out = Tensor::zeros_like(x);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) out[y * W + xx] = wmean(a, y, xx) * img[y * W + xx] + wmean(b, y, xx);
    return out;
}

void guided_filter() {
    nn::Rng rng(404);
    double identity = 0.0, oracle_err = 0.0;
    bool constants = true;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = testkit::random_tensor({1, 8, 8}, rng);
        identity = std::max(identity, max_abs_diff(fm::guided_filter(ag::Var(x), 2, 1e-12).value(), x));
        const Tensor c({1, 8, 8}, testkit::random_tensor({1}, rng)[0]);
        constants = constants && fm::guided_filter(ag::Var(c), 2, 0.01).value() == c;
        const Tensor s = testkit::random_tensor({1, 4, 4}, rng);
        oracle_err = std::max(oracle_err, max_abs_diff(fm::guided_filter(ag::Var(s), 1, 0.05).value(),
                                                       guided_brute(s, 1, 0.05)));
    }
    report(4, identity <= 1e-5 && constants && oracle_err <= 1e-6,
           fmt("eps->0 identity err %.3g, constants exact %s, 4x4 oracle err %.3g", identity, constants ? "yes" : "no",
               oracle_err));
}

void gradients() {
    nn::Rng rng(505);
    std::vector<std::string> parts;
    bool ok = true;
    auto record = [&](const std::string& name, const testkit::GradCheck& g) {
        ok = ok && g.checked >= 20 && g.failures == 0;
        parts.push_back(fmt("%s %d/%d worst %.2f", name.c_str(), g.checked - g.failures, g.checked, g.worst));
    };
    {
        nn::ParameterStore store;
        const auto p = pdm::BcmParams::create(store, "bcm", 4, 3, rng);
        const ag::Var x(testkit::random_tensor({4, 6, 6}, rng));
        auto f = [&] { return ag::mean(ag::square(pdm::bcm(p, {x, 4}, 6).data)); };
        record("BCM", testkit::check_parameters(f, testkit::sample_parameters(store, "bcm", 24, rng)));
    }
    {
        nn::ParameterStore store;
        const auto p = pdm::PfmParams::create(store, "pfm", 6, rng);
        const ag::Var tokens(testkit::random_tensor({2, 6}, rng));
        const ag::Var hf(testkit::random_tensor({6, 6, 6}, rng));
        auto f = [&] { return ag::mean(ag::square(pdm::pfm(p, tokens, {hf, 4}).data)); };
        record("PFM", testkit::check_parameters(f, testkit::sample_parameters(store, "pfm", 24, rng)));
    }
    {
        nn::ParameterStore store;
        fm::FmConfig cfg;
        cfg.embed_dim = 8;
        cfg.segments = 4;
        cfg.gf_radius = 1;
        cfg.n_agents = 4;
        cfg.image_size = 16;
        const auto p = fm::FmParams::create(store, cfg, rng);
        const FeatureMap em1{ag::Var(testkit::random_tensor({8, 4, 4}, rng)), 4};
        const FeatureMap em2{ag::Var(testkit::random_tensor({8, 4, 4}, rng)), 4};
        const PredictionMap pred{ag::Var(testkit::random_tensor({1, 16, 16}, rng, -2.0, 2.0))};
        auto f = [&] { return ag::mean(ag::square(fm::fm_forward(p, cfg, em1, em2, pred).logits)); };
        record("FM stream1", testkit::check_parameters(f, testkit::sample_parameters(store, "fm.bc1", 20, rng)));
        record("FM stream2", testkit::check_parameters(f, testkit::sample_parameters(store, "fm.bc2", 20, rng)));
        record("FM joint", testkit::check_parameters(f, testkit::sample_parameters(store, "fm.jm", 20, rng)));
    }
    {
        ag::Var logits(testkit::random_tensor({1, 8, 8}, rng, -3.0, 3.0), true);
        const Tensor gt = testkit::random_mask({1, 8, 8}, rng, 0.4);
        auto f = [&] { return dice_ce_loss({logits}, gt); };
        record("DiceCE", testkit::check_gradient(f, logits, testkit::sample_indices(64, 24, rng)));
    }
    {
        const ag::Var t(testkit::random_tensor({3, 5, 5}, rng));
        ag::Var s(testkit::random_tensor({3, 5, 5}, rng), true);
        auto f = [&] { return pdm::cwd_loss({t, 4}, {s, 4}, 4.0); };
        record("cwd", testkit::check_gradient(f, s, testkit::sample_indices(75, 24, rng)));
    }
    std::string detail = "h=1e-4 rel tol 1e-3:";
    for (const auto& p : parts) detail += " " + p + ";";
    report(5, ok, detail);
}

void fusion_boundaries() {
    nn::Rng rng(606);
    const PredictionMap a{ag::Var(testkit::random_tensor({1, 8, 8}, rng))};
    const PredictionMap b{ag::Var(testkit::random_tensor({1, 8, 8}, rng))};
    const bool fuse_ok = fuse_predictions(a, b, 1.0).logits.value() == b.logits.value() &&
                         fuse_predictions(a, b, 0.0).logits.value() == a.logits.value();
    const ag::Var ls(Tensor::scalar(0.731)), lk(Tensor::scalar(0.252));
    const bool loss_ok = total_loss(ls, lk, 1.0).value()[0] == 0.731 && total_loss(ls, lk, 0.0).value()[0] == 0.252;
    const RunConfig d;
    const LossWeights w;
    const bool defaults = d.alpha == 0.9 && d.beta == 0.9 && w.alpha == 0.9 && w.beta == 0.9;
    report(6, fuse_ok && loss_ok && defaults,
           fmt("alpha boundaries exact %s, beta boundaries exact %s, defaults alpha=%g beta=%g (1:9)",
               fuse_ok ? "yes" : "no", loss_ok ? "yes" : "no", d.alpha, d.beta));
}

RunConfig desk() {
    return load_config(DSAM_SOURCE_DIR "/configs/desk.json");
}

void frozen_split() {
    RunConfig cfg = desk();
    cfg.epochs = 50;
    const auto data = resolve_train_set(cfg);
    DsamModel init(cfg);
    const TrainResult r = train(cfg, data);
    DsamModel trained(cfg);
    restore(trained.store(), r.checkpoint);
    bool ok = true;
    std::string detail = fmt("%zu steps:", r.log.size() * ((data.size() + cfg.batch_size - 1) / cfg.batch_size));
    for (const char* p : {"teacher.", "prompt.", "decoder.", "student.", "pdm.", "fm."}) {
        const bool frozen = std::string(p) == "teacher." || std::string(p) == "prompt.";
        const bool same = nn::parameter_hash(init.store(), p) == nn::parameter_hash(trained.store(), p);
        ok = ok && same == frozen;
        detail += fmt(" %s%s", p, same ? "unchanged" : "changed");
    }
    report(7, ok, detail);
}

void desk_overfit() {
    const auto t0 = Clock::now();
    std::vector<double> maes, ss;
    nlohmann::ordered_json baseline = nlohmann::ordered_json::array();
    for (int seed : {0, 1, 2}) {
        RunConfig cfg = desk();
        cfg.seed = seed;
        const auto data = resolve_train_set(cfg);
        const TrainResult r = train(cfg, data);
        const Evaluation e = evaluate(r.checkpoint, data);
        maes.push_back(e.report.mae);
        ss.push_back(e.report.s_alpha);
        baseline.push_back({{"seed", seed},
                            {"initial_loss", r.log.front().loss},
                            {"final_loss", r.log.back().loss},
                            {"train", metrics::to_json(e.report)}});
    }
    const double secs = seconds_since(t0);
    std::ofstream("desk_overfit_baseline.json") << baseline.dump(2) << '\n';
    const auto spread = [](const std::vector<double>& v) {
        return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
    };
    bool ok = secs < 600.0 && spread(maes) <= 0.03 && spread(ss) <= 0.03;
    for (std::size_t i = 0; i < maes.size(); ++i) ok = ok && maes[i] < 0.10 && ss[i] > 0.85;
    report(8, ok,
           fmt("seeds 0,1,2 x 200 steps: MAE %.4f/%.4f/%.4f (<0.10), S %.4f/%.4f/%.4f (>0.85), spreads %.4f/%.4f "
               "(<=0.03), %.0fs total",
               maes[0], maes[1], maes[2], ss[0], ss[1], ss[2], spread(maes), spread(ss), secs));
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) out.push_back(cell);
    return out;
}

void ablation() {
    RunConfig base = desk();
    base.epochs = 4;
    const auto train_set = resolve_train_set(base);
    const auto test_set = resolve_test_set(base);
    const AblationTable table =
        ablate(AblationGrid::parse("modules"), base, train_set, {{"train", train_set}, {"test", test_set}});
    bool grid_ok = table.rows.size() == 4;
    for (std::size_t i = 0; grid_ok && i < 4; ++i) grid_ok = table.rows[i].label == "M" + std::to_string(i + 1);

    // CSV and JSON parse back with the pinned column order.
    std::stringstream csv(table.to_csv());
    std::string header, line;
    std::getline(csv, header);
    const std::vector<std::string> cols{"S_alpha", "F_beta_w", "F_beta_m", "E_phi_m", "E_phi_x", "MAE"};
    const auto h = split(header);
    bool csv_ok = h.size() == 1 + 2 * cols.size() && h[0] == "variant";
    for (std::size_t d = 0; csv_ok && d < 2; ++d)
        for (std::size_t c = 0; c < cols.size(); ++c)
            csv_ok = csv_ok && h[1 + d * cols.size() + c] == table.datasets[d] + ":" + cols[c];
    int rows = 0;
    while (std::getline(csv, line) && !line.empty()) {
        const auto cells = split(line);
        csv_ok = csv_ok && cells.size() == h.size();
        for (std::size_t c = 1; csv_ok && c < cells.size(); ++c) std::stod(cells[c]);
        ++rows;
    }
    csv_ok = csv_ok && rows == 4;
    const auto j = nlohmann::json::parse(table.to_json().dump());
    bool json_ok = j["rows"].size() == 4;
    for (std::size_t i = 0; json_ok && i < 4; ++i)
        json_ok = j["rows"][i]["variant"] == table.rows[i].label &&
                  j["rows"][i]["metrics"]["test"]["MAE"].get<double>() == table.rows[i].reports[1].mae;
    const auto ordered = table.to_json()["rows"][0]["metrics"]["test"];
    std::vector<std::string> order;
    for (auto it = ordered.begin(); it != ordered.end(); ++it) order.push_back(it.key());
    json_ok = json_ok && std::equal(cols.begin(), cols.end(), order.begin());

    // alpha = 1 on the full model equals M2 evaluated from the same weights.
    RunConfig full = base;
    full.alpha = 1.0;
    const TrainResult r = train(full, train_set);
    const Evaluation e4 = evaluate(r.checkpoint, test_set);
    Checkpoint as_m2 = r.checkpoint;
    apply_variant(as_m2.config, "M2");
    const Evaluation e2 = evaluate(as_m2, test_set);
    bool identical = e4.predictions.size() == e2.predictions.size();
    for (std::size_t i = 0; identical && i < e4.predictions.size(); ++i)
        identical = e4.predictions[i].prob == e2.predictions[i].prob;

    // Layer grid rows differ only in k.
    const auto layers = expand_grid(AblationGrid::parse("layers"), base);
    bool only_k = layers.size() == 4;
    for (const auto& [label, cfg] : layers) {
        auto a = to_json(cfg), b = to_json(layers.front().second);
        a.erase("k");
        b.erase("k");
        only_k = only_k && a == b && cfg.k == std::stoi(label);
    }
    report(9, grid_ok && csv_ok && json_ok && identical && only_k,
           fmt("M1..M4 grid %s, CSV %s, JSON %s, M4(alpha=1)==M2 bit-identical %s, layer rows differ only in k %s",
               grid_ok ? "complete" : "incomplete", csv_ok ? "ok" : "bad", json_ok ? "ok" : "bad",
               identical ? "yes" : "no", only_k ? "yes" : "no"));
}

void determinism() {
    RunConfig cfg = desk();
    cfg.epochs = 5;
    cfg.box_jitter = 0.05;
    auto run = [&] {
        const auto data = resolve_train_set(cfg);
        const TrainResult r = train(cfg, data);
        const Evaluation e = evaluate(r.checkpoint, resolve_test_set(cfg));
        return std::tuple{log_to_csv(r.log), serialize(r.checkpoint), metrics::to_json(e.report).dump()};
    };
    const auto a = run();
    const auto b = run();
    const bool logs = std::get<0>(a) == std::get<0>(b);
    const bool ckpt = std::get<1>(a) == std::get<1>(b);
    const bool rep = std::get<2>(a) == std::get<2>(b);
    report(10, logs && ckpt && rep,
           fmt("two runs: logs %s, checkpoints %s, reports %s", logs ? "identical" : "differ",
               ckpt ? "identical" : "differ", rep ? "identical" : "differ"));
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    metric_oracles();
    distillation();
    haar();
    guided_filter();
    gradients();
    fusion_boundaries();
    frozen_split();
    desk_overfit();
    ablation();
    determinism();
    std::printf("%d criteria failed, %.0fs\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
