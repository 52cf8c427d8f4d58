#include <gtest/gtest.h>

#include <cmath>

#include "dsam/error.hpp"
#include "dsam/metrics.hpp"
#include "metric_oracle.hpp"
#include "testing.hpp"

using namespace dsam;
using namespace dsam::metrics;

namespace {

Tensor rotate90(const Tensor& t) {
    const int h = t.dim(1), w = t.dim(2);
    Tensor out({1, w, h}, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(0, c, h - 1 - r) = t.at(0, r, c);
    return out;
}

Tensor nondegenerate_mask(Tensor::Shape shape, nn::Rng& rng) {
    Tensor m = testkit::random_mask(shape, rng, 0.35);
    m[0] = 1.0;
    m[1] = 0.0;
    return m;
}

void expect_all_ones(const MetricReport& r) {
    EXPECT_EQ(r.mae, 0.0);
    EXPECT_EQ(r.s_alpha, 1.0);
    EXPECT_EQ(r.f_beta_w, 1.0);
    EXPECT_EQ(r.f_beta_m, 1.0);
    EXPECT_EQ(r.f_beta_mx, 1.0);
    EXPECT_EQ(r.e_phi_m, 1.0);
    EXPECT_EQ(r.e_phi_x, 1.0);
}

}  // namespace

TEST(Mae, Examples) {
    nn::Rng rng(1);
    const Tensor gt = nondegenerate_mask({1, 8, 8}, rng);
    EXPECT_EQ(mae(gt, gt), 0.0);
    EXPECT_EQ(mae(Tensor({1, 8, 8}, 0.5), gt), 0.5);
    const Tensor p = testkit::random_tensor({1, 8, 8}, rng, 0.0, 1.0);
    EXPECT_NEAR(mae(p, gt), oracle::mae(p, gt), 1e-12);
    EXPECT_THROW(mae(p, Tensor({1, 8, 7}, 0.0)), Error);
    EXPECT_THROW(mae(p, Tensor({1, 8, 8}, 0.3)), Error);
}

TEST(SMeasure, PerfectDegenerateAndOracle) {
    nn::Rng rng(2);
    const Tensor gt = nondegenerate_mask({1, 16, 16}, rng);
    EXPECT_EQ(s_measure(gt, gt), 1.0);
    const Tensor empty({1, 16, 16}, 0.0), full({1, 16, 16}, 1.0);
    const Tensor p = testkit::random_tensor({1, 16, 16}, rng, 0.0, 1.0);
    const double s_empty = s_measure(p, empty);
    EXPECT_NEAR(s_empty, 1.0 - p.mean(), 1e-15);
    EXPECT_GE(s_empty, 0.0);
    EXPECT_LE(s_empty, 1.0);
    EXPECT_EQ(s_measure(empty, empty), 1.0);
    EXPECT_NEAR(s_measure(p, full), p.mean(), 1e-15);
    for (int i = 0; i < 20; ++i) {
        const Tensor g = nondegenerate_mask({1, 16, 16}, rng);
        const Tensor q = testkit::random_tensor({1, 16, 16}, rng, 0.0, 1.0);
        EXPECT_NEAR(s_measure(q, g), oracle::s_measure(q, g), 1e-9);
    }
}

TEST(FMeasure, PerfectComplementAndOracle) {
    nn::Rng rng(3);
    const Tensor gt = nondegenerate_mask({1, 8, 8}, rng);
    const FMeasures perfect = f_measure_suite(gt, gt);
    EXPECT_EQ(perfect.weighted, 1.0);
    EXPECT_EQ(perfect.mean, 1.0);
    EXPECT_EQ(perfect.max, 1.0);

    // Every cut except "everything on" selects exactly the background.
    Tensor inv = gt;
    for (double& v : inv.storage()) v = 1.0 - v;
    const double u = gt.mean();
    const double all_fg = 1.3 * u / (0.3 * u + 1.0);
    EXPECT_NEAR(f_measure_suite(inv, gt).max, all_fg, 1e-12);
    EXPECT_NEAR(oracle::f_max(inv, gt), all_fg, 1e-12);

    for (int i = 0; i < 20; ++i) {
        const Tensor g = nondegenerate_mask({1, 8, 8}, rng);
        const Tensor q = testkit::random_tensor({1, 8, 8}, rng, 0.0, 1.0);
        const FMeasures f = f_measure_suite(q, g);
        EXPECT_NEAR(f.weighted, oracle::f_weighted(q, g), 1e-9);
        EXPECT_NEAR(f.mean, oracle::f_adaptive(q, g), 1e-9);
        EXPECT_NEAR(f.max, oracle::f_max(q, g), 1e-9);
    }
}

TEST(FMeasure, WeightedMatchesOracleOnSparseAndSymmetricMasks) {
    nn::Rng rng(14);
    for (int i = 0; i < 40; ++i) {
        const int h = 8 + i % 5 * 4, w = 30 - i % 4 * 5;
        Tensor g = testkit::random_mask({1, h, w}, rng, 0.01 + 0.01 * (i % 3));
        if (g.sum() == 0.0) g.at(0, h / 2, w / 3) = 1.0;
        const Tensor q = testkit::random_tensor({1, h, w}, rng, 0.0, 1.0);
        EXPECT_NEAR(f_measure_suite(q, g).weighted, oracle::f_weighted(q, g), 1e-9) << h << "x" << w;
    }
    // Two foreground pixels with a column of equidistant background between them.
    Tensor g({1, 7, 9}, 0.0);
    g.at(0, 3, 1) = 1.0;
    g.at(0, 3, 7) = 1.0;
    const Tensor q = testkit::random_tensor({1, 7, 9}, rng, 0.0, 1.0);
    EXPECT_NEAR(f_measure_suite(q, g).weighted, oracle::f_weighted(q, g), 1e-12);
}

TEST(FMeasure, EmptyGroundTruthIsZero) {
    nn::Rng rng(4);
    const FMeasures f = f_measure_suite(testkit::random_tensor({1, 8, 8}, rng, 0, 1), Tensor({1, 8, 8}, 0.0));
    EXPECT_EQ(f.weighted, 0.0);
    EXPECT_EQ(f.mean, 0.0);
    EXPECT_EQ(f.max, 0.0);
}

TEST(EMeasure, PerfectDegenerateAndOracle) {
    nn::Rng rng(5);
    const Tensor gt = nondegenerate_mask({1, 8, 8}, rng);
    const EMeasures e = e_measure_suite(gt, gt);
    EXPECT_EQ(e.mean, 1.0);
    EXPECT_EQ(e.max, 1.0);
    for (double v : {0.0, 1.0}) {
        const EMeasures c = e_measure_suite(Tensor({1, 8, 8}, v), Tensor({1, 8, 8}, v));
        EXPECT_EQ(c.mean, 1.0);
        EXPECT_EQ(c.max, 1.0);
    }
    for (int i = 0; i < 20; ++i) {
        const Tensor g = nondegenerate_mask({1, 8, 8}, rng);
        const Tensor q = testkit::random_tensor({1, 8, 8}, rng, 0.0, 1.0);
        const auto [m, x] = oracle::e_suite(q, g);
        const EMeasures got = e_measure_suite(q, g);
        EXPECT_NEAR(got.mean, m, 1e-9);
        EXPECT_NEAR(got.max, x, 1e-9);
    }
}

TEST(MetricProperties, OrderingRangesAndRotation) {
    nn::Rng rng(6);
    for (int i = 0; i < 40; ++i) {
        const Tensor g = i % 5 == 0 ? testkit::random_mask({1, 12, 9}, rng, 0.02) : nondegenerate_mask({1, 12, 9}, rng);
        const Tensor q = testkit::random_tensor({1, 12, 9}, rng, 0.0, 1.0);
        const MetricReport r = evaluate_sample(q, g);
        EXPECT_GE(r.f_beta_mx, r.f_beta_m);
        EXPECT_GE(r.e_phi_x, r.e_phi_m);
        for (double v : {r.s_alpha, r.f_beta_w, r.f_beta_m, r.f_beta_mx, r.e_phi_m, r.e_phi_x, r.mae}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        const MetricReport rot = evaluate_sample(rotate90(q), rotate90(g));
        EXPECT_NEAR(rot.mae, r.mae, 1e-12);
        EXPECT_NEAR(rot.f_beta_w, r.f_beta_w, 1e-12);
        EXPECT_NEAR(rot.f_beta_m, r.f_beta_m, 1e-12);
        EXPECT_NEAR(rot.f_beta_mx, r.f_beta_mx, 1e-12);
        EXPECT_NEAR(rot.e_phi_m, r.e_phi_m, 1e-12);
        EXPECT_NEAR(rot.e_phi_x, r.e_phi_x, 1e-12);
    }
}

TEST(MetricProperties, PerfectPredictionsScoreOne) {
    nn::Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        const Tensor g = nondegenerate_mask({1, 16, 16}, rng);
        expect_all_ones(evaluate_sample(g, g));
    }
}

TEST(Batch, AveragingContract) {
    nn::Rng rng(8);
    const Tensor g1 = nondegenerate_mask({1, 8, 8}, rng), g2 = nondegenerate_mask({1, 8, 8}, rng);
    const Tensor p1 = testkit::random_tensor({1, 8, 8}, rng, 0, 1), p2 = testkit::random_tensor({1, 8, 8}, rng, 0, 1);
    const MetricReport one = evaluate_sample(p1, g1);
    const std::vector<Tensor> single_p{p1}, single_g{g1};
    const MetricReport single = evaluate_batch(single_p, single_g);
    EXPECT_EQ(single.s_alpha, one.s_alpha);
    EXPECT_EQ(single.e_phi_m, one.e_phi_m);
    EXPECT_EQ(single.n_samples, 1);

    const std::vector<Tensor> dup_p{p1, p1, p1}, dup_g{g1, g1, g1};
    const MetricReport dup = evaluate_batch(dup_p, dup_g);
    EXPECT_NEAR(dup.s_alpha, one.s_alpha, 1e-15);
    EXPECT_NEAR(dup.f_beta_w, one.f_beta_w, 1e-15);
    EXPECT_NEAR(dup.mae, one.mae, 1e-15);

    const MetricReport two_ref = evaluate_sample(p2, g2);
    const std::vector<Tensor> two_p{p1, p2}, two_g{g1, g2};
    const MetricReport two = evaluate_batch(two_p, two_g);
    EXPECT_NEAR(two.s_alpha, (one.s_alpha + two_ref.s_alpha) / 2, 1e-15);
    EXPECT_NEAR(two.f_beta_mx, (one.f_beta_mx + two_ref.f_beta_mx) / 2, 1e-15);
    EXPECT_NEAR(two.e_phi_x, (one.e_phi_x + two_ref.e_phi_x) / 2, 1e-15);
    EXPECT_EQ(two.n_samples, 2);

    const std::vector<Tensor> short_g{g1};
    try {
        evaluate_batch(two_p, short_g);
        FAIL() << "expected BadBatch";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::BadBatch);
    }
}

TEST(Normalisation, MinMaxAndConstant) {
    const Tensor p({1, 1, 3}, std::vector<double>{0.2, 0.4, 0.6});
    const Tensor n = normalize_prediction(p);
    EXPECT_NEAR(n[0], 0.0, 1e-15);
    EXPECT_NEAR(n[1], 0.5, 1e-15);
    EXPECT_NEAR(n[2], 1.0, 1e-15);
    const Tensor c({1, 2, 2}, 0.3);
    EXPECT_EQ(normalize_prediction(c), c);
    EXPECT_EQ(normalize_prediction(p, Normalize::None), p);
}

TEST(Serialisation, ColumnOrderAndRoundTrip) {
    MetricReport r{0.8, 0.7, 0.75, 0.78, 0.9, 0.92, 0.05, 3};
    const auto j = to_json(r);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"S_alpha", "F_beta_w", "F_beta_m", "E_phi_m", "E_phi_x", "MAE",
                                              "F_beta_mx", "n_samples"}));
    const MetricReport back = report_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.e_phi_x, r.e_phi_x);
    EXPECT_EQ(back.n_samples, 3);
    EXPECT_EQ(csv_header(), "label,S_alpha,F_beta_w,F_beta_m,E_phi_m,E_phi_x,MAE,F_beta_mx,n_samples");
    EXPECT_EQ(csv_row("x", r), "x,0.800000,0.700000,0.750000,0.900000,0.920000,0.050000,0.780000,3");
}
