#include <gtest/gtest.h>

#include <cmath>

#include "dsam/error.hpp"
#include "dsam/kernels.hpp"
#include "dsam/pdm.hpp"
#include "testing.hpp"

using namespace dsam;
using namespace dsam::pdm;

namespace {

FeatureMap fmap(const Tensor& t, int stride = 4, bool grad = false) { return {ag::Var(t, grad), stride}; }

double sum_squares(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return s;
}

}  // namespace

TEST(Bcm, ShapeZeroInputAndChannelCheck) {
    nn::ParameterStore store;
    nn::Rng rng(1);
    const BcmParams p = BcmParams::create(store, "bcm", 32, 32, rng);
    EXPECT_EQ(p.cp_up.out_channels(), 64);
    EXPECT_EQ(p.cp_down.out_channels(), 32);
    const FeatureMap out = bcm(p, fmap(testkit::random_tensor({32, 16, 16}, rng)), 16);
    EXPECT_EQ(out.data.shape(), (Tensor::Shape{32, 16, 16}));
    const FeatureMap zero = bcm(p, fmap(Tensor({32, 16, 16}, 0.0)), 16);
    EXPECT_EQ(zero.data.value().max(), 0.0);
    EXPECT_EQ(zero.data.value().min(), 0.0);
    EXPECT_THROW(bcm(p, fmap(Tensor({16, 16, 16}, 0.0)), 16), Error);
    // Resamples to the teacher grid.
    EXPECT_EQ(bcm(p, fmap(testkit::random_tensor({32, 8, 8}, rng), 8), 16).data.shape(), (Tensor::Shape{32, 16, 16}));
}

TEST(Bcm, GradientsOnSmallInput) {
    nn::ParameterStore store;
    nn::Rng rng(2);
    const BcmParams p = BcmParams::create(store, "bcm", 4, 3, rng);
    ag::Var x(testkit::random_tensor({4, 4, 4}, rng), true);
    auto f = [&] { return ag::mean(ag::square(bcm(p, {x, 4}, 4).data)); };
    EXPECT_EQ(testkit::check_gradient(f, x, testkit::sample_indices(64, 20, rng)).failures, 0);
    EXPECT_EQ(testkit::check_parameters(f, testkit::sample_parameters(store, "bcm", 20, rng)).failures, 0);
}

TEST(Cwd, IdentityShiftAndNonnegativity) {
    nn::Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor t = testkit::random_tensor({4, 5, 5}, rng, -3.0, 3.0);
        Tensor shifted = t;
        for (int c = 0; c < 4; ++c) {
            const double k = testkit::random_tensor({1}, rng, -5.0, 5.0)[0];
            for (int i = 0; i < 25; ++i) shifted[c * 25 + i] += k;
        }
        EXPECT_NEAR(cwd_loss(fmap(t), fmap(t), 4.0).value()[0], 0.0, 1e-14);
        EXPECT_NEAR(cwd_loss(fmap(t), fmap(shifted), 4.0).value()[0], 0.0, 1e-12);
        const Tensor s = testkit::random_tensor({4, 5, 5}, rng, -3.0, 3.0);
        EXPECT_GE(cwd_loss(fmap(t), fmap(s), 2.0).value()[0], 0.0);
    }
}

TEST(Cwd, PinnedTwoPointValue) {
    // p = (1/4, 3/4), q = (1/2, 1/2), T = 1.
    const Tensor teacher({1, 1, 2}, std::vector<double>{0.0, std::log(3.0)});
    const Tensor student({1, 1, 2}, std::vector<double>{0.0, 0.0});
    const double closed_form = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
    EXPECT_NEAR(closed_form, 0.13081203594113697, 1e-15);
    EXPECT_NEAR(cwd_loss(fmap(teacher), fmap(student), 1.0).value()[0], closed_form, 1e-10);
    // Temperature scales logits and multiplies by T^2.
    const Tensor t2({1, 1, 2}, std::vector<double>{0.0, 2.0 * std::log(3.0)});
    EXPECT_NEAR(cwd_loss(fmap(t2), fmap(student), 2.0).value()[0], 4.0 * closed_form, 1e-10);
}

TEST(Cwd, ErrorsAndStudentOnlyGradient) {
    nn::Rng rng(4);
    EXPECT_THROW(cwd_loss(fmap(Tensor({2, 4, 4}, 0.0)), fmap(Tensor({2, 4, 2}, 0.0)), 1.0), Error);
    EXPECT_THROW(cwd_loss(fmap(Tensor({2, 4, 4}, 0.0)), fmap(Tensor({2, 4, 4}, 0.0)), 0.0), Error);
    ag::Var t(testkit::random_tensor({3, 4, 4}, rng), true);
    ag::Var s(testkit::random_tensor({3, 4, 4}, rng), true);
    auto f = [&] { return cwd_loss({t, 4}, {s, 4}, 4.0); };
    EXPECT_EQ(testkit::check_gradient(f, s, testkit::sample_indices(48, 20, rng)).failures, 0);
    ag::backward(f());
    EXPECT_TRUE(t.grad().empty());
}

TEST(Haar, ParsevalAndReconstructionOnRandomMaps) {
    nn::Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = testkit::random_tensor({2, 8, 8}, rng);
        const auto b = kernels::haar_analysis(x);
        const double energy = sum_squares(b.ll) + sum_squares(b.lh) + sum_squares(b.hl) + sum_squares(b.hh);
        EXPECT_NEAR(energy, sum_squares(x), 1e-6);
        EXPECT_LE(max_abs_diff(kernels::haar_synthesis(b), x), 1e-6);
    }
}

TEST(HighFreq, ConstantInputGivesZeroBands) {
    const FeatureMap em_i = fmap(Tensor({32, 16, 16}, 0.7));
    const FeatureMap em_s = fmap(Tensor({32, 16, 16}, -1.3));
    const Tensor bands = highfreq_bands(em_i, em_s).value();
    EXPECT_EQ(bands.shape(), (Tensor::Shape{192, 16, 16}));
    for (double v : bands.values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(highfreq_bands(fmap(Tensor({2, 7, 7}, 0.0)), fmap(Tensor({2, 7, 7}, 0.0))), Error);
}

TEST(HighFreq, ProjectionShapeAndGradient) {
    nn::ParameterStore store;
    nn::Rng rng(6);
    const HighFreqParams p = HighFreqParams::create(store, "hf", 3 * (3 + 2), 4, rng);
    ag::Var em_i(testkit::random_tensor({3, 8, 8}, rng), true);
    ag::Var em_s(testkit::random_tensor({2, 4, 4}, rng), true);
    auto f = [&] { return ag::mean(ag::square(dwt_highfreq(p, {em_i, 4}, {em_s, 8}).data)); };
    EXPECT_EQ(dwt_highfreq(p, {em_i, 4}, {em_s, 8}).data.shape(), (Tensor::Shape{4, 4, 4}));
    EXPECT_EQ(testkit::check_gradient(f, em_i, testkit::sample_indices(192, 20, rng)).failures, 0);
    EXPECT_EQ(testkit::check_gradient(f, em_s, testkit::sample_indices(32, 20, rng)).failures, 0);
}

TEST(Pfm, ShapeZeroPathAndGradient) {
    nn::ParameterStore store;
    nn::Rng rng(7);
    const PfmParams p = PfmParams::create(store, "pfm", 8, rng);
    ag::Var tokens(testkit::random_tensor({2, 8}, rng), true);
    const FeatureMap hf = fmap(testkit::random_tensor({8, 6, 6}, rng));
    EXPECT_EQ(pfm(p, tokens, hf).data.shape(), (Tensor::Shape{8, 6, 6}));

    const FeatureMap zero = pfm(p, ag::Var(Tensor({2, 8}, 0.0)), fmap(Tensor({8, 6, 6}, 0.0)));
    EXPECT_EQ(zero.data.value().max(), 0.0);
    EXPECT_EQ(zero.data.value().min(), 0.0);
    EXPECT_THROW(pfm(p, tokens, fmap(Tensor({4, 6, 6}, 0.0))), Error);

    auto f = [&] { return ag::mean(pfm(p, tokens, hf).data); };
    EXPECT_EQ(testkit::check_gradient(f, tokens, testkit::sample_indices(16, 16, rng)).failures, 0);
}

TEST(PromptDeeperModule, EndToEndGradientOnParameterSubset) {
    nn::ParameterStore store;
    nn::Rng rng(8);
    PdmConfig cfg;
    cfg.embed_dim = 8;
    cfg.student_dim = 6;
    cfg.grid = 8;
    PromptDeeper pdm(store, cfg, rng);
    const FeatureMap em_t = fmap(testkit::random_tensor({8, 8, 8}, rng));
    const FeatureMap em_i = fmap(testkit::random_tensor({6, 8, 8}, rng));
    const ag::Var tokens(testkit::random_tensor({2, 8}, rng));
    auto f = [&] {
        const auto out = pdm.forward(em_t, em_i, tokens);
        return ag::add(out.loss_kd, ag::mean(ag::square(out.prompt_depth.data)));
    };
    const auto res = testkit::check_parameters(f, testkit::sample_parameters(store, "pdm.", 30, rng));
    EXPECT_EQ(res.failures, 0) << "worst ratio " << res.worst;
}
