#include <gtest/gtest.h>

#include <filesystem>
#include <opencv2/imgcodecs.hpp>

#include "dsam/data.hpp"
#include "dsam/error.hpp"
#include "dsam/kernels.hpp"
#include "testing.hpp"

using namespace dsam;
using namespace dsam::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("dsam_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_gray(const fs::path& path, const cv::Mat& m) {
    fs::create_directories(path.parent_path());
    ASSERT_TRUE(cv::imwrite(path.string(), m));
}

void write_triplet(const fs::path& root, const std::string& id, const cv::Mat& gt) {
    write_gray(root / "Image" / (id + ".png"), cv::Mat(gt.rows, gt.cols, CV_8UC3, cv::Scalar(10, 20, 30)));
    write_gray(root / "Depth" / (id + ".png"), cv::Mat(gt.rows, gt.cols, CV_8UC1, cv::Scalar(128)));
    write_gray(root / "GT" / (id + ".png"), gt);
}

Tensor mask_from(int h, int w, int r0, int r1, int c0, int c1) {
    Tensor m({1, h, w}, 0.0);
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) m.at(0, r, c) = 1.0;
    return m;
}

}  // namespace

TEST(LoadSample, AllWhiteGtGivesFullBox) {
    const fs::path root = scratch("white");
    write_triplet(root, "a", cv::Mat(12, 10, CV_8UC1, cv::Scalar(255)));
    const Sample s = load_sample({root, Split::Test}, "a");
    EXPECT_DOUBLE_EQ(s.gt_mask.sum(), 120.0);
    EXPECT_EQ(s.box, (Box{0, 0, 10, 12}));
    EXPECT_NEAR(s.image.at(0, 0, 0), 30 / 255.0, 1e-12);  // channel 0 is red
    EXPECT_NEAR(s.depth.at(0, 5, 5), 128 / 255.0, 1e-12);
}

TEST(LoadSample, SinglePixelGtBox) {
    const fs::path root = scratch("pixel");
    cv::Mat gt(10, 10, CV_8UC1, cv::Scalar(0));
    gt.at<unsigned char>(5, 3) = 255;  // row 5, column 3
    write_triplet(root, "p", gt);
    EXPECT_EQ(load_sample({root, Split::Test}, "p").box, (Box{3, 5, 4, 6}));
}

TEST(LoadSample, GtBinarisedAtHalf) {
    const fs::path root = scratch("half");
    cv::Mat gt(4, 4, CV_8UC1, cv::Scalar(127));
    gt.at<unsigned char>(0, 0) = 128;
    write_triplet(root, "h", gt);
    const Sample s = load_sample({root, Split::Test}, "h");
    EXPECT_EQ(s.gt_mask.sum(), 1.0);
}

TEST(LoadSample, EmptyGtAndMissingPairs) {
    const fs::path root = scratch("errors");
    write_triplet(root, "e", cv::Mat(4, 4, CV_8UC1, cv::Scalar(0)));
    try {
        load_sample({root, Split::Test}, "e");
        FAIL() << "expected EmptyMask";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptyMask);
    }
    write_gray(root / "Image" / "orphan.png", cv::Mat(4, 4, CV_8UC3, cv::Scalar(0, 0, 0)));
    try {
        list_ids({root, Split::Test});
        FAIL() << "expected MissingPair";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MissingPair);
    }
}

TEST(LoadSample, SyntheticRoundTripWithinQuantisation) {
    const fs::path root = scratch("roundtrip");
    const auto samples = synth_dataset(3, 11, 16);
    save_dataset(root, samples);
    const auto loaded = load_dataset({root, Split::Train});
    ASSERT_EQ(loaded.size(), samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(loaded[i].id, samples[i].id);
        EXPECT_LE(max_abs_diff(loaded[i].image, samples[i].image), 1.0 / 255.0);
        EXPECT_LE(max_abs_diff(loaded[i].depth, samples[i].depth), 1.0 / 255.0);
        EXPECT_EQ(loaded[i].gt_mask, samples[i].gt_mask);
        EXPECT_EQ(loaded[i].box, samples[i].box);
    }
}

TEST(Preprocess, IdentityResizeOnlyStandardises) {
    nn::Rng rng(3);
    Sample s;
    s.image = testkit::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    // Pin at least 2% of the values at each end so the percentile clip is a no-op.
    for (int i = 0; i < 40; ++i) {
        s.image[i] = 0.0;
        s.image[s.image.numel() - 1 - i] = 1.0;
    }
    s.depth = testkit::random_tensor({1, 16, 16}, rng, 0.0, 1.0);
    s.gt_mask = mask_from(16, 16, 2, 9, 3, 12);
    s.box = derive_box_prompt(s.gt_mask);
    const Normalization norm;
    const Sample out = preprocess(s, 16, norm);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                EXPECT_NEAR(out.image.at(c, y, x), (s.image.at(c, y, x) - norm.mean[c]) / norm.stddev[c], 1e-12);
    EXPECT_EQ(out.depth, s.depth);
    EXPECT_EQ(out.gt_mask, s.gt_mask);
    EXPECT_EQ(out.box, s.box);
}

TEST(Preprocess, ConstantImageStaysConstant) {
    Sample s;
    s.image = Tensor({3, 16, 16}, 0.4);
    s.depth = Tensor({1, 16, 16}, 0.5);
    s.gt_mask = mask_from(16, 16, 0, 4, 0, 4);
    s.box = derive_box_prompt(s.gt_mask);
    const Sample out = preprocess(s, 32);
    for (int c = 0; c < 3; ++c) {
        const double first = out.image.at(c, 0, 0);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) EXPECT_EQ(out.image.at(c, y, x), first);
    }
    EXPECT_EQ(out.box, (Box{0, 0, 8, 8}));
}

TEST(Preprocess, CheckerboardUpsampleMatchesBilinearFormula) {
    Sample s;
    s.image = Tensor({3, 8, 8}, 0.0);
    s.depth = Tensor({1, 8, 8}, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) s.depth.at(0, y, x) = (x + y) % 2;
    s.image = Tensor({3, 8, 8}, 0.5);
    s.gt_mask = mask_from(8, 8, 1, 3, 1, 3);
    s.box = derive_box_prompt(s.gt_mask);
    const Sample out = preprocess(s, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            const double sy = std::max(0.0, (i + 0.5) * 0.5 - 0.5), sx = std::max(0.0, (j + 0.5) * 0.5 - 0.5);
            const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
            const int y1 = std::min(y0 + 1, 7), x1 = std::min(x0 + 1, 7);
            const double fy = sy - y0, fx = sx - x0;
            auto v = [&](int y, int x) { return static_cast<double>((x + y) % 2); };
            const double want = (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1));
            EXPECT_LT(std::abs(out.depth.at(0, i, j) - want), 1e-6);
        }
    for (double v : out.gt_mask.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Preprocess, RejectsSizesOffTheStride) {
    Sample s;
    s.image = Tensor({3, 16, 16}, 0.0);
    s.depth = Tensor({1, 16, 16}, 0.0);
    s.gt_mask = mask_from(16, 16, 0, 2, 0, 2);
    try {
        preprocess(s, 20);
        FAIL() << "expected BadSize";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::BadSize);
    }
}

TEST(BoxPrompt, TightBoxes) {
    EXPECT_EQ(derive_box_prompt(Tensor({1, 7, 9}, 1.0)), (Box{0, 0, 9, 7}));
    EXPECT_EQ(derive_box_prompt(mask_from(8, 8, 2, 6, 1, 4)), (Box{1, 2, 4, 6}));
    EXPECT_THROW(derive_box_prompt(Tensor({1, 4, 4}, 0.0)), Error);
}

TEST(BoxPrompt, MinimalBoxByBruteForce) {
    nn::Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor m = testkit::random_mask({1, 12, 16}, rng, 0.05);
        if (m.sum() == 0.0) m.at(0, 4, 4) = 1.0;
        const Box b = derive_box_prompt(m);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 16; ++x)
                if (m.at(0, y, x) == 1.0) {
                    EXPECT_TRUE(b.contains(x, y));
                }
        // Shrinking any side drops a foreground pixel.
        const Box shrunk[4] = {{b.x_min + 1, b.y_min, b.x_max, b.y_max},
                               {b.x_min, b.y_min + 1, b.x_max, b.y_max},
                               {b.x_min, b.y_min, b.x_max - 1, b.y_max},
                               {b.x_min, b.y_min, b.x_max, b.y_max - 1}};
        for (const Box& s : shrunk) {
            bool loses = false;
            for (int y = 0; y < 12; ++y)
                for (int x = 0; x < 16; ++x)
                    if (m.at(0, y, x) == 1.0 && !s.contains(x, y)) loses = true;
            EXPECT_TRUE(loses);
        }
    }
}

TEST(BoxPrompt, JitterBoundMonteCarlo) {
    const Tensor m = mask_from(20, 20, 5, 15, 5, 15);  // 10 x 10 object
    const Box tight = derive_box_prompt(m);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        nn::Rng rng(seed);
        const Box b = derive_box_prompt(m, 0.1, &rng);
        EXPECT_LE(std::abs(b.x_min - tight.x_min), 1);
        EXPECT_LE(std::abs(b.y_min - tight.y_min), 1);
        EXPECT_LE(std::abs(b.x_max - tight.x_max), 1);
        EXPECT_LE(std::abs(b.y_max - tight.y_max), 1);
        double covered = 0.0;
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x)
                if (m.at(0, y, x) == 1.0 && b.contains(x, y)) covered += 1.0;
        EXPECT_GE(covered / m.sum(), 0.64);
    }
}

TEST(Synth, DeterministicAndCamouflaged) {
    const auto a = synth_dataset(8, 0, 64);
    const auto b = synth_dataset(8, 0, 64);
    ASSERT_EQ(a.size(), 8u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].depth, b[i].depth);
        EXPECT_EQ(a[i].gt_mask, b[i].gt_mask);
        const SceneStats st = scene_stats(a[i]);
        EXPECT_GE(st.depth_gap, 0.2) << a[i].id;
        EXPECT_LT(st.rgb_contrast, 0.15) << a[i].id;
        EXPECT_TRUE(a[i].box.valid_for(64, 64));
    }
    EXPECT_NE(synth_dataset(1, 1, 64)[0].image, a[0].image);
}
