#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "dsam/nn.hpp"
#include "dsam/tensor.hpp"

namespace dsam::data {

/// Half-open pixel box: columns [x_min, x_max), rows [y_min, y_max).
struct Box {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    int width() const noexcept { return x_max - x_min; }
    int height() const noexcept { return y_max - y_min; }
    bool contains(int x, int y) const noexcept { return x >= x_min && x < x_max && y >= y_min && y < y_max; }
    /// Non-degenerate and inside a width x height image.
    bool valid_for(int width, int height) const noexcept {
        return x_min >= 0 && y_min >= 0 && x_min < x_max && y_min < y_max && x_max <= width && y_max <= height;
    }
    friend bool operator==(const Box&, const Box&) = default;
};

struct Sample {
    Tensor image;    ///< [3, H, W]; [0,1] as loaded, standardised after preprocess
    Tensor depth;    ///< [1, H, W] in [0,1]
    Tensor gt_mask;  ///< [1, H, W] in {0,1}
    Box box;
    std::string id;

    int height() const { return image.dim(1); }
    int width() const { return image.dim(2); }
};

enum class Split { Train, Test };

/// root/{Image,Depth,GT}/<id>.{png|jpg}
struct DatasetSpec {
    std::filesystem::path root;
    Split split = Split::Test;
};

/// Sorted sample ids. Throws MissingPair if any directory has an id the others lack.
std::vector<std::string> list_ids(const DatasetSpec& spec);
Sample load_sample(const DatasetSpec& spec, const std::string& id);
std::vector<Sample> load_dataset(const DatasetSpec& spec);

/// Writes image/depth/GT as 8-bit PNGs under root/{Image,Depth,GT}/<id>.png.
void save_sample(const std::filesystem::path& root, const Sample& sample);
void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);

/// Tight bounding box of the foreground. With jitter > 0 each side moves by a
/// uniform integer offset of at most jitter * side length, then the box is
/// clamped to the image and kept non-degenerate.
Box derive_box_prompt(const Tensor& gt_mask, double jitter = 0.0, nn::Rng* rng = nullptr);

struct Normalization {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> stddev{0.229, 0.224, 0.225};
    double clip_low_percentile = 1.0;
    double clip_high_percentile = 99.0;
};

/// Coarsest stride of the student pyramid; preprocess sizes must be multiples of it.
inline constexpr int kInputStride = 8;

/// Linear-interpolated percentile (q in [0,100]) of all values.
double percentile(std::span<const double> values, double q);

/// Resize to size x size (bilinear for image/depth, nearest for GT), clip the
/// image to its [p_low, p_high] percentile range, standardise each channel,
/// and rescale the box.
Sample preprocess(const Sample& sample, int size, const Normalization& norm = {}, int stride = kInputStride);

/// Deterministic synthetic RGB-D camouflage scenes: textured background, one
/// low-contrast blob, depth with a >= 0.2 foreground/background gap plus
/// N(0, 0.05) noise.
std::vector<Sample> synth_dataset(int n, std::uint64_t seed, int size);

struct SceneStats {
    double depth_gap;    ///< |mean depth(fg) - mean depth(bg)|
    double rgb_contrast; ///< max over channels of |mean rgb(fg) - mean rgb(bg)|
};
SceneStats scene_stats(const Sample& sample);

}  // namespace dsam::data
