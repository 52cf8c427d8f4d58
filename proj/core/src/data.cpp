#include "dsam/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <set>

#include "dsam/error.hpp"
#include "dsam/kernels.hpp"

namespace dsam::data {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 3> kSubdirs{"Image", "Depth", "GT"};

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> scan(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(Errc::MissingPair, "missing directory " + dir.string());
    std::map<std::string, fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
        files.emplace(entry.path().stem().string(), entry.path());
    }
    return files;
}

fs::path find_file(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG"}) {
        fs::path p = dir / (id + ext);
        if (fs::is_regular_file(p)) return p;
    }
    fail(Errc::MissingPair, "no file for id '" + id + "' in " + dir.string());
}

cv::Mat read_8bit(const fs::path& path, int flags) {
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) fail(Errc::Io, "cannot decode " + path.string());
    if (m.depth() != CV_8U) fail(Errc::Io, path.string() + " is not an 8-bit image");
    return m;
}

Tensor gray_to_tensor(const cv::Mat& m) {
    Tensor t({1, m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) t.at(0, y, x) = m.at<std::uint8_t>(y, x) / 255.0;
    return t;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

cv::Mat tensor_to_gray(const Tensor& t) {
    cv::Mat m(t.dim(1), t.dim(2), CV_8UC1);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) m.at<std::uint8_t>(y, x) = to_byte(t.at(0, y, x));
    return m;
}

void write_png(const fs::path& path, const cv::Mat& m) {
    fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) fail(Errc::Io, "cannot write " + path.string());
}

}  // namespace

std::vector<std::string> list_ids(const DatasetSpec& spec) {
    const auto images = scan(spec.root / kSubdirs[0]);
    const auto depths = scan(spec.root / kSubdirs[1]);
    const auto gts = scan(spec.root / kSubdirs[2]);
    std::set<std::string> all;
    for (const auto* m : {&images, &depths, &gts})
        for (const auto& [id, _] : *m) all.insert(id);
    for (const auto& id : all) {
        if (!images.count(id) || !depths.count(id) || !gts.count(id))
            fail(Errc::MissingPair, "id '" + id + "' lacks an Image/Depth/GT counterpart under " + spec.root.string());
    }
    return {all.begin(), all.end()};
}

Sample load_sample(const DatasetSpec& spec, const std::string& id) {
    const cv::Mat bgr = read_8bit(find_file(spec.root / "Image", id), cv::IMREAD_COLOR);
    const cv::Mat depth = read_8bit(find_file(spec.root / "Depth", id), cv::IMREAD_GRAYSCALE);
    const cv::Mat gt = read_8bit(find_file(spec.root / "GT", id), cv::IMREAD_GRAYSCALE);
    if (depth.size() != bgr.size() || gt.size() != bgr.size())
        fail(Errc::BadShape, "image/depth/GT sizes differ for id '" + id + "'");

    Sample s;
    s.id = id;
    s.image = Tensor({3, bgr.rows, bgr.cols});
    for (int y = 0; y < bgr.rows; ++y) {
        for (int x = 0; x < bgr.cols; ++x) {
            const auto px = bgr.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = px[2 - c] / 255.0;
        }
    }
    s.depth = gray_to_tensor(depth);
    s.gt_mask = gray_to_tensor(gt);
    for (auto& v : s.gt_mask.values()) v = v >= 0.5 ? 1.0 : 0.0;
    s.box = derive_box_prompt(s.gt_mask);
    return s;
}

std::vector<Sample> load_dataset(const DatasetSpec& spec) {
    std::vector<Sample> out;
    for (const auto& id : list_ids(spec)) out.push_back(load_sample(spec, id));
    return out;
}

void save_sample(const fs::path& root, const Sample& s) {
    cv::Mat bgr(s.height(), s.width(), CV_8UC3);
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x)
            bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(to_byte(s.image.at(2, y, x)), to_byte(s.image.at(1, y, x)),
                                                to_byte(s.image.at(0, y, x)));
    write_png(root / "Image" / (s.id + ".png"), bgr);
    write_png(root / "Depth" / (s.id + ".png"), tensor_to_gray(s.depth));
    write_png(root / "GT" / (s.id + ".png"), tensor_to_gray(s.gt_mask));
}

void save_dataset(const fs::path& root, const std::vector<Sample>& samples) {
    for (const auto& s : samples) save_sample(root, s);
}

Box derive_box_prompt(const Tensor& gt, double jitter, nn::Rng* rng) {
    if (gt.rank() != 3 || gt.dim(0) != 1) fail(Errc::BadShape, "gt mask must be [1,H,W], got " + gt.shape_str());
    const int h = gt.dim(1), w = gt.dim(2);
    Box b{w, h, -1, -1};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (gt.at(0, y, x) < 0.5) continue;
            b.x_min = std::min(b.x_min, x);
            b.y_min = std::min(b.y_min, y);
            b.x_max = std::max(b.x_max, x + 1);
            b.y_max = std::max(b.y_max, y + 1);
        }
    }
    if (b.x_max < 0) fail(Errc::EmptyMask, "ground-truth mask has no foreground pixel");
    if (jitter <= 0.0) return b;
    if (!rng) fail(Errc::BadConfig, "box jitter requires a random generator");

    auto offset = [&](int side) {
        const int bound = static_cast<int>(std::floor(jitter * side));
        if (bound <= 0) return 0;
        std::uniform_int_distribution<int> d(-bound, bound);
        return d(*rng);
    };
    const int bw = b.width(), bh = b.height();
    Box j{b.x_min + offset(bw), b.y_min + offset(bh), b.x_max + offset(bw), b.y_max + offset(bh)};
    j.x_min = std::clamp(j.x_min, 0, w - 1);
    j.y_min = std::clamp(j.y_min, 0, h - 1);
    j.x_max = std::clamp(j.x_max, j.x_min + 1, w);
    j.y_max = std::clamp(j.y_max, j.y_min + 1, h);
    return j;
}

double percentile(std::span<const double> values, double q) {
    if (values.empty()) return 0.0;
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

Sample preprocess(const Sample& s, int size, const Normalization& norm, int stride) {
    if (size < 16 || stride < 1 || size % stride != 0)
        fail(Errc::BadSize, "preprocess size " + std::to_string(size) + " must be >= 16 and divisible by " +
                                std::to_string(stride));
    Sample out;
    out.id = s.id;
    out.image = kernels::resize_bilinear(s.image, size, size);
    out.depth = kernels::resize_bilinear(s.depth, size, size);
    out.gt_mask = kernels::resize_nearest(s.gt_mask, size, size);
    for (auto& v : out.gt_mask.values()) v = v >= 0.5 ? 1.0 : 0.0;

    const double lo = percentile(out.image.values(), norm.clip_low_percentile);
    const double hi = percentile(out.image.values(), norm.clip_high_percentile);
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            double& v = out.image[c * plane + i];
            v = (std::clamp(v, lo, hi) - norm.mean[static_cast<std::size_t>(c)]) / norm.stddev[static_cast<std::size_t>(c)];
        }
    }

    const double sx = static_cast<double>(size) / s.width();
    const double sy = static_cast<double>(size) / s.height();
    Box b{static_cast<int>(std::floor(s.box.x_min * sx)), static_cast<int>(std::floor(s.box.y_min * sy)),
          static_cast<int>(std::ceil(s.box.x_max * sx)), static_cast<int>(std::ceil(s.box.y_max * sy))};
    b.x_min = std::clamp(b.x_min, 0, size - 1);
    b.y_min = std::clamp(b.y_min, 0, size - 1);
    b.x_max = std::clamp(b.x_max, b.x_min + 1, size);
    b.y_max = std::clamp(b.y_max, b.y_min + 1, size);
    out.box = b;
    return out;
}

namespace {

struct Wave {
    double amp, fx, fy, phase;
};

std::vector<Wave> random_texture(nn::Rng& rng, int count) {
    std::uniform_real_distribution<double> amp(0.03, 0.07), freq(1.0, 6.0), phase(0.0, 2.0 * std::numbers::pi);
    std::vector<Wave> waves;
    for (int i = 0; i < count; ++i) waves.push_back({amp(rng), freq(rng), freq(rng), phase(rng)});
    return waves;
}

double texture_at(const std::vector<Wave>& waves, double u, double v) {
    double t = 0.0;
    for (const auto& w : waves) t += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
    return t;
}

}  // namespace

std::vector<Sample> synth_dataset(int n, std::uint64_t seed, int size) {
    if (n < 1) fail(Errc::BadConfig, "synth_dataset needs n >= 1");
    if (size < 8) fail(Errc::BadSize, "synth_dataset size must be >= 8");
    nn::Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };
    std::normal_distribution<double> depth_noise(0.0, 0.05), pixel_noise(0.0, 0.015);

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Sample s;
        char id[32];
        std::snprintf(id, sizeof id, "synth_%04d", i);
        s.id = id;
        s.image = Tensor({3, size, size});
        s.depth = Tensor({1, size, size});
        s.gt_mask = Tensor({1, size, size});

        std::array<double, 3> base{}, shift{};
        for (int c = 0; c < 3; ++c) {
            base[static_cast<std::size_t>(c)] = uniform(0.3, 0.7);
            shift[static_cast<std::size_t>(c)] = uniform(-0.07, 0.07);
        }
        const auto bg_tex = random_texture(rng, 3);
        const auto fg_tex = random_texture(rng, 3);
        const double cx = uniform(0.35, 0.65) * size, cy = uniform(0.35, 0.65) * size;
        const double rx = uniform(0.15, 0.27) * size, ry = uniform(0.15, 0.27) * size;
        const double rot = uniform(0.0, std::numbers::pi);
        const double lobe_phase = uniform(0.0, 2.0 * std::numbers::pi);
        const double bg_depth = uniform(0.7, 0.8);
        const double gap = uniform(0.3, 0.4);
        const double tilt = uniform(-0.08, 0.08);

        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double u = (x + 0.5) / size, v = (y + 0.5) / size;
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double px = dx * std::cos(rot) + dy * std::sin(rot);
                const double py = -dx * std::sin(rot) + dy * std::cos(rot);
                const double rho = std::sqrt((px / rx) * (px / rx) + (py / ry) * (py / ry));
                const double theta = std::atan2(py, px);
                const bool fg = rho < 1.0 + 0.12 * std::sin(3.0 * theta + lobe_phase);
                s.gt_mask.at(0, y, x) = fg ? 1.0 : 0.0;

                const double tex = fg ? texture_at(fg_tex, u, v) : texture_at(bg_tex, u, v);
                for (int c = 0; c < 3; ++c) {
                    const double colour =
                        base[static_cast<std::size_t>(c)] + (fg ? shift[static_cast<std::size_t>(c)] : 0.0);
                    s.image.at(c, y, x) = std::clamp(colour + tex + pixel_noise(rng), 0.0, 1.0);
                }
                double d = bg_depth + tilt * (v - 0.5);
                if (fg) d -= gap + 0.05 * std::max(0.0, 1.0 - rho * rho);
                s.depth.at(0, y, x) = std::clamp(d + depth_noise(rng), 0.0, 1.0);
            }
        }
        s.box = derive_box_prompt(s.gt_mask);
        out.push_back(std::move(s));
    }
    return out;
}

SceneStats scene_stats(const Sample& s) {
    double dfg = 0, dbg = 0, nfg = 0, nbg = 0;
    std::array<double, 3> cfg{}, cbg{};
    for (int y = 0; y < s.height(); ++y) {
        for (int x = 0; x < s.width(); ++x) {
            const bool fg = s.gt_mask.at(0, y, x) > 0.5;
            (fg ? dfg : dbg) += s.depth.at(0, y, x);
            (fg ? nfg : nbg) += 1.0;
            for (int c = 0; c < 3; ++c) (fg ? cfg : cbg)[static_cast<std::size_t>(c)] += s.image.at(c, y, x);
        }
    }
    if (nfg == 0 || nbg == 0) fail(Errc::EmptyMask, "scene_stats needs both foreground and background");
    SceneStats st{std::abs(dfg / nfg - dbg / nbg), 0.0};
    for (std::size_t c = 0; c < 3; ++c) st.rgb_contrast = std::max(st.rgb_contrast, std::abs(cfg[c] / nfg - cbg[c] / nbg));
    return st;
}

}  // namespace dsam::data
