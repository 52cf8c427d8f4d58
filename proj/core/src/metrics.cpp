#include "dsam/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "dsam/error.hpp"

namespace dsam::metrics {
namespace {

struct Plane {
    int h = 0;
    int w = 0;
};

Plane plane_of(const Tensor& t) {
    if (t.rank() == 2) return {t.dim(0), t.dim(1)};
    if (t.rank() == 3 && t.dim(0) == 1) return {t.dim(1), t.dim(2)};
    fail(Errc::BadShape, "metrics expect [H,W] or [1,H,W], got " + t.shape_str());
}

Plane check_pair(const Tensor& pred, const Tensor& gt) {
    Plane p = plane_of(pred);
    Plane g = plane_of(gt);
    if (p.h != g.h || p.w != g.w || p.h == 0 || p.w == 0)
        fail(Errc::BadShape, "pred " + pred.shape_str() + " vs gt " + gt.shape_str());
    for (double v : gt.values())
        if (v != 0.0 && v != 1.0) fail(Errc::BadMask, "ground truth must be binary");
    return p;
}

// S-measure pieces.

double object_score(const std::vector<double>& vals) {
    if (vals.empty()) return 0.0;
    double n = static_cast<double>(vals.size());
    double x = 0.0;
    for (double v : vals) x += v;
    x /= n;
    double sigma = 0.0;
    if (vals.size() > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - x) * (v - x);
        sigma = std::sqrt(ss / (n - 1.0));
    }
    return 2.0 * x / (x * x + 1.0 + sigma);
}

double s_object(const Tensor& pred, const Tensor& gt, double u) {
    std::vector<double> fg, bg;
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        if (gt[i] == 1.0)
            fg.push_back(pred[i]);
        else
            bg.push_back(1.0 - pred[i]);
    }
    return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

// Quadrant SSIM; perfect agreement yields alpha == beta exactly.
double ssim_block(const Tensor& pred, const Tensor& gt, int w, int r0, int r1, int c0, int c1) {
    double n = static_cast<double>((r1 - r0) * (c1 - c0));
    double x = 0.0, y = 0.0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            x += pred[r * w + c];
            y += gt[r * w + c];
        }
    x /= n;
    y /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            double dx = pred[r * w + c] - x;
            double dy = gt[r * w + c] - y;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    if (n > 1.0) {
        sxx /= n - 1.0;
        syy /= n - 1.0;
        sxy /= n - 1.0;
    } else {
        sxx = syy = sxy = 0.0;
    }
    double alpha = 4.0 * x * y * sxy;
    double beta = (x * x + y * y) * (sxx + syy);
    if (alpha != 0.0) return beta != 0.0 ? alpha / beta : 0.0;
    return beta == 0.0 ? 1.0 : 0.0;
}

double s_region(const Tensor& pred, const Tensor& gt, Plane p) {
    double total = 0.0, sr = 0.0, sc = 0.0;
    for (int r = 0; r < p.h; ++r)
        for (int c = 0; c < p.w; ++c) {
            double g = gt[r * p.w + c];
            total += g;
            sr += g * (r + 1);
            sc += g * (c + 1);
        }
    // 1-based centroid: the top-left block spans rows [0, Y) and cols [0, X).
    int X = static_cast<int>(std::round(sc / total));
    int Y = static_cast<int>(std::round(sr / total));
    const std::array<std::array<int, 4>, 4> blocks{{{0, Y, 0, X}, {0, Y, X, p.w}, {Y, p.h, 0, X}, {Y, p.h, X, p.w}}};
    double area = static_cast<double>(p.h) * p.w;
    double score = 0.0;
    for (const auto& b : blocks) {
        int cells = (b[1] - b[0]) * (b[3] - b[2]);
        if (cells <= 0) continue;
        score += cells * ssim_block(pred, gt, p.w, b[0], b[1], b[2], b[3]);
    }
    return score / area;
}

// F-measure pieces.

double f_score(double tp, double fp, double fn) {
    double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    double denom = kBetaSquared * precision + recall;
    return denom > 0.0 ? (1.0 + kBetaSquared) * precision * recall / denom : 0.0;
}

std::vector<double> gaussian_7x7() {
    constexpr int r = 3;
    constexpr double sigma = 5.0;
    std::vector<double> k(49);
    double s = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k[(dy + r) * 7 + (dx + r)] = v;
            s += v;
        }
    for (double& v : k) v /= s;
    return k;
}

long isqrt(long v) {
    long r = static_cast<long>(std::sqrt(static_cast<double>(v)));
    while (r * r > v) --r;
    while ((r + 1) * (r + 1) <= v) ++r;
    return r;
}

// Exact squared Euclidean distance to the nearest foreground pixel: separable
// lower-envelope transform, columns then rows, in integer arithmetic.
void envelope_1d(const std::vector<long>& f, std::vector<long>& out, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr long kInf = std::numeric_limits<long>::max() / 4;
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] >= kInf) continue;
        while (k >= 0) {
            const int pv = v[k];
            const double s = (static_cast<double>(f[q] + static_cast<long>(q) * q) -
                              static_cast<double>(f[pv] + static_cast<long>(pv) * pv)) /
                             (2.0 * (q - pv));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -std::numeric_limits<double>::infinity()
                      : (static_cast<double>(f[q] + static_cast<long>(q) * q) -
                         static_cast<double>(f[v[k - 1]] + static_cast<long>(v[k - 1]) * v[k - 1])) /
                            (2.0 * (q - v[k - 1]));
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (j < k && z[j + 1] < q) ++j;
        const long d = q - v[j];
        out[q] = d * d + f[v[j]];
    }
}

std::vector<long> squared_distance_to_foreground(const Tensor& gt, Plane p) {
    constexpr long kInf = std::numeric_limits<long>::max() / 4;
    std::vector<long> d(static_cast<std::size_t>(p.h) * p.w);
    const int longest = std::max(p.h, p.w);
    std::vector<long> f(longest), out(longest);
    std::vector<int> v(longest);
    std::vector<double> z(longest);
    f.resize(p.h);
    out.resize(p.h);
    for (int c = 0; c < p.w; ++c) {
        for (int r = 0; r < p.h; ++r) f[r] = gt[r * p.w + c] == 1.0 ? 0 : kInf;
        envelope_1d(f, out, v, z);
        for (int r = 0; r < p.h; ++r) d[r * p.w + c] = out[r];
    }
    f.resize(p.w);
    out.resize(p.w);
    for (int r = 0; r < p.h; ++r) {
        for (int c = 0; c < p.w; ++c) f[c] = d[r * p.w + c];
        envelope_1d(f, out, v, z);
        for (int c = 0; c < p.w; ++c) d[r * p.w + c] = out[c];
    }
    return d;
}

double weighted_f(const Tensor& pred, const Tensor& gt, Plane p) {
    const int n = p.h * p.w;
    std::vector<int> fg;
    for (int i = 0; i < n; ++i)
        if (gt[i] == 1.0) fg.push_back(i);
    if (fg.empty()) return 0.0;

    std::vector<double> err(n), et(n), dst(n, 0.0);
    for (int i = 0; i < n; ++i) err[i] = std::abs(pred[i] - gt[i]);
    // Background pixels take the error of their nearest foreground pixel; ties
    // average, which keeps the measure equivariant under grid symmetries.
    const std::vector<long> d2 = squared_distance_to_foreground(gt, p);
    for (int i = 0; i < n; ++i) {
        if (gt[i] == 1.0) {
            et[i] = err[i];
            continue;
        }
        const int r = i / p.w, c = i % p.w;
        const long best = d2[i];
        const long reach = isqrt(best);
        double acc = 0.0;
        int ties = 0;
        auto visit = [&](long rr, long cc) {
            if (rr < 0 || rr >= p.h || cc < 0 || cc >= p.w) return;
            const long j = rr * p.w + cc;
            if (gt[j] != 1.0) return;
            acc += err[j];
            ++ties;
        };
        for (long dy = -reach; dy <= reach; ++dy) {
            const long rem = best - dy * dy;
            const long dx = isqrt(rem);
            if (dx * dx != rem) continue;
            visit(r + dy, c - dx);
            if (dx != 0) visit(r + dy, c + dx);
        }
        et[i] = acc / ties;
        dst[i] = std::sqrt(static_cast<double>(best));
    }

    static const std::vector<double> kernel = gaussian_7x7();
    std::vector<double> ea(n, 0.0);
    for (int r = 0; r < p.h; ++r)
        for (int c = 0; c < p.w; ++c) {
            double s = 0.0;
            for (int dy = -3; dy <= 3; ++dy) {
                int rr = r + dy;
                if (rr < 0 || rr >= p.h) continue;
                for (int dx = -3; dx <= 3; ++dx) {
                    int cc = c + dx;
                    if (cc < 0 || cc >= p.w) continue;
                    s += kernel[(dy + 3) * 7 + (dx + 3)] * et[rr * p.w + cc];
                }
            }
            ea[r * p.w + c] = s;
        }

    double tpw = static_cast<double>(fg.size());
    double fpw = 0.0, fg_err = 0.0;
    const double decay = std::log(0.5) / 5.0;
    for (int i = 0; i < n; ++i) {
        if (gt[i] == 1.0) {
            double e = std::min(err[i], ea[i]);
            fg_err += e;
        } else {
            fpw += err[i] * (2.0 - std::exp(decay * dst[i]));
        }
    }
    tpw -= fg_err;
    double recall = 1.0 - fg_err / static_cast<double>(fg.size());
    double precision = tpw + fpw > 0.0 ? tpw / (tpw + fpw) : 0.0;
    double denom = recall + precision;
    return denom > 0.0 ? 2.0 * recall * precision / denom : 0.0;
}

}  // namespace

double mae(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - gt[i]);
    return s / static_cast<double>(pred.numel());
}

double s_measure(const Tensor& pred, const Tensor& gt) {
    Plane p = check_pair(pred, gt);
    double u = gt.mean();
    if (u == 0.0) return 1.0 - pred.mean();
    if (u == 1.0) return pred.mean();
    double q = 0.5 * s_object(pred, gt, u) + 0.5 * s_region(pred, gt, p);
    return std::max(q, 0.0);
}

FMeasures f_measure_suite(const Tensor& pred, const Tensor& gt) {
    Plane p = check_pair(pred, gt);
    FMeasures out;
    double positives = gt.sum();
    if (positives == 0.0) return out;
    out.weighted = weighted_f(pred, gt, p);

    // Cumulative histograms over 8-bit levels give every cut "level >= i".
    std::array<double, 257> fg_at{}, bg_at{};
    double level_sum = 0.0;
    std::vector<int> levels(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        int l = static_cast<int>(std::lround(std::clamp(pred[i], 0.0, 1.0) * 255.0));
        levels[i] = l;
        level_sum += l;
        (gt[i] == 1.0 ? fg_at : bg_at)[l] += 1.0;
    }
    for (int l = 254; l >= 0; --l) {
        fg_at[l] += fg_at[l + 1];
        bg_at[l] += bg_at[l + 1];
    }
    auto f_at = [&](int cut) { return f_score(fg_at[cut], bg_at[cut], positives - fg_at[cut]); };
    for (int i = 0; i < kThresholds; ++i) out.max = std::max(out.max, f_at(i));

    double adaptive = std::min(2.0 * level_sum / static_cast<double>(levels.size()), 255.0);
    out.mean = f_at(static_cast<int>(std::ceil(adaptive)));
    return out;
}

EMeasures e_measure_suite(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const std::size_t n = pred.numel();
    const double nd = static_cast<double>(n);
    const double u = gt.mean();
    EMeasures out;
    std::vector<double> bin(n);
    for (int i = 0; i < kThresholds; ++i) {
        double t = (i + 0.5) / kThresholds;
        double bmean = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            bin[k] = pred[k] >= t ? 1.0 : 0.0;
            bmean += bin[k];
        }
        bmean /= nd;
        double score = 0.0;
        if (u == 0.0) {
            for (std::size_t k = 0; k < n; ++k) score += 1.0 - bin[k];
        } else if (u == 1.0) {
            for (std::size_t k = 0; k < n; ++k) score += bin[k];
        } else {
            for (std::size_t k = 0; k < n; ++k) {
                double a = bin[k] - bmean;
                double b = gt[k] - u;
                double denom = a * a + b * b;
                double align = denom > 0.0 ? 2.0 * a * b / denom : 0.0;
                score += (align + 1.0) * (align + 1.0) / 4.0;
            }
        }
        score /= nd;
        out.mean += score;
        out.max = std::max(out.max, score);
    }
    out.mean /= kThresholds;
    return out;
}

MetricReport evaluate_sample(const Tensor& pred, const Tensor& gt) {
    MetricReport r;
    r.mae = mae(pred, gt);
    r.s_alpha = s_measure(pred, gt);
    FMeasures f = f_measure_suite(pred, gt);
    r.f_beta_w = f.weighted;
    r.f_beta_m = f.mean;
    r.f_beta_mx = f.max;
    EMeasures e = e_measure_suite(pred, gt);
    r.e_phi_m = e.mean;
    r.e_phi_x = e.max;
    r.n_samples = 1;
    return r;
}

MetricReport evaluate_batch(std::span<const Tensor> preds, std::span<const Tensor> gts) {
    if (preds.size() != gts.size())
        fail(Errc::BadBatch, std::to_string(preds.size()) + " predictions for " + std::to_string(gts.size()) +
                                 " ground truths");
    MetricReport acc;
    if (preds.empty()) return acc;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        MetricReport r = evaluate_sample(preds[i], gts[i]);
        acc.s_alpha += r.s_alpha;
        acc.f_beta_w += r.f_beta_w;
        acc.f_beta_m += r.f_beta_m;
        acc.f_beta_mx += r.f_beta_mx;
        acc.e_phi_m += r.e_phi_m;
        acc.e_phi_x += r.e_phi_x;
        acc.mae += r.mae;
    }
    double n = static_cast<double>(preds.size());
    acc.s_alpha /= n;
    acc.f_beta_w /= n;
    acc.f_beta_m /= n;
    acc.f_beta_mx /= n;
    acc.e_phi_m /= n;
    acc.e_phi_x /= n;
    acc.mae /= n;
    acc.n_samples = static_cast<int>(preds.size());
    return acc;
}

Tensor normalize_prediction(const Tensor& prob, Normalize mode) {
    if (mode == Normalize::None || prob.empty()) return prob;
    double lo = prob.min(), hi = prob.max();
    if (hi <= lo) return prob;
    Tensor out = prob;
    for (double& v : out.storage()) v = (v - lo) / (hi - lo);
    return out;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
    return nlohmann::ordered_json{{"S_alpha", r.s_alpha}, {"F_beta_w", r.f_beta_w}, {"F_beta_m", r.f_beta_m},
                                  {"E_phi_m", r.e_phi_m}, {"E_phi_x", r.e_phi_x},   {"MAE", r.mae},
                                  {"F_beta_mx", r.f_beta_mx}, {"n_samples", r.n_samples}};
}

MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.s_alpha = j.at("S_alpha").get<double>();
    r.f_beta_w = j.at("F_beta_w").get<double>();
    r.f_beta_m = j.at("F_beta_m").get<double>();
    r.e_phi_m = j.at("E_phi_m").get<double>();
    r.e_phi_x = j.at("E_phi_x").get<double>();
    r.mae = j.at("MAE").get<double>();
    r.f_beta_mx = j.at("F_beta_mx").get<double>();
    r.n_samples = j.at("n_samples").get<int>();
    return r;
}

std::string csv_header() { return "label,S_alpha,F_beta_w,F_beta_m,E_phi_m,E_phi_x,MAE,F_beta_mx,n_samples"; }

std::string csv_row(const std::string& label, const MetricReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d", r.s_alpha, r.f_beta_w, r.f_beta_m,
                  r.e_phi_m, r.e_phi_x, r.mae, r.f_beta_mx, r.n_samples);
    return label + buf;
}

}  // namespace dsam::metrics
