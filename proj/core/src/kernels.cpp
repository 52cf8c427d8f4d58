#include "dsam/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "dsam/error.hpp"

namespace dsam::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_rank3(const Tensor& x, const char* what) {
    if (x.rank() != 3) fail(Errc::BadShape, std::string(what) + ": expected [C,H,W], got " + x.shape_str());
}

struct LinearTap {
    int i0, i1;
    double w0, w1;
};

std::vector<LinearTap> bilinear_taps(int in, int out) {
    std::vector<LinearTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        const double w1 = src - i0;
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - w1, w1};
    }
    return taps;
}

int conv_out(int in, int k, Conv2dGeometry g) { return (in + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1; }

bool is_pointwise(int k, Conv2dGeometry g) { return k == 1 && g.stride == 1 && g.padding == 0; }

// col: [Cin*k*k, Ho*Wo]
RowMatrix im2col(const Tensor& x, int k, Conv2dGeometry g, int ho, int wo) {
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    RowMatrix col(static_cast<Eigen::Index>(cin) * k * k, static_cast<Eigen::Index>(ho) * wo);
    const double* src = x.data();
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky * g.dilation;
                    double* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* line = src + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.padding + kx * g.dilation;
                        dst[ox] = (ix >= 0 && ix < w) ? line[ix] : 0.0;
                    }
                }
            }
        }
    }
    return col;
}

void col2im_add(const RowMatrix& col, int k, Conv2dGeometry g, int ho, int wo, Tensor& gx) {
    const int cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
    double* dstx = gx.data();
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky * g.dilation;
                    if (iy < 0 || iy >= h) continue;
                    double* line = dstx + (static_cast<std::size_t>(c) * h + iy) * w;
                    const double* src = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.padding + kx * g.dilation;
                        if (ix >= 0 && ix < w) line[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void check_conv_args(const Tensor& x, const Tensor& weight, Conv2dGeometry g) {
    require_rank3(x, "conv2d input");
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
        fail(Errc::BadShape, "conv2d weight must be [Cout,Cin,k,k], got " + weight.shape_str());
    if (weight.dim(1) != x.dim(0))
        fail(Errc::BadShape, "conv2d channel mismatch: input " + x.shape_str() + " weight " + weight.shape_str());
    if (g.stride < 1 || g.dilation < 1 || g.padding < 0) fail(Errc::BadShape, "conv2d: invalid geometry");
    const int k = weight.dim(2);
    if (conv_out(x.dim(1), k, g) < 1 || conv_out(x.dim(2), k, g) < 1)
        fail(Errc::BadShape, "conv2d: kernel larger than padded input " + x.shape_str());
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require_rank3(x, "resize_bilinear");
    if (out_h < 1 || out_w < 1) fail(Errc::BadShape, "resize_bilinear: empty output");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto ty = bilinear_taps(h, out_h);
    const auto tx = bilinear_taps(w, out_w);
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const auto& b = tx[static_cast<std::size_t>(ox)];
                out.at(ch, oy, ox) = a.w0 * (b.w0 * x.at(ch, a.i0, b.i0) + b.w1 * x.at(ch, a.i0, b.i1)) +
                                     a.w1 * (b.w0 * x.at(ch, a.i1, b.i0) + b.w1 * x.at(ch, a.i1, b.i1));
            }
        }
    }
    return out;
}

Tensor resize_bilinear_adjoint(const Tensor& grad, int in_h, int in_w) {
    require_rank3(grad, "resize_bilinear_adjoint");
    const int c = grad.dim(0), out_h = grad.dim(1), out_w = grad.dim(2);
    const auto ty = bilinear_taps(in_h, out_h);
    const auto tx = bilinear_taps(in_w, out_w);
    Tensor gx({c, in_h, in_w});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const auto& b = tx[static_cast<std::size_t>(ox)];
                const double g = grad.at(ch, oy, ox);
                gx.at(ch, a.i0, b.i0) += a.w0 * b.w0 * g;
                gx.at(ch, a.i0, b.i1) += a.w0 * b.w1 * g;
                gx.at(ch, a.i1, b.i0) += a.w1 * b.w0 * g;
                gx.at(ch, a.i1, b.i1) += a.w1 * b.w1 * g;
            }
        }
    }
    return gx;
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
    require_rank3(x, "resize_nearest");
    if (out_h < 1 || out_w < 1) fail(Errc::BadShape, "resize_nearest: empty output");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto index = [](int o, int in, int out) {
        const int i = static_cast<int>(std::floor((o + 0.5) * in / out));
        return std::clamp(i, 0, in - 1);
    };
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) out.at(ch, oy, ox) = x.at(ch, index(oy, h, out_h), index(ox, w, out_w));
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dGeometry g) {
    check_conv_args(x, weight, g);
    const int cout = weight.dim(0), k = weight.dim(2);
    const int ho = conv_out(x.dim(1), k, g), wo = conv_out(x.dim(2), k, g);
    const Eigen::Index kk = static_cast<Eigen::Index>(x.dim(0)) * k * k;
    const Eigen::Index hw = static_cast<Eigen::Index>(ho) * wo;
    Tensor out({cout, ho, wo});
    MatMap y(out.data(), cout, hw);
    ConstMatMap wmat(weight.data(), cout, kk);
    if (is_pointwise(k, g)) {
        y.noalias() = wmat * ConstMatMap(x.data(), kk, hw);
    } else {
        const RowMatrix col = im2col(x, k, g, ho, wo);
        y.noalias() = wmat * col;
    }
    if (!bias.empty()) {
        if (static_cast<int>(bias.numel()) != cout) fail(Errc::BadShape, "conv2d bias " + bias.shape_str());
        for (int o = 0; o < cout; ++o) y.row(o).array() += bias[static_cast<std::size_t>(o)];
    }
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, Conv2dGeometry g,
                     Tensor* grad_x, Tensor* grad_w, Tensor* grad_b) {
    const int cout = weight.dim(0), k = weight.dim(2);
    const int ho = grad_out.dim(1), wo = grad_out.dim(2);
    const Eigen::Index kk = static_cast<Eigen::Index>(x.dim(0)) * k * k;
    const Eigen::Index hw = static_cast<Eigen::Index>(ho) * wo;
    ConstMatMap gy(grad_out.data(), cout, hw);
    ConstMatMap wmat(weight.data(), cout, kk);
    const bool pointwise = is_pointwise(k, g);

    if (grad_b) {
        for (int o = 0; o < cout; ++o) (*grad_b)[static_cast<std::size_t>(o)] += gy.row(o).sum();
    }
    if (grad_w) {
        MatMap gw(grad_w->data(), cout, kk);
        if (pointwise) {
            gw.noalias() += gy * ConstMatMap(x.data(), kk, hw).transpose();
        } else {
            const RowMatrix col = im2col(x, k, g, ho, wo);
            gw.noalias() += gy * col.transpose();
        }
    }
    if (grad_x) {
        if (pointwise) {
            MatMap gx(grad_x->data(), kk, hw);
            gx.noalias() += wmat.transpose() * gy;
        } else {
            RowMatrix gcol(kk, hw);
            gcol.noalias() = wmat.transpose() * gy;
            col2im_add(gcol, k, g, ho, wo, *grad_x);
        }
    }
}

HaarBands haar_analysis(const Tensor& x) {
    require_rank3(x, "haar_analysis");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) fail(Errc::BadShape, "haar_analysis needs even spatial size, got " + x.shape_str());
    HaarBands b{Tensor({c, h / 2, w / 2}), Tensor({c, h / 2, w / 2}), Tensor({c, h / 2, w / 2}),
                Tensor({c, h / 2, w / 2})};
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h / 2; ++y) {
            for (int xx = 0; xx < w / 2; ++xx) {
                const double p = x.at(ch, 2 * y, 2 * xx), q = x.at(ch, 2 * y, 2 * xx + 1);
                const double r = x.at(ch, 2 * y + 1, 2 * xx), s = x.at(ch, 2 * y + 1, 2 * xx + 1);
                b.ll.at(ch, y, xx) = 0.5 * (p + q + r + s);
                b.lh.at(ch, y, xx) = 0.5 * (p + q - r - s);
                b.hl.at(ch, y, xx) = 0.5 * (p - q + r - s);
                b.hh.at(ch, y, xx) = 0.5 * (p - q - r + s);
            }
        }
    }
    return b;
}

Tensor haar_synthesis(const HaarBands& b) {
    require_rank3(b.ll, "haar_synthesis");
    const int c = b.ll.dim(0), h2 = b.ll.dim(1), w2 = b.ll.dim(2);
    for (const Tensor* t : {&b.lh, &b.hl, &b.hh})
        if (!t->same_shape(b.ll)) fail(Errc::BadShape, "haar_synthesis: band shape mismatch");
    Tensor x({c, 2 * h2, 2 * w2});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h2; ++y) {
            for (int xx = 0; xx < w2; ++xx) {
                const double ll = b.ll.at(ch, y, xx), lh = b.lh.at(ch, y, xx);
                const double hl = b.hl.at(ch, y, xx), hh = b.hh.at(ch, y, xx);
                x.at(ch, 2 * y, 2 * xx) = 0.5 * (ll + lh + hl + hh);
                x.at(ch, 2 * y, 2 * xx + 1) = 0.5 * (ll + lh - hl - hh);
                x.at(ch, 2 * y + 1, 2 * xx) = 0.5 * (ll - lh + hl - hh);
                x.at(ch, 2 * y + 1, 2 * xx + 1) = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
    return x;
}

Tensor box_mean(const Tensor& x, int r) {
    require_rank3(x, "box_mean");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out = Tensor::zeros_like(x);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
            for (int xx = 0; xx < w; ++xx) {
                const int x0 = std::max(0, xx - r), x1 = std::min(w - 1, xx + r);
                const double centre = x.at(ch, y, xx);
                double acc = 0.0;
                for (int yy = y0; yy <= y1; ++yy)
                    for (int xj = x0; xj <= x1; ++xj) acc += x.at(ch, yy, xj) - centre;
                const double n = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
                out.at(ch, y, xx) = centre + acc / n;
            }
        }
    }
    return out;
}

Tensor box_mean_adjoint(const Tensor& grad, int r) {
    require_rank3(grad, "box_mean_adjoint");
    const int c = grad.dim(0), h = grad.dim(1), w = grad.dim(2);
    Tensor gx = Tensor::zeros_like(grad);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
            for (int xx = 0; xx < w; ++xx) {
                const int x0 = std::max(0, xx - r), x1 = std::min(w - 1, xx + r);
                const double n = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
                const double g = grad.at(ch, y, xx) / n;
                for (int yy = y0; yy <= y1; ++yy)
                    for (int xj = x0; xj <= x1; ++xj) gx.at(ch, yy, xj) += g;
            }
        }
    }
    return gx;
}

namespace {
std::pair<int, int> pool_span(int i, int in, int out) {
    const int start = (i * in) / out;
    const int end = ((i + 1) * in + out - 1) / out;
    return {start, end};
}
}  // namespace

Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w) {
    require_rank3(x, "adaptive_avg_pool");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h < 1 || out_w < 1 || out_h > h || out_w > w)
        fail(Errc::BadShape, "adaptive_avg_pool: cannot pool " + x.shape_str() + " to " + std::to_string(out_h) + "x" +
                                 std::to_string(out_w));
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < out_h; ++oy) {
            const auto [y0, y1] = pool_span(oy, h, out_h);
            for (int ox = 0; ox < out_w; ++ox) {
                const auto [x0, x1] = pool_span(ox, w, out_w);
                double acc = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int xx = x0; xx < x1; ++xx) acc += x.at(ch, y, xx);
                out.at(ch, oy, ox) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
            }
        }
    }
    return out;
}

Tensor adaptive_avg_pool_adjoint(const Tensor& grad, int in_h, int in_w) {
    require_rank3(grad, "adaptive_avg_pool_adjoint");
    const int c = grad.dim(0), out_h = grad.dim(1), out_w = grad.dim(2);
    Tensor gx({c, in_h, in_w});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < out_h; ++oy) {
            const auto [y0, y1] = pool_span(oy, in_h, out_h);
            for (int ox = 0; ox < out_w; ++ox) {
                const auto [x0, x1] = pool_span(ox, in_w, out_w);
                const double g = grad.at(ch, oy, ox) / static_cast<double>((y1 - y0) * (x1 - x0));
                for (int y = y0; y < y1; ++y)
                    for (int xx = x0; xx < x1; ++xx) gx.at(ch, y, xx) += g;
            }
        }
    }
    return gx;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    if (a.rank() != 2 || b.rank() != 2) fail(Errc::BadShape, "matmul expects matrices");
    const int m = ta ? a.dim(1) : a.dim(0);
    const int ka = ta ? a.dim(0) : a.dim(1);
    const int kb = tb ? b.dim(1) : b.dim(0);
    const int n = tb ? b.dim(0) : b.dim(1);
    if (ka != kb) fail(Errc::BadShape, "matmul inner mismatch: " + a.shape_str() + " x " + b.shape_str());
    Tensor out({m, n});
    MatMap y(out.data(), m, n);
    ConstMatMap am(a.data(), a.dim(0), a.dim(1));
    ConstMatMap bm(b.data(), b.dim(0), b.dim(1));
    if (!ta && !tb) y.noalias() = am * bm;
    else if (ta && !tb) y.noalias() = am.transpose() * bm;
    else if (!ta && tb) y.noalias() = am * bm.transpose();
    else y.noalias() = am.transpose() * bm.transpose();
    return out;
}

}  // namespace dsam::kernels
