#pragma once

// Plain tensor kernels (no graph bookkeeping). Autodiff ops and the data
// pipeline are both built on these; every linear kernel ships its adjoint.

#include "dsam/tensor.hpp"

namespace dsam::kernels {

/// Bilinear resampling of a [C, H, W] tensor with half-pixel centers
/// (source coordinate = (dst + 0.5) * in / out - 0.5, clamped at the border).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
/// Adjoint of resize_bilinear: scatters a [C, out_h, out_w] gradient back to [C, in_h, in_w].
Tensor resize_bilinear_adjoint(const Tensor& grad, int in_h, int in_w);

/// Nearest-neighbour resampling with the same half-pixel convention.
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);

struct Conv2dGeometry {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

/// x: [Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout] or empty.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dGeometry geo);

/// Accumulates gradients of conv2d. Any of grad_x / grad_w / grad_b may be null.
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, Conv2dGeometry geo,
                     Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

struct HaarBands {
    Tensor ll, lh, hl, hh;  ///< each [C, H/2, W/2]
};

/// Single-level orthonormal 2-D Haar transform. For a 2x2 block [[a,b],[c,d]]:
/// LL=(a+b+c+d)/2, LH=(a+b-c-d)/2, HL=(a-b+c-d)/2, HH=(a-b-c+d)/2.
HaarBands haar_analysis(const Tensor& x);
Tensor haar_synthesis(const HaarBands& bands);

/// Mean over the (2r+1)^2 window clipped to the image, normalised by the
/// number of in-bounds pixels. Computed relative to the centre pixel, so a
/// constant region maps to itself exactly.
Tensor box_mean(const Tensor& x, int radius);
Tensor box_mean_adjoint(const Tensor& grad, int radius);

/// Adaptive average pooling of [C, H, W] to [C, out_h, out_w]
/// (cell i covers [floor(i*H/out), ceil((i+1)*H/out))).
Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w);
Tensor adaptive_avg_pool_adjoint(const Tensor& grad, int in_h, int in_w);

/// Row-major matrix product of [M, K] x [K, N] with optional transposes.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

}  // namespace dsam::kernels
