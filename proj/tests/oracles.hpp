#pragma once

// Test-only reference implementations, written as plainly as possible and
// kept independent of the library's kernel and tape code paths.

#include "sdkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// Direct nested-loop convolution, zero padding, NCHW / OIHW layouts.
template <typename T>
sdkit::TensorT<T> conv2d(const sdkit::TensorT<T>& x, const sdkit::TensorT<T>& w,
                         const std::vector<T>& bias, int stride, int pad) {
    const bool batched = x.rank() == 4;
    const int n = batched ? x.shape[0] : 1;
    const int ic = batched ? x.shape[1] : x.shape[0];
    const int ih = batched ? x.shape[2] : x.shape[1];
    const int iw = batched ? x.shape[3] : x.shape[2];
    const int oc = w.shape[0];
    const int k = w.shape[2];
    const int oh = (ih + 2 * pad - k) / stride + 1;
    const int ow = (iw + 2 * pad - k) / stride + 1;
    sdkit::TensorT<T> y(batched ? sdkit::Shape{n, oc, oh, ow} : sdkit::Shape{oc, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    T acc = bias.empty() ? T(0) : bias[o];
                    for (int c = 0; c < ic; ++c)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int sy = yy * stride + ky - pad;
                                const int sx = xx * stride + kx - pad;
                                if (sy < 0 || sy >= ih || sx < 0 || sx >= iw) continue;
                                acc += w.data[((o * ic + c) * k + ky) * k + kx] *
                                       x.data[((static_cast<std::size_t>(b) * ic + c) * ih + sy) * iw + sx];
                            }
                    y.data[((static_cast<std::size_t>(b) * oc + o) * oh + yy) * ow + xx] = acc;
                }
    return y;
}

// Per-pixel matrix multiply: what a 1x1 convolution must equal.
template <typename T>
sdkit::TensorT<T> pointwise_matmul(const sdkit::TensorT<T>& x, const sdkit::TensorT<T>& w,
                                   const std::vector<T>& bias) {
    const int ic = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int oc = w.shape[0];
    sdkit::TensorT<T> y(sdkit::Shape{oc, h, wd});
    for (int p = 0; p < h * wd; ++p)
        for (int o = 0; o < oc; ++o) {
            T acc = bias.empty() ? T(0) : bias[o];
            for (int c = 0; c < ic; ++c)
                acc += w.data[o * ic + c] * x.data[static_cast<std::size_t>(c) * h * wd + p];
            y.data[static_cast<std::size_t>(o) * h * wd + p] = acc;
        }
    return y;
}

// k x k max-pool of a binary mask: the expected SI-Conv output mask.
template <typename T>
sdkit::ValidityMaskT<T> dilate(const sdkit::ValidityMaskT<T>& m, int k) {
    const int r = (k - 1) / 2;
    sdkit::ValidityMaskT<T> out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            T v(0);
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w) continue;
                    v = std::max(v, m.at(yy, xx));
                }
            out.at(y, x) = v;
        }
    return out;
}

// Scalar-loop masked MSE.
template <typename T>
double masked_mse(const sdkit::TensorT<T>& pred, const sdkit::TensorT<T>& gt) {
    double acc = 0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        if (gt.data[i] <= T(0)) continue;
        const double r = double(gt.data[i]) - double(pred.data[i]);
        acc += r * r;
        ++n;
    }
    return acc / double(n);
}

struct Metrics {
    double irmse = 0, imae = 0, rmse = 0, mae = 0;
};

// Scalar-loop KITTI metrics (mm and 1/km), clamping pred to 1 mm before
// inversion like the implementation contract states.
template <typename T>
Metrics metrics(const sdkit::TensorT<T>& pred, const sdkit::TensorT<T>& gt) {
    double se = 0, ae = 0, ise = 0, iae = 0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        if (gt.data[i] <= T(0)) continue;
        const double g = gt.data[i], p = pred.data[i];
        se += (g - p) * (g - p) * 1e6;
        ae += std::abs(g - p) * 1e3;
        const double gi = 1000.0 / g, pi = 1000.0 / std::max(p, 1e-3);
        ise += (gi - pi) * (gi - pi);
        iae += std::abs(gi - pi);
        ++n;
    }
    Metrics m;
    m.rmse = std::sqrt(se / n);
    m.mae = ae / n;
    m.irmse = std::sqrt(ise / n);
    m.imae = iae / n;
    return m;
}

// Scalar ADAM trace (bias-corrected, decoupled weight decay).
struct AdamTrace {
    double m = 0, v = 0;

    double step(double& p, double g, int t, double lr, double b1, double b2, double eps,
                double wd) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        p = p - lr * mh / (std::sqrt(vh) + eps) - lr * wd * p;
        return p;
    }
};

} // namespace oracle
