#include "sdkit/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sdkit::kern::scalar {

namespace {

// First/last output column whose input column ow*stride + kw - pad lands
// inside [0, in_w).
inline int col_lo(int kw, int pad, int stride) {
    int a = pad - kw;
    return a <= 0 ? 0 : (a + stride - 1) / stride;
}
inline int col_hi(int kw, int pad, int stride, int in_w, int out_w) {
    int b = in_w - 1 + pad - kw;
    if (b < 0) return 0;
    return std::min(out_w, b / stride + 1);
}

} // namespace

template <typename T>
void conv2d_forward(const T* x, const Conv2dDims& d, const T* w, const T* bias, T* y) {
    const int oh_n = d.out_h(), ow_n = d.out_w();
    const int x_plane = d.in_h * d.in_w;
    const int y_plane = oh_n * ow_n;
    for (int oc = 0; oc < d.out_c; ++oc) {
        T* yc = y + oc * y_plane;
        const T b = bias ? bias[oc] : T(0);
        std::fill(yc, yc + y_plane, b);
        for (int ic = 0; ic < d.in_c; ++ic) {
            const T* xc = x + ic * x_plane;
            const T* wk = w + ((oc * d.in_c + ic) * d.k) * d.k;
            for (int kh = 0; kh < d.k; ++kh) {
                for (int kw = 0; kw < d.k; ++kw) {
                    const T wv = wk[kh * d.k + kw];
                    const int lo = col_lo(kw, d.pad, d.stride);
                    const int hi = col_hi(kw, d.pad, d.stride, d.in_w, ow_n);
                    if (lo >= hi) continue;
                    for (int oh = 0; oh < oh_n; ++oh) {
                        const int ih = oh * d.stride + kh - d.pad;
                        if (ih < 0 || ih >= d.in_h) continue;
                        const T* xrow = xc + ih * d.in_w + (lo * d.stride + kw - d.pad);
                        T* yrow = yc + oh * ow_n + lo;
                        const int n = hi - lo;
                        if (d.stride == 1) {
                            for (int i = 0; i < n; ++i)
                                yrow[i] = std::fma(wv, xrow[i], yrow[i]);
                        } else {
                            for (int i = 0; i < n; ++i)
                                yrow[i] = std::fma(wv, xrow[i * d.stride], yrow[i]);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const T* gy, const Conv2dDims& d, const T* w, T* gx) {
    const int oh_n = d.out_h(), ow_n = d.out_w();
    const int x_plane = d.in_h * d.in_w;
    const int y_plane = oh_n * ow_n;
    for (int ic = 0; ic < d.in_c; ++ic) {
        T* gxc = gx + ic * x_plane;
        for (int oc = 0; oc < d.out_c; ++oc) {
            const T* gyc = gy + oc * y_plane;
            const T* wk = w + ((oc * d.in_c + ic) * d.k) * d.k;
            for (int kh = 0; kh < d.k; ++kh) {
                for (int kw = 0; kw < d.k; ++kw) {
                    const T wv = wk[kh * d.k + kw];
                    const int lo = col_lo(kw, d.pad, d.stride);
                    const int hi = col_hi(kw, d.pad, d.stride, d.in_w, ow_n);
                    if (lo >= hi) continue;
                    for (int oh = 0; oh < oh_n; ++oh) {
                        const int ih = oh * d.stride + kh - d.pad;
                        if (ih < 0 || ih >= d.in_h) continue;
                        T* gxrow = gxc + ih * d.in_w + (lo * d.stride + kw - d.pad);
                        const T* gyrow = gyc + oh * ow_n + lo;
                        const int n = hi - lo;
                        if (d.stride == 1) {
                            for (int i = 0; i < n; ++i)
                                gxrow[i] = std::fma(wv, gyrow[i], gxrow[i]);
                        } else {
                            for (int i = 0; i < n; ++i)
                                gxrow[i * d.stride] = std::fma(wv, gyrow[i], gxrow[i * d.stride]);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_weights(const T* gy, const Conv2dDims& d, const T* x, T* gw, T* gb) {
    const int oh_n = d.out_h(), ow_n = d.out_w();
    const int x_plane = d.in_h * d.in_w;
    const int y_plane = oh_n * ow_n;
    for (int oc = 0; oc < d.out_c; ++oc) {
        const T* gyc = gy + oc * y_plane;
        if (gb) {
            T acc(0);
            for (int i = 0; i < y_plane; ++i) acc += gyc[i];
            gb[oc] += acc;
        }
        for (int ic = 0; ic < d.in_c; ++ic) {
            const T* xc = x + ic * x_plane;
            for (int kh = 0; kh < d.k; ++kh) {
                for (int kw = 0; kw < d.k; ++kw) {
                    const int lo = col_lo(kw, d.pad, d.stride);
                    const int hi = col_hi(kw, d.pad, d.stride, d.in_w, ow_n);
                    T acc(0);
                    for (int oh = 0; oh < oh_n && lo < hi; ++oh) {
                        const int ih = oh * d.stride + kh - d.pad;
                        if (ih < 0 || ih >= d.in_h) continue;
                        const T* xrow = xc + ih * d.in_w + (lo * d.stride + kw - d.pad);
                        const T* gyrow = gyc + oh * ow_n + lo;
                        const int n = hi - lo;
                        if (d.stride == 1) {
                            for (int i = 0; i < n; ++i)
                                acc = std::fma(gyrow[i], xrow[i], acc);
                        } else {
                            for (int i = 0; i < n; ++i)
                                acc = std::fma(gyrow[i], xrow[i * d.stride], acc);
                        }
                    }
                    gw[((oc * d.in_c + ic) * d.k + kh) * d.k + kw] += acc;
                }
            }
        }
    }
}

template <typename T>
void relu_forward(const T* x, std::size_t n, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* y, const T* gy, std::size_t n, T* gx) {
    for (std::size_t i = 0; i < n; ++i)
        if (y[i] > T(0)) gx[i] += gy[i];
}

template <typename T>
void axpy(T a, const T* x, std::size_t n, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

template <typename T>
void adam_update(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T wd, T bc1, T bc2) {
    const T om1 = T(1) - beta1;
    const T om2 = T(1) - beta2;
    const T lrwd = lr * wd;
    for (std::size_t i = 0; i < n; ++i) {
        const T gi = g[i];
        m[i] = beta1 * m[i] + om1 * gi;
        v[i] = beta2 * v[i] + om2 * (gi * gi);
        const T num = m[i] * bc1;
        const T den = std::sqrt(v[i] * bc2) + eps;
        const T upd = num / den;
        const T pw = p[i];
        p[i] = (pw - lr * upd) - lrwd * pw;
    }
}

#define SDKIT_INSTANTIATE(T)                                                            \
    template void conv2d_forward<T>(const T*, const Conv2dDims&, const T*, const T*, T*); \
    template void conv2d_backward_input<T>(const T*, const Conv2dDims&, const T*, T*);   \
    template void conv2d_backward_weights<T>(const T*, const Conv2dDims&, const T*, T*, T*); \
    template void relu_forward<T>(const T*, std::size_t, T*);                            \
    template void relu_backward<T>(const T*, const T*, std::size_t, T*);                 \
    template void axpy<T>(T, const T*, std::size_t, T*);                                 \
    template void adam_update<T>(T*, const T*, T*, T*, std::size_t, T, T, T, T, T, T, T);

SDKIT_INSTANTIATE(float)
SDKIT_INSTANTIATE(double)

#undef SDKIT_INSTANTIATE

} // namespace sdkit::kern::scalar
