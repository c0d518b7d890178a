#include "sdkit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef __AVX2__
#include <immintrin.h>
#endif

namespace sdkit::kern::avx2 {

#ifdef __AVX2__

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehl_ps(lo, lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_shuffle_ps(lo, lo, 0x1);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
}

// Rows of `src` (plane h*w) copied into a scratch plane with `pad` zero
// columns on each side and the row stride rounded up for vector slack.
struct PaddedPlanes {
    std::vector<float>& buf;
    int row_stride;
    int rows; // interior rows; `pad` zero rows sit above and below
    int pad;

    // r may range over [-pad, rows + pad)
    const float* row(int plane, int r) const {
        return buf.data() +
               (static_cast<std::size_t>(plane) * (rows + 2 * pad) + (r + pad)) * row_stride + pad;
    }
};

int padded_stride(int w, int pad) { return ((w + 2 * pad + 7) & ~7) + 8; }

PaddedPlanes pad_planes(std::vector<float>& scratch, const float* src, int planes, int h, int w,
                        int pad) {
    const int stride = padded_stride(w, pad);
    const int rows = h + 2 * pad;
    scratch.assign(static_cast<std::size_t>(planes) * rows * stride, 0.0f);
    for (int p = 0; p < planes; ++p)
        for (int r = 0; r < h; ++r)
            std::copy_n(src + (static_cast<std::size_t>(p) * h + r) * w, w,
                        scratch.data() +
                            (static_cast<std::size_t>(p) * rows + r + pad) * stride + pad);
    return {scratch, stride, h, pad};
}

thread_local std::vector<float> g_scratch_a;
thread_local std::vector<float> g_scratch_b;

// x0,x2,..,x14 from sixteen consecutive floats
inline __m256 even_gather(const float* p) {
    const __m256 a = _mm256_loadu_ps(p);
    const __m256 b = _mm256_loadu_ps(p + 8);
    const __m256 s = _mm256_shuffle_ps(a, b, _MM_SHUFFLE(2, 0, 2, 0));
    return _mm256_permutevar8x32_ps(s, _mm256_setr_epi32(0, 1, 4, 5, 2, 3, 6, 7));
}

thread_local std::vector<float> g_scratch_c;

// gradient plane zero-stuffed to the input resolution: g2[s*oh][s*ow] = g
void zero_stuff(const float* g, int oh_n, int ow_n, int stride, int in_h, int in_w,
                std::vector<float>& out, int planes) {
    out.assign(static_cast<std::size_t>(planes) * in_h * in_w, 0.0f);
    for (int p = 0; p < planes; ++p)
        for (int oh = 0; oh < oh_n; ++oh) {
            const float* srow = g + (static_cast<std::size_t>(p) * oh_n + oh) * ow_n;
            float* drow = out.data() + (static_cast<std::size_t>(p) * in_h + oh * stride) * in_w;
            for (int ow = 0; ow < ow_n; ++ow) drow[ow * stride] = srow[ow];
        }
}


} // namespace

namespace {

// K-specialized inner bodies keep the tap loops fully unrolled and the
// accumulators in registers.

template <int K>
void conv2d_forward_k(const float* x, const Conv2dDims& d, const float* w,
                      const float* bias, float* y) {
    const int oh_n = d.out_h(), ow_n = d.out_w();
    const auto xp = pad_planes(g_scratch_a, x, d.in_c, d.in_h, d.in_w, d.pad);
    const std::size_t y_plane = static_cast<std::size_t>(oh_n) * ow_n;

    int oc = 0;
    for (; oc + 2 <= d.out_c; oc += 2) {
        // two output channels per pass share every input load
        const float b_a = bias ? bias[oc] : 0.0f;
        const float b_b = bias ? bias[oc + 1] : 0.0f;
        const float* wka_base = w + static_cast<std::size_t>(oc) * d.in_c * K * K;
        const float* wkb_base = wka_base + static_cast<std::size_t>(d.in_c) * K * K;
        for (int oh = 0; oh < oh_n; ++oh) {
            float* ya = y + oc * y_plane + static_cast<std::size_t>(oh) * ow_n;
            float* yb = ya + y_plane;
            int ow0 = 0;
            for (; ow0 + 16 <= ow_n; ow0 += 16) {
                __m256 a0 = _mm256_set1_ps(b_a), a1 = a0;
                __m256 c0 = _mm256_set1_ps(b_b), c1 = c0;
                const float* wka = wka_base;
                const float* wkb = wkb_base;
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh + kh - d.pad) + ow0 - d.pad;
                        for (int kw = 0; kw < K; ++kw) {
                            const __m256 x0 = _mm256_loadu_ps(xr + kw);
                            const __m256 x1 = _mm256_loadu_ps(xr + kw + 8);
                            const __m256 wa = _mm256_set1_ps(wka[kh * K + kw]);
                            const __m256 wb = _mm256_set1_ps(wkb[kh * K + kw]);
                            a0 = _mm256_fmadd_ps(wa, x0, a0);
                            a1 = _mm256_fmadd_ps(wa, x1, a1);
                            c0 = _mm256_fmadd_ps(wb, x0, c0);
                            c1 = _mm256_fmadd_ps(wb, x1, c1);
                        }
                    }
                    wka += K * K;
                    wkb += K * K;
                }
                _mm256_storeu_ps(ya + ow0, a0);
                _mm256_storeu_ps(ya + ow0 + 8, a1);
                _mm256_storeu_ps(yb + ow0, c0);
                _mm256_storeu_ps(yb + ow0 + 8, c1);
            }
            for (; ow0 < ow_n; ++ow0) {
                float acc_a = b_a, acc_b = b_b;
                const float* wka = wka_base;
                const float* wkb = wkb_base;
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh + kh - d.pad) + ow0 - d.pad;
                        for (int kw = 0; kw < K; ++kw) {
                            acc_a = std::fma(wka[kh * K + kw], xr[kw], acc_a);
                            acc_b = std::fma(wkb[kh * K + kw], xr[kw], acc_b);
                        }
                    }
                    wka += K * K;
                    wkb += K * K;
                }
                ya[ow0] = acc_a;
                yb[ow0] = acc_b;
            }
        }
    }
    for (; oc < d.out_c; ++oc) {
        const float b = bias ? bias[oc] : 0.0f;
        const __m256 b8 = _mm256_set1_ps(b);
        const float* wk_base = w + static_cast<std::size_t>(oc) * d.in_c * K * K;
        for (int oh = 0; oh < oh_n; ++oh) {
            float* yrow = y + oc * y_plane + static_cast<std::size_t>(oh) * ow_n;
            int ow0 = 0;
            for (; ow0 + 16 <= ow_n; ow0 += 16) {
                __m256 a0 = b8, a1 = b8;
                const float* wk = wk_base;
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh + kh - d.pad) + ow0 - d.pad;
                        for (int kw = 0; kw < K; ++kw) {
                            const __m256 wv = _mm256_set1_ps(wk[kh * K + kw]);
                            a0 = _mm256_fmadd_ps(wv, _mm256_loadu_ps(xr + kw), a0);
                            a1 = _mm256_fmadd_ps(wv, _mm256_loadu_ps(xr + kw + 8), a1);
                        }
                    }
                    wk += K * K;
                }
                _mm256_storeu_ps(yrow + ow0, a0);
                _mm256_storeu_ps(yrow + ow0 + 8, a1);
            }
            for (; ow0 < ow_n; ++ow0) {
                float acc = b;
                const float* wk = wk_base;
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh + kh - d.pad) + ow0 - d.pad;
                        for (int kw = 0; kw < K; ++kw) acc = std::fma(wk[kh * K + kw], xr[kw], acc);
                    }
                    wk += K * K;
                }
                yrow[ow0] = acc;
            }
        }
    }
}

template <int K>
void conv2d_backward_input_k(const float* gy, const Conv2dDims& d, const float* w, float* gx) {
    const int oh_n = d.out_h(), ow_n = d.out_w();
    const auto gp = pad_planes(g_scratch_b, gy, d.out_c, oh_n, ow_n, d.pad);
    const std::size_t x_plane = static_cast<std::size_t>(d.in_h) * d.in_w;

    for (int ic = 0; ic < d.in_c; ++ic) {
        for (int ih = 0; ih < d.in_h; ++ih) {
            float* dxrow = gx + ic * x_plane + static_cast<std::size_t>(ih) * d.in_w;
            int iw0 = 0;
            for (; iw0 + 16 <= d.in_w; iw0 += 16) {
                __m256 a0 = _mm256_loadu_ps(dxrow + iw0);
                __m256 a1 = _mm256_loadu_ps(dxrow + iw0 + 8);
                for (int oc = 0; oc < d.out_c; ++oc) {
                    const float* wk = w + ((static_cast<std::size_t>(oc) * d.in_c + ic) * K) * K;
                    for (int kh = 0; kh < K; ++kh) {
                        const float* gr = gp.row(oc, ih - kh + d.pad) + iw0 + d.pad;
                        for (int kw = 0; kw < K; ++kw) {
                            const __m256 wv = _mm256_set1_ps(wk[kh * K + kw]);
                            a0 = _mm256_fmadd_ps(wv, _mm256_loadu_ps(gr - kw), a0);
                            a1 = _mm256_fmadd_ps(wv, _mm256_loadu_ps(gr - kw + 8), a1);
                        }
                    }
                }
                _mm256_storeu_ps(dxrow + iw0, a0);
                _mm256_storeu_ps(dxrow + iw0 + 8, a1);
            }
            for (; iw0 < d.in_w; ++iw0) {
                float acc = dxrow[iw0];
                for (int oc = 0; oc < d.out_c; ++oc) {
                    const float* wk = w + ((static_cast<std::size_t>(oc) * d.in_c + ic) * K) * K;
                    for (int kh = 0; kh < K; ++kh) {
                        const float* gr = gp.row(oc, ih - kh + d.pad) + iw0 + d.pad;
                        for (int kw = 0; kw < K; ++kw)
                            acc = std::fma(wk[kh * K + kw], gr[-kw], acc);
                    }
                }
                dxrow[iw0] = acc;
            }
        }
    }
}

template <int K>
void conv2d_backward_weights_k(const float* gy, const Conv2dDims& d, const float* x,
                               float* gw, float* gb) {
    const int oh_n = d.out_h(), ow_n = d.out_w();
    const auto xp = pad_planes(g_scratch_a, x, d.in_c, d.in_h, d.in_w, d.pad);
    const std::size_t y_plane = static_cast<std::size_t>(oh_n) * ow_n;

    for (int oc = 0; oc < d.out_c; ++oc) {
        const float* gplane = gy + oc * y_plane;
        if (gb) {
            __m256 acc8 = _mm256_setzero_ps();
            float tail = 0.0f;
            std::size_t i = 0;
            for (; i + 8 <= y_plane; i += 8)
                acc8 = _mm256_add_ps(acc8, _mm256_loadu_ps(gplane + i));
            for (; i < y_plane; ++i) tail += gplane[i];
            gb[oc] += hsum(acc8) + tail;
        }
        for (int ic = 0; ic < d.in_c; ++ic) {
            __m256 acc[K * K];
            for (int t = 0; t < K * K; ++t) acc[t] = _mm256_setzero_ps();
            float tail[K * K] = {0};
            for (int oh = 0; oh < oh_n; ++oh) {
                const float* grow = gplane + static_cast<std::size_t>(oh) * ow_n;
                int ow0 = 0;
                for (; ow0 + 8 <= ow_n; ow0 += 8) {
                    const __m256 gv = _mm256_loadu_ps(grow + ow0);
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh + kh - d.pad) + ow0 - d.pad;
                        for (int kw = 0; kw < K; ++kw)
                            acc[kh * K + kw] =
                                _mm256_fmadd_ps(gv, _mm256_loadu_ps(xr + kw), acc[kh * K + kw]);
                    }
                }
                for (; ow0 < ow_n; ++ow0) {
                    const float g = grow[ow0];
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh + kh - d.pad) + ow0 - d.pad;
                        for (int kw = 0; kw < K; ++kw)
                            tail[kh * K + kw] = std::fma(g, xr[kw], tail[kh * K + kw]);
                    }
                }
            }
            float* wk = gw + (static_cast<std::size_t>(oc) * d.in_c + ic) * K * K;
            for (int t = 0; t < K * K; ++t) wk[t] += hsum(acc[t]) + tail[t];
        }
    }
}


template <int K>
void conv2d_forward_s2_k(const float* x, const Conv2dDims& d, const float* w,
                         const float* bias, float* y) {
    const int oh_n = d.out_h(), ow_n = d.out_w();
    const auto xp = pad_planes(g_scratch_a, x, d.in_c, d.in_h, d.in_w, d.pad);
    const std::size_t y_plane = static_cast<std::size_t>(oh_n) * ow_n;
    for (int oc = 0; oc < d.out_c; ++oc) {
        const float b = bias ? bias[oc] : 0.0f;
        const __m256 b8 = _mm256_set1_ps(b);
        const float* wk_base = w + static_cast<std::size_t>(oc) * d.in_c * K * K;
        for (int oh = 0; oh < oh_n; ++oh) {
            float* yrow = y + oc * y_plane + static_cast<std::size_t>(oh) * ow_n;
            int ow0 = 0;
            for (; ow0 + 8 <= ow_n; ow0 += 8) {
                __m256 a0 = b8;
                const float* wk = wk_base;
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh * 2 + kh - d.pad) + ow0 * 2 - d.pad;
                        for (int kw = 0; kw < K; ++kw)
                            a0 = _mm256_fmadd_ps(_mm256_set1_ps(wk[kh * K + kw]),
                                                 even_gather(xr + kw), a0);
                    }
                    wk += K * K;
                }
                _mm256_storeu_ps(yrow + ow0, a0);
            }
            for (; ow0 < ow_n; ++ow0) {
                float acc = b;
                const float* wk = wk_base;
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int kh = 0; kh < K; ++kh) {
                        const float* xr = xp.row(ic, oh * 2 + kh - d.pad) + ow0 * 2 - d.pad;
                        for (int kw = 0; kw < K; ++kw) acc = std::fma(wk[kh * K + kw], xr[kw], acc);
                    }
                    wk += K * K;
                }
                yrow[ow0] = acc;
            }
        }
    }
}

} // namespace

// Every (ic, kh, kw) tap accumulates into a register tile before one store;
// per-element addition order matches the scalar reference exactly.
void conv2d_forward(const float* x, const Conv2dDims& d, const float* w,
                    const float* bias, float* y) {
    if (d.stride == 1) {
        if (d.k == 3) return conv2d_forward_k<3>(x, d, w, bias, y);
        if (d.k == 1) return conv2d_forward_k<1>(x, d, w, bias, y);
    } else if (d.stride == 2) {
        if (d.k == 3) return conv2d_forward_s2_k<3>(x, d, w, bias, y);
        if (d.k == 1) return conv2d_forward_s2_k<1>(x, d, w, bias, y);
    }
    scalar::conv2d_forward<float>(x, d, w, bias, y);
}

// dx[ih][iw] += sum over (oc, kh, kw) of w * gy[ih-kh+p][iw-kw+p], tiled the
// same way with the upstream gradient padded instead of the input.
void conv2d_backward_input(const float* gy, const Conv2dDims& d, const float* w, float* gx) {
    Conv2dDims dd = d;
    const float* g = gy;
    if (d.stride == 2) {
        // zero-stuffed gradient turns the strided scatter into the stride-1 case
        zero_stuff(gy, d.out_h(), d.out_w(), 2, d.in_h, d.in_w, g_scratch_c, d.out_c);
        g = g_scratch_c.data();
        dd.stride = 1;
    }
    if (dd.stride == 1) {
        if (d.k == 3) return conv2d_backward_input_k<3>(g, dd, w, gx);
        if (d.k == 1) return conv2d_backward_input_k<1>(g, dd, w, gx);
    }
    scalar::conv2d_backward_input<float>(gy, d, w, gx);
}

// One pass over the gradient per (oc, ic) pair with every tap accumulator
// held in registers; the per-tap reduction is lane-parallel, so results
// match the scalar reference to rounding, not bit-exactly.
void conv2d_backward_weights(const float* gy, const Conv2dDims& d, const float* x,
                             float* gw, float* gb) {
    Conv2dDims dd = d;
    const float* g = gy;
    if (d.stride == 2) {
        zero_stuff(gy, d.out_h(), d.out_w(), 2, d.in_h, d.in_w, g_scratch_c, d.out_c);
        g = g_scratch_c.data();
        dd.stride = 1;
    }
    if (dd.stride == 1) {
        if (d.k == 3) return conv2d_backward_weights_k<3>(g, dd, x, gw, gb);
        if (d.k == 1) return conv2d_backward_weights_k<1>(g, dd, x, gw, gb);
    }
    scalar::conv2d_backward_weights<float>(gy, d, x, gw, gb);
}

void relu_forward(const float* x, std::size_t n, float* y) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* y, const float* gy, std::size_t n, float* gx) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(y + i), zero, _CMP_GT_OQ);
        __m256 g = _mm256_and_ps(mask, _mm256_loadu_ps(gy + i));
        _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), g));
    }
    for (; i < n; ++i)
        if (y[i] > 0.0f) gx[i] += gy[i];
}

void axpy(float a, const float* x, std::size_t n, float* y) {
    const __m256 a8 = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(a8, _mm256_loadu_ps(x + i), yv));
    }
    for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void adam_update(float* p, const float* g, float* m, float* v, std::size_t n,
                 float lr, float beta1, float beta2, float eps, float wd,
                 float bc1, float bc2) {
    const float om1 = 1.0f - beta1;
    const float om2 = 1.0f - beta2;
    const float lrwd = lr * wd;
    const __m256 b1 = _mm256_set1_ps(beta1), b2 = _mm256_set1_ps(beta2);
    const __m256 o1 = _mm256_set1_ps(om1), o2 = _mm256_set1_ps(om2);
    const __m256 lr8 = _mm256_set1_ps(lr), wd8 = _mm256_set1_ps(lrwd);
    const __m256 e8 = _mm256_set1_ps(eps);
    const __m256 c1 = _mm256_set1_ps(bc1), c2 = _mm256_set1_ps(bc2);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gi = _mm256_loadu_ps(g + i);
        __m256 mi = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m + i)),
                                  _mm256_mul_ps(o1, gi));
        __m256 vi = _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v + i)),
                                  _mm256_mul_ps(o2, _mm256_mul_ps(gi, gi)));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
        const __m256 num = _mm256_mul_ps(mi, c1);
        const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vi, c2)), e8);
        const __m256 upd = _mm256_div_ps(num, den);
        const __m256 pw = _mm256_loadu_ps(p + i);
        __m256 pn = _mm256_sub_ps(_mm256_sub_ps(pw, _mm256_mul_ps(lr8, upd)),
                                  _mm256_mul_ps(wd8, pw));
        _mm256_storeu_ps(p + i, pn);
    }
    for (; i < n; ++i) {
        const float gi = g[i];
        m[i] = beta1 * m[i] + om1 * gi;
        v[i] = beta2 * v[i] + om2 * (gi * gi);
        const float num = m[i] * bc1;
        const float den = std::sqrt(v[i] * bc2) + eps;
        const float upd = num / den;
        const float pw = p[i];
        p[i] = (pw - lr * upd) - lrwd * pw;
    }
}

#else // !__AVX2__: keep the symbols linkable on non-x86 hosts

void conv2d_forward(const float* x, const Conv2dDims& d, const float* w,
                    const float* bias, float* y) {
    scalar::conv2d_forward<float>(x, d, w, bias, y);
}
void conv2d_backward_input(const float* gy, const Conv2dDims& d, const float* w, float* gx) {
    scalar::conv2d_backward_input<float>(gy, d, w, gx);
}
void conv2d_backward_weights(const float* gy, const Conv2dDims& d, const float* x,
                             float* gw, float* gb) {
    scalar::conv2d_backward_weights<float>(gy, d, x, gw, gb);
}
void relu_forward(const float* x, std::size_t n, float* y) {
    scalar::relu_forward<float>(x, n, y);
}
void relu_backward(const float* y, const float* gy, std::size_t n, float* gx) {
    scalar::relu_backward<float>(y, gy, n, gx);
}
void axpy(float a, const float* x, std::size_t n, float* y) {
    scalar::axpy<float>(a, x, n, y);
}
void adam_update(float* p, const float* g, float* m, float* v, std::size_t n,
                 float lr, float beta1, float beta2, float eps, float wd,
                 float bc1, float bc2) {
    scalar::adam_update<float>(p, g, m, v, n, lr, beta1, beta2, eps, wd, bc1, bc2);
}

#endif

} // namespace sdkit::kern::avx2
