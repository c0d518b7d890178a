#pragma once

#include <cstddef>

// Hot numeric inner loops. Scalar reference implementations are the
// ground truth; AVX2 variants are selected at runtime when the CPU
// supports them and must match the reference (bit-exactly for the
// streaming kernels, to tight tolerance for reduction kernels whose
// vector lanes reassociate the sum).

namespace sdkit::kern {

struct Conv2dDims {
    int in_c = 0;
    int in_h = 0;
    int in_w = 0;
    int out_c = 0;
    int k = 1;      // square kernel, odd
    int stride = 1;
    int pad = 0;    // zero padding, symmetric

    int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
};

namespace scalar {

// y (out_c*out_h*out_w) is overwritten; bias may be null.
template <typename T>
void conv2d_forward(const T* x, const Conv2dDims& d, const T* w, const T* bias, T* y);

// gx (in_c*in_h*in_w) is accumulated into.
template <typename T>
void conv2d_backward_input(const T* gy, const Conv2dDims& d, const T* w, T* gx);

// gw (out_c*in_c*k*k) and gb (out_c, may be null) are accumulated into.
template <typename T>
void conv2d_backward_weights(const T* gy, const Conv2dDims& d, const T* x, T* gw, T* gb);

template <typename T>
void relu_forward(const T* x, std::size_t n, T* y);

// gx += gy where y > 0
template <typename T>
void relu_backward(const T* y, const T* gy, std::size_t n, T* gx);

// y += a * x
template <typename T>
void axpy(T a, const T* x, std::size_t n, T* y);

// Bias-corrected ADAM with decoupled weight decay. bc1 = 1/(1-beta1^t),
// bc2 = 1/(1-beta2^t) are precomputed by the caller.
template <typename T>
void adam_update(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T wd, T bc1, T bc2);

} // namespace scalar

namespace avx2 {

void conv2d_forward(const float* x, const Conv2dDims& d, const float* w,
                    const float* bias, float* y);
void conv2d_backward_input(const float* gy, const Conv2dDims& d, const float* w, float* gx);
void conv2d_backward_weights(const float* gy, const Conv2dDims& d, const float* x,
                             float* gw, float* gb);
void relu_forward(const float* x, std::size_t n, float* y);
void relu_backward(const float* y, const float* gy, std::size_t n, float* gx);
void axpy(float a, const float* x, std::size_t n, float* y);
void adam_update(float* p, const float* g, float* m, float* v, std::size_t n,
                 float lr, float beta1, float beta2, float eps, float wd,
                 float bc1, float bc2);

} // namespace avx2

enum class Backend { Auto, Scalar, Avx2 };

// Runtime-selected entry points (f32 path; f64 always runs the reference).
extern void (*conv2d_forward_f32)(const float*, const Conv2dDims&, const float*,
                                  const float*, float*);
extern void (*conv2d_backward_input_f32)(const float*, const Conv2dDims&, const float*, float*);
extern void (*conv2d_backward_weights_f32)(const float*, const Conv2dDims&, const float*,
                                           float*, float*);
extern void (*relu_forward_f32)(const float*, std::size_t, float*);
extern void (*relu_backward_f32)(const float*, const float*, std::size_t, float*);
extern void (*axpy_f32)(float, const float*, std::size_t, float*);
extern void (*adam_update_f32)(float*, const float*, float*, float*, std::size_t,
                               float, float, float, float, float, float, float);

// Auto picks AVX2 when available. The SDK_KERNELS env var ("scalar",
// "avx2", "auto") overrides the default on first use.
void select_backend(Backend b);
Backend active_backend();
const char* backend_name(Backend b);

// Type-generic front doors used by the templated math layer.
template <typename T>
inline void conv2d_forward(const T* x, const Conv2dDims& d, const T* w, const T* bias, T* y) {
    scalar::conv2d_forward(x, d, w, bias, y);
}
template <>
inline void conv2d_forward<float>(const float* x, const Conv2dDims& d, const float* w,
                                  const float* bias, float* y) {
    conv2d_forward_f32(x, d, w, bias, y);
}

template <typename T>
inline void conv2d_backward_input(const T* gy, const Conv2dDims& d, const T* w, T* gx) {
    scalar::conv2d_backward_input(gy, d, w, gx);
}
template <>
inline void conv2d_backward_input<float>(const float* gy, const Conv2dDims& d,
                                         const float* w, float* gx) {
    conv2d_backward_input_f32(gy, d, w, gx);
}

template <typename T>
inline void conv2d_backward_weights(const T* gy, const Conv2dDims& d, const T* x, T* gw, T* gb) {
    scalar::conv2d_backward_weights(gy, d, x, gw, gb);
}
template <>
inline void conv2d_backward_weights<float>(const float* gy, const Conv2dDims& d,
                                           const float* x, float* gw, float* gb) {
    conv2d_backward_weights_f32(gy, d, x, gw, gb);
}

template <typename T>
inline void relu_forward(const T* x, std::size_t n, T* y) {
    scalar::relu_forward(x, n, y);
}
template <>
inline void relu_forward<float>(const float* x, std::size_t n, float* y) {
    relu_forward_f32(x, n, y);
}

template <typename T>
inline void relu_backward(const T* y, const T* gy, std::size_t n, T* gx) {
    scalar::relu_backward(y, gy, n, gx);
}
template <>
inline void relu_backward<float>(const float* y, const float* gy, std::size_t n, float* gx) {
    relu_backward_f32(y, gy, n, gx);
}

template <typename T>
inline void axpy(T a, const T* x, std::size_t n, T* y) {
    scalar::axpy(a, x, n, y);
}
template <>
inline void axpy<float>(float a, const float* x, std::size_t n, float* y) {
    axpy_f32(a, x, n, y);
}

template <typename T>
inline void adam_update(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1,
                        T beta2, T eps, T wd, T bc1, T bc2) {
    scalar::adam_update(p, g, m, v, n, lr, beta1, beta2, eps, wd, bc1, bc2);
}
template <>
inline void adam_update<float>(float* p, const float* g, float* m, float* v,
                               std::size_t n, float lr, float beta1, float beta2,
                               float eps, float wd, float bc1, float bc2) {
    adam_update_f32(p, g, m, v, n, lr, beta1, beta2, eps, wd, bc1, bc2);
}

} // namespace sdkit::kern
