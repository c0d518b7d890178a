#include "sdkit/kernels.hpp"

#include "sdkit/cpu_features.hpp"

#include <cstdlib>
#include <cstring>

namespace sdkit::kern {

void (*conv2d_forward_f32)(const float*, const Conv2dDims&, const float*,
                           const float*, float*) = nullptr;
void (*conv2d_backward_input_f32)(const float*, const Conv2dDims&, const float*,
                                  float*) = nullptr;
void (*conv2d_backward_weights_f32)(const float*, const Conv2dDims&, const float*,
                                    float*, float*) = nullptr;
void (*relu_forward_f32)(const float*, std::size_t, float*) = nullptr;
void (*relu_backward_f32)(const float*, const float*, std::size_t, float*) = nullptr;
void (*axpy_f32)(float, const float*, std::size_t, float*) = nullptr;
void (*adam_update_f32)(float*, const float*, float*, float*, std::size_t, float,
                        float, float, float, float, float, float) = nullptr;

namespace {

Backend g_active = Backend::Scalar;

Backend env_backend() {
    const char* v = std::getenv("SDK_KERNELS");
    if (!v) return Backend::Auto;
    if (std::strcmp(v, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(v, "avx2") == 0) return Backend::Avx2;
    return Backend::Auto;
}

void apply(Backend b) {
    if (b == Backend::Avx2) {
        conv2d_forward_f32 = &avx2::conv2d_forward;
        conv2d_backward_input_f32 = &avx2::conv2d_backward_input;
        conv2d_backward_weights_f32 = &avx2::conv2d_backward_weights;
        relu_forward_f32 = &avx2::relu_forward;
        relu_backward_f32 = &avx2::relu_backward;
        axpy_f32 = &avx2::axpy;
        adam_update_f32 = &avx2::adam_update;
    } else {
        conv2d_forward_f32 = &scalar::conv2d_forward<float>;
        conv2d_backward_input_f32 = &scalar::conv2d_backward_input<float>;
        conv2d_backward_weights_f32 = &scalar::conv2d_backward_weights<float>;
        relu_forward_f32 = &scalar::relu_forward<float>;
        relu_backward_f32 = &scalar::relu_backward<float>;
        axpy_f32 = &scalar::axpy<float>;
        adam_update_f32 = &scalar::adam_update<float>;
    }
    g_active = b;
}

struct Init {
    Init() { select_backend(env_backend()); }
};
Init g_init;

} // namespace

void select_backend(Backend b) {
    if (b == Backend::Auto)
        b = (cpu::has_avx2() && cpu::has_fma()) ? Backend::Avx2 : Backend::Scalar;
    if (b == Backend::Avx2 && !(cpu::has_avx2() && cpu::has_fma()))
        b = Backend::Scalar; // requested ISA not present
    apply(b);
}

Backend active_backend() { return g_active; }

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
        default: return "auto";
    }
}

} // namespace sdkit::kern
