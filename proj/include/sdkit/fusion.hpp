#pragma once

#include "sdkit/autodiff.hpp"
#include "sdkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdkit::fusion {

// Pair of per-pixel confidence logits for the two refinement branches.
template <typename T>
struct ConfidencePairT {
    TensorT<T> cr;
    TensorT<T> dr;
};

using ConfidencePairF = ConfidencePairT<float>;
using ConfidencePairD = ConfidencePairT<double>;

template <typename T>
struct GuidanceConfigT {
    T alpha = T(1);   // guidance strength, >= 0
    T d_max = T(80);  // far plane for the distance prior, meters
};

// Boundary and distance priors, each mapped into [0,1].
template <typename T>
struct GuidancePriorsT {
    TensorT<T> boundary;
    TensorT<T> farness;
    T alpha = T(1);
};

template <typename T>
T percentile(std::vector<T> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    const auto rank = static_cast<std::size_t>(std::llround(q * (values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + rank, values.end());
    return values[rank];
}

// Confidence-weighted blend of two depth maps (two-way softmax over the
// logits, max-shifted before exponentiation).
template <typename T>
TensorT<T> fuse(const TensorT<T>& d_cr, const TensorT<T>& d_dr, const ConfidencePairT<T>& conf) {
    Tape<T> tape(false);
    auto out = tape.fuse_softmax(tape.input(d_cr), tape.input(d_dr), tape.input(conf.cr),
                                 tape.input(conf.dr));
    return tape.tensor(out);
}

// Raw Sobel gradient magnitude (replicate borders), no normalization.
template <typename T>
TensorT<T> sobel_raw(const TensorT<T>& d) {
    Tape<T> tape(false);
    return tape.tensor(tape.sobel_mag(tape.input(d)));
}

// Sobel magnitude normalized by its 99th percentile and clamped to [0,1].
// Robust to single-pixel outliers; a constant map yields all zeros.
template <typename T>
TensorT<T> sobel_magnitude(const TensorT<T>& d) {
    TensorT<T> g = sobel_raw(d);
    const T q = percentile(g.data, 0.99);
    const T scale = q > T(0) ? T(1) / q : T(0);
    for (auto& v : g.data) v = std::min(T(1), std::max(T(0), v * scale));
    return g;
}

template <typename T>
GuidancePriorsT<T> guidance_priors(const TensorT<T>& d_c, const GuidanceConfigT<T>& cfg) {
    GuidancePriorsT<T> p;
    p.alpha = cfg.alpha;
    p.boundary = sobel_magnitude(d_c);
    p.farness = d_c;
    for (auto& v : p.farness.data) v = std::min(T(1), std::max(T(0), v / cfg.d_max));
    return p;
}

// Tape composition of the confidence guidance adjustment:
//   g = clamp01(sobel/|q99|) + clamp01(d_c/d_max)
//   cr' = cr + alpha*g,  dr' = dr - alpha*g
// The percentile scale is taken from the current forward value and held
// constant for the backward pass.
template <typename T>
struct CgmVars {
    typename Tape<T>::Var cr, dr, guidance;
};

// Variant with a caller-supplied boundary normalization scale (1/q99).
// This is the exact function that backward differentiates: the scale is a
// constant with respect to d_c.
template <typename T>
CgmVars<T> cgm_on_tape_scaled(Tape<T>& tape, typename Tape<T>::Var d_c,
                              typename Tape<T>::Var c_cr, typename Tape<T>::Var c_dr,
                              const GuidanceConfigT<T>& cfg, T boundary_scale) {
    if (cfg.alpha < T(0)) throw std::invalid_argument("cgm strength alpha must be >= 0");
    if (cfg.d_max <= T(0)) throw std::invalid_argument("cgm d_max must be positive");
    if (tape.shape(d_c) != tape.shape(c_cr) || tape.shape(c_cr) != tape.shape(c_dr))
        throw std::invalid_argument("cgm shape mismatch: " + shape_str(tape.shape(d_c)) + " / " +
                                    shape_str(tape.shape(c_cr)) + " / " +
                                    shape_str(tape.shape(c_dr)));
    auto boundary = tape.clamp01(tape.scale(tape.sobel_mag(d_c), boundary_scale));
    auto farness = tape.clamp01(tape.scale(d_c, T(1) / cfg.d_max));
    auto guidance = tape.add(boundary, farness);
    auto bump = tape.scale(guidance, cfg.alpha);
    CgmVars<T> out;
    out.cr = tape.add(c_cr, bump);
    out.dr = tape.sub(c_dr, bump);
    out.guidance = guidance;
    return out;
}

template <typename T>
CgmVars<T> cgm_on_tape(Tape<T>& tape, typename Tape<T>::Var d_c, typename Tape<T>::Var c_cr,
                       typename Tape<T>::Var c_dr, const GuidanceConfigT<T>& cfg) {
    if (cfg.alpha < T(0)) throw std::invalid_argument("cgm strength alpha must be >= 0");
    if (cfg.d_max <= T(0)) throw std::invalid_argument("cgm d_max must be positive");
    if (tape.shape(d_c) != tape.shape(c_cr) || tape.shape(c_cr) != tape.shape(c_dr))
        throw std::invalid_argument("cgm shape mismatch: " + shape_str(tape.shape(d_c)) + " / " +
                                    shape_str(tape.shape(c_cr)) + " / " +
                                    shape_str(tape.shape(c_dr)));
    auto g_raw = tape.sobel_mag(d_c);
    const T q = percentile(tape.value(g_raw), 0.99);
    const T scale = q > T(0) ? T(1) / q : T(0);
    auto boundary = tape.clamp01(tape.scale(g_raw, scale));
    auto farness = tape.clamp01(tape.scale(d_c, T(1) / cfg.d_max));
    auto guidance = tape.add(boundary, farness);
    auto bump = tape.scale(guidance, cfg.alpha);
    CgmVars<T> out;
    out.cr = tape.add(c_cr, bump);
    out.dr = tape.sub(c_dr, bump);
    out.guidance = guidance;
    return out;
}

// Plain-tensor guidance adjustment (same math as cgm_on_tape).
template <typename T>
ConfidencePairT<T> cgm(const TensorT<T>& d_c, const ConfidencePairT<T>& conf,
                       const GuidanceConfigT<T>& cfg) {
    Tape<T> tape(false);
    auto vars = cgm_on_tape(tape, tape.input(d_c), tape.input(conf.cr), tape.input(conf.dr), cfg);
    return {tape.tensor(vars.cr), tape.tensor(vars.dr)};
}

// Final fusion through the adjusted confidences; with alpha = 0 this
// reduces to fuse() bit-exactly.
template <typename T>
TensorT<T> fuse_final(const TensorT<T>& d_cr, const TensorT<T>& d_dr,
                      const ConfidencePairT<T>& adjusted) {
    return fuse(d_cr, d_dr, adjusted);
}

} // namespace sdkit::fusion
