#pragma once

#include "sdkit/autodiff.hpp"
#include "sdkit/rng.hpp"
#include "sdkit/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace sdkit {

// Convolution parameters. Kernels are square and odd; at stride 1 the
// padding (k-1)/2 preserves the spatial size.
template <typename T>
struct ConvLayerT {
    TensorT<T> weights; // out_c x in_c x k x k
    TensorT<T> bias;    // out_c
    int stride = 1;
    int pad = 0;

    ConvLayerT() = default;
    ConvLayerT(int in_c, int out_c, int k, int stride_ = 1)
        : weights(Shape{out_c, in_c, k, k}), bias(Shape{out_c}), stride(stride_), pad((k - 1) / 2) {
        if (k % 2 == 0) throw std::invalid_argument("conv kernel size must be odd");
    }

    int in_channels() const { return weights.shape[1]; }
    int out_channels() const { return weights.shape[0]; }
    int kernel() const { return weights.shape[2]; }

    void init_kaiming(Rng& rng) {
        const int fan_in = weights.shape[1] * weights.shape[2] * weights.shape[3];
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : weights.data) v = static_cast<T>(rng.uniform(-bound, bound));
        std::fill(bias.data.begin(), bias.data.end(), T(0));
    }

    template <typename F>
    void visit(const std::string& path, F&& f) {
        f(path + ".weight", weights);
        f(path + ".bias", bias);
    }
};

template <typename T>
using ParamVisitor = std::function<void(const std::string&, TensorT<T>&)>;

// Bound layer parameters on a tape, for one forward pass.
template <typename T>
struct BoundConv {
    typename Tape<T>::Var w, b;
};

template <typename T>
BoundConv<T> bind(Tape<T>& tape, ConvLayerT<T>& layer) {
    return {tape.param(layer.weights), tape.param(layer.bias)};
}

template <typename T>
typename Tape<T>::Var apply_conv(Tape<T>& tape, ConvLayerT<T>& layer, typename Tape<T>::Var x) {
    auto p = bind(tape, layer);
    return tape.conv2d(x, p.w, p.b, layer.stride, layer.pad);
}

template <typename T>
typename Tape<T>::Var apply_conv_relu(Tape<T>& tape, ConvLayerT<T>& layer,
                                      typename Tape<T>::Var x) {
    return tape.relu(apply_conv(tape, layer, x));
}

// out = x + conv(relu(conv(x))); channel-preserving.
template <typename T>
struct ResidualBlockT {
    ConvLayerT<T> c1, c2;

    ResidualBlockT() = default;
    explicit ResidualBlockT(int channels, int k = 3)
        : c1(channels, channels, k), c2(channels, channels, k) {}

    typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x) {
        auto h = tape.relu(apply_conv(tape, c1, x));
        auto f = apply_conv(tape, c2, h);
        return tape.add(x, f);
    }

    void init(Rng& rng) {
        c1.init_kaiming(rng);
        c2.init_kaiming(rng);
    }

    template <typename F>
    void visit(const std::string& path, F&& f) {
        c1.visit(path + ".c1", f);
        c2.visit(path + ".c2", f);
    }
};

// Stride-2 convolution; halves H and W (both must be even).
template <typename T>
typename Tape<T>::Var apply_downsample(Tape<T>& tape, ConvLayerT<T>& layer,
                                       typename Tape<T>::Var x) {
    const auto& s = tape.shape(x);
    if (s.at(1) % 2 != 0 || s.at(2) % 2 != 0)
        throw std::invalid_argument("downsample2x needs even spatial dims, got " + shape_str(s));
    return tape.relu(apply_conv(tape, layer, x));
}

// Nearest-neighbor x2 followed by a 3x3 convolution.
template <typename T>
typename Tape<T>::Var apply_upsample(Tape<T>& tape, ConvLayerT<T>& layer,
                                     typename Tape<T>::Var x) {
    return tape.relu(apply_conv(tape, layer, tape.upsample_nearest2(x)));
}

// Three-stage U-shaped encoder-decoder with residual blocks and skip
// connections; the head is a 1x1 projection with no activation.
template <typename T>
struct EncoderDecoderT {
    ConvLayerT<T> stem;
    ResidualBlockT<T> enc1, enc2, enc3, mid, dec3_res, dec2_res, dec1_res;
    ConvLayerT<T> down1, down2, down3;
    ConvLayerT<T> up3, up2, up1;
    ConvLayerT<T> fuse3, fuse2, fuse1; // 1x1 over [decoder, skip] concat
    ConvLayerT<T> head;                // 1x1 to out_c

    EncoderDecoderT() = default;
    EncoderDecoderT(int in_c, int out_c, int w) {
        const int w2 = 2 * w, w4 = 4 * w;
        stem = ConvLayerT<T>(in_c, w, 3);
        enc1 = ResidualBlockT<T>(w);
        down1 = ConvLayerT<T>(w, w2, 3, 2);
        enc2 = ResidualBlockT<T>(w2);
        down2 = ConvLayerT<T>(w2, w4, 3, 2);
        enc3 = ResidualBlockT<T>(w4);
        down3 = ConvLayerT<T>(w4, w4, 3, 2);
        mid = ResidualBlockT<T>(w4);
        up3 = ConvLayerT<T>(w4, w4, 3);
        fuse3 = ConvLayerT<T>(w4 + w4, w4, 1);
        dec3_res = ResidualBlockT<T>(w4);
        up2 = ConvLayerT<T>(w4, w2, 3);
        fuse2 = ConvLayerT<T>(w2 + w2, w2, 1);
        dec2_res = ResidualBlockT<T>(w2);
        up1 = ConvLayerT<T>(w2, w, 3);
        fuse1 = ConvLayerT<T>(w + w, w, 1);
        dec1_res = ResidualBlockT<T>(w);
        head = ConvLayerT<T>(w, out_c, 1);
    }

    typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x) {
        const auto& s = tape.shape(x);
        if (s.at(1) % 8 != 0 || s.at(2) % 8 != 0)
            throw std::invalid_argument(
                "encoder-decoder input " + shape_str(s) + " must have H,W divisible by 8; pad " +
                std::to_string((8 - s.at(1) % 8) % 8) + " rows / " +
                std::to_string((8 - s.at(2) % 8) % 8) + " cols");
        auto f0 = tape.relu(apply_conv(tape, stem, x));
        auto e1 = enc1.forward(tape, f0);
        auto e2 = enc2.forward(tape, apply_downsample(tape, down1, e1));
        auto e3 = enc3.forward(tape, apply_downsample(tape, down2, e2));
        auto m = mid.forward(tape, apply_downsample(tape, down3, e3));
        auto d3 = apply_upsample(tape, up3, m);
        d3 = tape.relu(apply_conv(tape, fuse3, tape.concat({d3, e3})));
        d3 = dec3_res.forward(tape, d3);
        auto d2 = apply_upsample(tape, up2, d3);
        d2 = tape.relu(apply_conv(tape, fuse2, tape.concat({d2, e2})));
        d2 = dec2_res.forward(tape, d2);
        auto d1 = apply_upsample(tape, up1, d2);
        d1 = tape.relu(apply_conv(tape, fuse1, tape.concat({d1, e1})));
        d1 = dec1_res.forward(tape, d1);
        return apply_conv(tape, head, d1);
    }

    void init(Rng& rng) {
        stem.init_kaiming(rng);
        enc1.init(rng);
        down1.init_kaiming(rng);
        enc2.init(rng);
        down2.init_kaiming(rng);
        enc3.init(rng);
        down3.init_kaiming(rng);
        mid.init(rng);
        up3.init_kaiming(rng);
        fuse3.init_kaiming(rng);
        dec3_res.init(rng);
        up2.init_kaiming(rng);
        fuse2.init_kaiming(rng);
        dec2_res.init(rng);
        up1.init_kaiming(rng);
        fuse1.init_kaiming(rng);
        dec1_res.init(rng);
        head.init_kaiming(rng);
    }

    template <typename F>
    void visit(const std::string& path, F&& f) {
        stem.visit(path + ".stem", f);
        enc1.visit(path + ".enc1", f);
        down1.visit(path + ".down1", f);
        enc2.visit(path + ".enc2", f);
        down2.visit(path + ".down2", f);
        enc3.visit(path + ".enc3", f);
        down3.visit(path + ".down3", f);
        mid.visit(path + ".mid", f);
        up3.visit(path + ".up3", f);
        fuse3.visit(path + ".fuse3", f);
        dec3_res.visit(path + ".dec3", f);
        up2.visit(path + ".up2", f);
        fuse2.visit(path + ".fuse2", f);
        dec2_res.visit(path + ".dec2", f);
        up1.visit(path + ".up1", f);
        fuse1.visit(path + ".fuse1", f);
        dec1_res.visit(path + ".dec1", f);
        head.visit(path + ".head", f);
    }
};

// Shallow feature fusion: conventional convs on the dense input, SI-Convs
// on the sparse input, channel concat, 1x1 fusion. The fused map is dense
// at every pixel whatever the mask density.
template <typename T>
struct SffmT {
    std::vector<ConvLayerT<T>> dense_branch;
    std::vector<ConvLayerT<T>> sparse_branch;
    ConvLayerT<T> fuse;
    T si_eps = T(1e-8);

    SffmT() = default;
    SffmT(int dense_in, int sparse_in, int width, int out_c, int depth, T eps = T(1e-8))
        : si_eps(eps) {
        int c = dense_in;
        for (int i = 0; i < depth; ++i) {
            dense_branch.emplace_back(c, width, 3);
            c = width;
        }
        c = sparse_in;
        for (int i = 0; i < depth; ++i) {
            sparse_branch.emplace_back(c, width, 3);
            c = width;
        }
        fuse = ConvLayerT<T>(2 * width, out_c, 1);
    }

    typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var dense,
                                  typename Tape<T>::Var sparse, const ValidityMaskT<T>& mask) {
        const auto& ds = tape.shape(dense);
        const auto& ss = tape.shape(sparse);
        if (ds.at(1) != ss.at(1) || ds.at(2) != ss.at(2))
            throw std::invalid_argument("sffm spatial mismatch: " + shape_str(ds) + " vs " +
                                        shape_str(ss));
        auto d = dense;
        for (auto& layer : dense_branch) d = apply_conv_relu(tape, layer, d);
        auto s = sparse;
        ValidityMaskT<T> m = mask;
        for (std::size_t i = 0; i < sparse_branch.size(); ++i) {
            auto& layer = sparse_branch[i];
            auto p = bind(tape, layer);
            auto [y, m_out] = tape.si_conv2d(s, m, p.w, p.b, si_eps);
            s = tape.relu(y);
            m = std::move(m_out);
        }
        return tape.relu(apply_conv(tape, fuse, tape.concat({d, s})));
    }

    void init(Rng& rng) {
        for (auto& l : dense_branch) l.init_kaiming(rng);
        for (auto& l : sparse_branch) l.init_kaiming(rng);
        fuse.init_kaiming(rng);
    }

    template <typename F>
    void visit(const std::string& path, F&& f) {
        for (std::size_t i = 0; i < dense_branch.size(); ++i)
            dense_branch[i].visit(path + ".dense" + std::to_string(i), f);
        for (std::size_t i = 0; i < sparse_branch.size(); ++i)
            sparse_branch[i].visit(path + ".sparse" + std::to_string(i), f);
        fuse.visit(path + ".fuse", f);
    }
};

} // namespace sdkit
