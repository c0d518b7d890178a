#pragma once

#include "sdkit/fusion.hpp"
#include "sdkit/nn.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace sdkit {

// Ablation variants. B is the plain two-stage concatenation baseline; the
// others replace stage two with the CR/DR refinement pair, add the fusion
// blocks on the sparse inputs, and finally enable the confidence guidance.
enum class Variant { B, CRDR, CRDR_SFFM, Full };

inline const char* variant_tag(Variant v) {
    switch (v) {
        case Variant::B: return "B";
        case Variant::CRDR: return "CRDR";
        case Variant::CRDR_SFFM: return "CRDR+SFFM";
        case Variant::Full: return "CRDR+SFFM+CGM";
    }
    return "?";
}

inline Variant parse_variant(const std::string& tag) {
    for (Variant v : {Variant::B, Variant::CRDR, Variant::CRDR_SFFM, Variant::Full})
        if (tag == variant_tag(v)) return v;
    throw std::invalid_argument("unknown variant '" + tag +
                                "'; valid tags: B, CRDR, CRDR+SFFM, CRDR+SFFM+CGM");
}

template <typename T>
struct NetConfigT {
    int base_width = 32;  // encoder width, doubled per stage
    int sffm_width = 16;  // fusion branch width; fused output is 2x this
    int sffm_depth = 2;   // convs per branch
    T d_max = T(80);      // input scaling + distance prior far plane, meters
    T cgm_alpha = T(1);
    T si_eps = T(1e-8);
};

using NetConfigF = NetConfigT<float>;
using NetConfigD = NetConfigT<double>;

// One forward pass: D_c is the coarse map, D'_f the fused output. The
// refinement fields are present for the CR/DR variants only.
template <typename T>
struct NetworkOutputT {
    TensorT<T> d_c;
    TensorT<T> d_final;
    std::optional<TensorT<T>> d_cr, d_dr;
    std::optional<TensorT<T>> c_cr, c_dr;          // raw logits
    std::optional<TensorT<T>> c_cr_adj, c_dr_adj;  // after guidance
};

using NetworkOutputF = NetworkOutputT<float>;

// Tape handles from one recorded forward pass.
template <typename T>
struct NetVarsT {
    using Var = typename Tape<T>::Var;
    Var d_c, d_final;
    Var d_cr, d_dr, c_cr, c_dr, c_cr_adj, c_dr_adj; // invalid for variant B
};

template <typename T>
class NetworkT {
public:
    using Var = typename Tape<T>::Var;

    NetworkT(Variant variant, NetConfigT<T> cfg, std::uint64_t seed)
        : cfg_(cfg), variant_(variant) {
        const int w = cfg.base_width;
        const int sffm_out = 2 * cfg.sffm_width;
        const bool has_sffm = variant == Variant::CRDR_SFFM || variant == Variant::Full;
        const bool has_crdr = variant != Variant::B;

        if (has_sffm) {
            sffm1_.emplace(3, 1, cfg.sffm_width, sffm_out, cfg.sffm_depth, cfg.si_eps);
            cp_ = EncoderDecoderT<T>(sffm_out, 1, w);
        } else {
            cp_ = EncoderDecoderT<T>(4, 1, w); // color + scaled sparse depth
        }
        if (!has_crdr) {
            stage2_.emplace(5, 1, w); // coarse + color + sparse, single head
        } else {
            cr_.emplace(4, 2, w); // coarse + color -> depth, confidence
            if (has_sffm) {
                sffm_dr_.emplace(1, 1, cfg.sffm_width, sffm_out, cfg.sffm_depth, cfg.si_eps);
                dr_.emplace(sffm_out, 2, w);
            } else {
                dr_.emplace(2, 2, w); // coarse + sparse
            }
        }
        init(seed);
    }

    void init(std::uint64_t seed) {
        Rng rng = Rng::derive(seed, "net-init");
        if (sffm1_) sffm1_->init(rng);
        cp_.init(rng);
        if (stage2_) stage2_->init(rng);
        if (cr_) cr_->init(rng);
        if (sffm_dr_) sffm_dr_->init(rng);
        if (dr_) dr_->init(rng);
    }

    Variant variant() const { return variant_; }
    const NetConfigT<T>& config() const { return cfg_; }

    template <typename F>
    void visit_params(F&& f) {
        if (sffm1_) sffm1_->visit("sffm1", f);
        cp_.visit("cp", f);
        if (stage2_) stage2_->visit("stage2", f);
        if (cr_) cr_->visit("cr", f);
        if (sffm_dr_) sffm_dr_->visit("sffm_dr", f);
        if (dr_) dr_->visit("dr", f);
    }

    std::int64_t param_count() {
        std::int64_t n = 0;
        visit_params([&n](const std::string&, TensorT<T>& t) { n += t.numel(); });
        return n;
    }

    // Records the full two-stage graph on the tape.
    NetVarsT<T> forward(Tape<T>& tape, const TensorT<T>& color,
                        const SparseDepthMapT<T>& sparse) {
        check_inputs(color, sparse);
        const T inv_d = T(1) / cfg_.d_max;
        Var i_c = tape.input(color);
        Var i_s = tape.scale(tape.input(sparse.depth), inv_d);

        NetVarsT<T> out;
        Var x1;
        if (sffm1_)
            x1 = sffm1_->forward(tape, i_c, i_s, sparse.mask);
        else
            x1 = tape.concat({i_c, i_s});
        out.d_c = cp_.forward(tape, x1);

        Var d_c_scaled = tape.scale(out.d_c, inv_d);
        if (stage2_) {
            out.d_final = stage2_->forward(tape, tape.concat({d_c_scaled, i_c, i_s}));
            return out;
        }

        auto cr_head = cr_->forward(tape, tape.concat({d_c_scaled, i_c}));
        out.d_cr = tape.slice_channels(cr_head, 0, 1);
        out.c_cr = tape.slice_channels(cr_head, 1, 1);

        Var dr_in;
        if (sffm_dr_)
            dr_in = sffm_dr_->forward(tape, d_c_scaled, i_s, sparse.mask);
        else
            dr_in = tape.concat({d_c_scaled, i_s});
        auto dr_head = dr_->forward(tape, dr_in);
        out.d_dr = tape.slice_channels(dr_head, 0, 1);
        out.c_dr = tape.slice_channels(dr_head, 1, 1);

        if (variant_ == Variant::Full) {
            fusion::GuidanceConfigT<T> g{cfg_.cgm_alpha, cfg_.d_max};
            auto adj = fusion::cgm_on_tape(tape, out.d_c, out.c_cr, out.c_dr, g);
            out.c_cr_adj = adj.cr;
            out.c_dr_adj = adj.dr;
        } else {
            out.c_cr_adj = out.c_cr;
            out.c_dr_adj = out.c_dr;
        }
        out.d_final = tape.fuse_softmax(out.d_cr, out.d_dr, out.c_cr_adj, out.c_dr_adj);
        return out;
    }

    // Forward without gradients, returning plain tensors.
    NetworkOutputT<T> run(const TensorT<T>& color, const SparseDepthMapT<T>& sparse) {
        Tape<T> tape(false);
        auto v = forward(tape, color, sparse);
        NetworkOutputT<T> out;
        out.d_c = tape.tensor(v.d_c);
        out.d_final = tape.tensor(v.d_final);
        if (v.d_cr.valid()) {
            out.d_cr = tape.tensor(v.d_cr);
            out.d_dr = tape.tensor(v.d_dr);
            out.c_cr = tape.tensor(v.c_cr);
            out.c_dr = tape.tensor(v.c_dr);
            out.c_cr_adj = tape.tensor(v.c_cr_adj);
            out.c_dr_adj = tape.tensor(v.c_dr_adj);
        }
        return out;
    }

    // ---- single-stage surfaces ----

    TensorT<T> cp_forward(const TensorT<T>& color, const SparseDepthMapT<T>& sparse) {
        check_inputs(color, sparse);
        Tape<T> tape(false);
        Var i_c = tape.input(color);
        Var i_s = tape.scale(tape.input(sparse.depth), T(1) / cfg_.d_max);
        Var x1 = sffm1_ ? sffm1_->forward(tape, i_c, i_s, sparse.mask)
                        : tape.concat({i_c, i_s});
        return tape.tensor(cp_.forward(tape, x1));
    }

    std::pair<TensorT<T>, TensorT<T>> cr_forward(const TensorT<T>& d_c, const TensorT<T>& color) {
        if (!cr_) throw std::logic_error("variant B has no CR layer");
        if (d_c.rank() != 3 || d_c.channels() != 1 || d_c.height() != color.height() ||
            d_c.width() != color.width())
            throw std::invalid_argument("cr_forward shape mismatch: " + shape_str(d_c.shape) +
                                        " vs " + shape_str(color.shape));
        Tape<T> tape(false);
        Var dc = tape.scale(tape.input(d_c), T(1) / cfg_.d_max);
        auto head = cr_->forward(tape, tape.concat({dc, tape.input(color)}));
        return {tape.tensor(tape.slice_channels(head, 0, 1)),
                tape.tensor(tape.slice_channels(head, 1, 1))};
    }

    std::pair<TensorT<T>, TensorT<T>> dr_forward(const TensorT<T>& d_c,
                                                 const SparseDepthMapT<T>& sparse) {
        if (!dr_) throw std::logic_error("variant B has no DR layer");
        if (d_c.rank() != 3 || d_c.channels() != 1 || d_c.height() != sparse.height() ||
            d_c.width() != sparse.width())
            throw std::invalid_argument("dr_forward shape mismatch: " + shape_str(d_c.shape) +
                                        " vs " + shape_str(sparse.depth.shape));
        Tape<T> tape(false);
        const T inv_d = T(1) / cfg_.d_max;
        Var dc = tape.scale(tape.input(d_c), inv_d);
        Var i_s = tape.scale(tape.input(sparse.depth), inv_d);
        Var in = sffm_dr_ ? sffm_dr_->forward(tape, dc, i_s, sparse.mask)
                          : tape.concat({dc, i_s});
        auto head = dr_->forward(tape, in);
        return {tape.tensor(tape.slice_channels(head, 0, 1)),
                tape.tensor(tape.slice_channels(head, 1, 1))};
    }

    SffmT<T>* sffm1() { return sffm1_ ? &*sffm1_ : nullptr; }

private:
    void check_inputs(const TensorT<T>& color, const SparseDepthMapT<T>& sparse) const {
        if (color.rank() != 3 || color.channels() != 3)
            throw std::invalid_argument("color input must be 3xHxW, got " + shape_str(color.shape));
        if (color.height() != sparse.height() || color.width() != sparse.width())
            throw std::invalid_argument("color " + shape_str(color.shape) +
                                        " and sparse depth " + shape_str(sparse.depth.shape) +
                                        " disagree on spatial size");
    }

    NetConfigT<T> cfg_;
    Variant variant_;
    std::optional<SffmT<T>> sffm1_, sffm_dr_;
    EncoderDecoderT<T> cp_;
    std::optional<EncoderDecoderT<T>> stage2_, cr_, dr_;
};

using NetworkF = NetworkT<float>;
using NetworkD = NetworkT<double>;

} // namespace sdkit
