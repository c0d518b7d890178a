#pragma once

#include "sdkit/kernels.hpp"
#include "sdkit/log.hpp"
#include "sdkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace sdkit {

// Reverse-mode tape over the op set this network needs. Values are computed
// eagerly; each recorded op contributes a closure that scatters gradients to
// its inputs. One tape per batch item; parameter gradients are flushed into
// the bound tensors after backward so the caller can reduce across items in
// a fixed order.
template <typename T>
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves ----

    Var input(const TensorT<T>& t, bool requires_grad = false) {
        return push(t.shape, t.data, requires_grad && grad_enabled_, nullptr);
    }

    Var param(TensorT<T>& t) {
        Var v = push(t.shape, t.data, grad_enabled_, nullptr);
        nodes_[v.id].bound = &t;
        return v;
    }

    // ---- ops ----

    Var conv2d(Var x, Var w, Var b, int stride, int pad) {
        const auto& xs = node(x).shape;
        const auto& ws = node(w).shape;
        if (ws.size() != 4) throw std::invalid_argument("conv weights must be OCxICxKxK, got " + shape_str(ws));
        const bool batched = xs.size() == 4;
        if (!batched && xs.size() != 3)
            throw std::invalid_argument("conv input must be CxHxW or NxCxHxW, got " + shape_str(xs));
        const int in_c = batched ? xs[1] : xs[0];
        if (in_c != ws[1])
            throw std::invalid_argument("conv channel mismatch: input " + shape_str(xs) +
                                        " vs weights " + shape_str(ws));
        if (ws[2] != ws[3] || ws[2] % 2 == 0)
            throw std::invalid_argument("conv kernel must be square and odd, got " + shape_str(ws));
        if (b.valid() && (node(b).shape.size() != 1 || node(b).shape[0] != ws[0]))
            throw std::invalid_argument("conv bias shape " + shape_str(node(b).shape) +
                                        " does not match out channels of " + shape_str(ws));

        kern::Conv2dDims d;
        d.in_c = in_c;
        d.in_h = batched ? xs[2] : xs[1];
        d.in_w = batched ? xs[3] : xs[2];
        d.out_c = ws[0];
        d.k = ws[2];
        d.stride = stride;
        d.pad = pad;
        if (d.out_h() <= 0 || d.out_w() <= 0)
            throw std::invalid_argument("conv output would be empty for input " + shape_str(xs));

        const int batch = batched ? xs[0] : 1;
        const std::size_t x_item = static_cast<std::size_t>(d.in_c) * d.in_h * d.in_w;
        const std::size_t y_item = static_cast<std::size_t>(d.out_c) * d.out_h() * d.out_w();
        Shape ys = batched ? Shape{batch, d.out_c, d.out_h(), d.out_w()}
                           : Shape{d.out_c, d.out_h(), d.out_w()};
        std::vector<T> y(static_cast<std::size_t>(batch) * y_item);
        const T* bias = b.valid() ? node(b).val.data() : nullptr;
        for (int n = 0; n < batch; ++n)
            kern::conv2d_forward<T>(node(x).val.data() + n * x_item, d,
                                    node(w).val.data(), bias, y.data() + n * y_item);

        Var out = push(std::move(ys), std::move(y), needs_grad(x) || needs_grad(w) || needs_grad(b), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1, oid = out.id;
            node(out).back = [xid, wid, bid, oid, d, batch, x_item, y_item](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                for (int n = 0; n < batch; ++n) {
                    const T* g = gy.data() + n * y_item;
                    if (tp.requires_id(xid))
                        kern::conv2d_backward_input<T>(g, d, tp.nodes_[wid].val.data(),
                                                       tp.nodes_[xid].grad.data() + n * x_item);
                    if (tp.requires_id(wid))
                        kern::conv2d_backward_weights<T>(
                            g, d, tp.nodes_[xid].val.data() + n * x_item,
                            tp.nodes_[wid].grad.data(),
                            bid >= 0 && tp.requires_id(bid) ? tp.nodes_[bid].grad.data() : nullptr);
                }
            };
        }
        return out;
    }

    // Sparsity-invariant convolution: out = conv(x .* m, w) / (count + eps) + bias,
    // where count is the number of valid pixels under the window. The output
    // mask is the k x k dilation of the input mask. Stride 1, size-preserving.
    std::pair<Var, ValidityMaskT<T>> si_conv2d(Var x, const ValidityMaskT<T>& mask, Var w, Var b,
                                               T eps = T(1e-8)) {
        const auto& xs = node(x).shape;
        const auto& ws = node(w).shape;
        if (xs.size() != 3)
            throw std::invalid_argument("si_conv input must be CxHxW, got " + shape_str(xs));
        if (ws.size() != 4 || ws[1] != xs[0])
            throw std::invalid_argument("si_conv channel mismatch: input " + shape_str(xs) +
                                        " vs weights " + shape_str(ws));
        if (mask.h != xs[1] || mask.w != xs[2])
            throw std::invalid_argument("si_conv mask " + std::to_string(mask.h) + "x" +
                                        std::to_string(mask.w) + " does not match input " +
                                        shape_str(xs));
        const int k = ws[2];
        if (k != ws[3] || k % 2 == 0) throw std::invalid_argument("si_conv kernel must be square and odd");
        if (eps <= T(0)) throw std::invalid_argument("si_conv epsilon must be positive");

        kern::Conv2dDims d;
        d.in_c = xs[0];
        d.in_h = xs[1];
        d.in_w = xs[2];
        d.out_c = ws[0];
        d.k = k;
        d.stride = 1;
        d.pad = (k - 1) / 2;

        const int h = d.in_h, wd = d.in_w;
        const std::size_t plane = static_cast<std::size_t>(h) * wd;

        if (mask.count() == 0)
            log::warn("si_conv2d: mask has no valid pixels; output carries bias only");

        // masked input and window support count
        auto xm = std::make_shared<std::vector<T>>(node(x).val);
        for (int c = 0; c < d.in_c; ++c)
            for (std::size_t i = 0; i < plane; ++i) (*xm)[c * plane + i] *= mask.data[i];

        auto inv = std::make_shared<std::vector<T>>(plane);
        ValidityMaskT<T> out_mask(h, wd);
        const int r = d.pad;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < wd; ++xx) {
                T cnt(0);
                for (int dy = -r; dy <= r; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= h) continue;
                    for (int dx = -r; dx <= r; ++dx) {
                        const int xc = xx + dx;
                        if (xc < 0 || xc >= wd) continue;
                        cnt += mask.at(yy, xc);
                    }
                }
                (*inv)[y * wd + xx] = T(1) / (cnt + eps);
                out_mask.at(y, xx) = cnt > T(0) ? T(1) : T(0);
            }
        }

        std::vector<T> y(static_cast<std::size_t>(d.out_c) * plane);
        kern::conv2d_forward<T>(xm->data(), d, node(w).val.data(), nullptr, y.data());
        const T* bias = b.valid() ? node(b).val.data() : nullptr;
        for (int oc = 0; oc < d.out_c; ++oc) {
            const T bo = bias ? bias[oc] : T(0);
            T* yc = y.data() + oc * plane;
            for (std::size_t i = 0; i < plane; ++i) yc[i] = yc[i] * (*inv)[i] + bo;
        }

        Var out = push(Shape{d.out_c, h, wd}, std::move(y), needs_grad(x) || needs_grad(w) || needs_grad(b),
                       nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1, oid = out.id;
            auto mvals = std::make_shared<std::vector<T>>(mask.data);
            node(out).back = [xid, wid, bid, oid, d, plane, xm, inv, mvals](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                std::vector<T> gn(gy.size());
                for (int oc = 0; oc < d.out_c; ++oc)
                    for (std::size_t i = 0; i < plane; ++i)
                        gn[oc * plane + i] = gy[oc * plane + i] * (*inv)[i];
                if (tp.requires_id(xid)) {
                    std::vector<T> gxm(static_cast<std::size_t>(d.in_c) * plane, T(0));
                    kern::conv2d_backward_input<T>(gn.data(), d, tp.nodes_[wid].val.data(), gxm.data());
                    auto& gx = tp.nodes_[xid].grad;
                    for (int c = 0; c < d.in_c; ++c)
                        for (std::size_t i = 0; i < plane; ++i)
                            gx[c * plane + i] += gxm[c * plane + i] * (*mvals)[i];
                }
                if (tp.requires_id(wid))
                    kern::conv2d_backward_weights<T>(gn.data(), d, xm->data(),
                                                     tp.nodes_[wid].grad.data(), nullptr);
                if (bid >= 0 && tp.requires_id(bid)) {
                    auto& gb = tp.nodes_[bid].grad;
                    for (int oc = 0; oc < d.out_c; ++oc) {
                        T acc(0);
                        for (std::size_t i = 0; i < plane; ++i) acc += gy[oc * plane + i];
                        gb[oc] += acc;
                    }
                }
            };
        }
        return {out, std::move(out_mask)};
    }

    Var relu(Var x) {
        const auto& xv = node(x).val;
        std::vector<T> y(xv.size());
        kern::relu_forward<T>(xv.data(), xv.size(), y.data());
        Var out = push(node(x).shape, std::move(y), needs_grad(x), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, oid = out.id;
            node(out).back = [xid, oid](Tape& tp) {
                const auto& yn = tp.nodes_[oid];
                kern::relu_backward<T>(yn.val.data(), yn.grad.data(), yn.val.size(),
                                       tp.nodes_[xid].grad.data());
            };
        }
        return out;
    }

    Var add(Var a, Var b) { return binary(a, b, T(1), T(1)); }
    Var sub(Var a, Var b) { return binary(a, b, T(1), T(-1)); }

    Var mul(Var a, Var b) {
        if (node(a).shape != node(b).shape)
            throw std::invalid_argument("elementwise shape mismatch: " + shape_str(node(a).shape) +
                                        " vs " + shape_str(node(b).shape));
        const auto &av = node(a).val, &bv = node(b).val;
        std::vector<T> y(av.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
        Var out = push(node(a).shape, std::move(y), needs_grad(a) || needs_grad(b), nullptr);
        if (node(out).requires_grad) {
            const int aid = a.id, bid = b.id, oid = out.id;
            node(out).back = [aid, bid, oid](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                const auto &av = tp.nodes_[aid].val, &bv = tp.nodes_[bid].val;
                if (tp.requires_id(aid)) {
                    auto& ga = tp.nodes_[aid].grad;
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
                }
                if (tp.requires_id(bid)) {
                    auto& gb = tp.nodes_[bid].grad;
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
                }
            };
        }
        return out;
    }

    // a*x + b, elementwise with scalar coefficients
    Var scale(Var x, T a, T b = T(0)) {
        const auto& xv = node(x).val;
        std::vector<T> y(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) y[i] = a * xv[i] + b;
        Var out = push(node(x).shape, std::move(y), needs_grad(x), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, oid = out.id;
            node(out).back = [xid, oid, a](Tape& tp) {
                kern::axpy<T>(a, tp.nodes_[oid].grad.data(), tp.nodes_[oid].grad.size(),
                              tp.nodes_[xid].grad.data());
            };
        }
        return out;
    }

    Var clamp01(Var x) {
        const auto& xv = node(x).val;
        std::vector<T> y(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) y[i] = std::min(T(1), std::max(T(0), xv[i]));
        Var out = push(node(x).shape, std::move(y), needs_grad(x), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, oid = out.id;
            node(out).back = [xid, oid](Tape& tp) {
                const auto& xv = tp.nodes_[xid].val;
                const auto& gy = tp.nodes_[oid].grad;
                auto& gx = tp.nodes_[xid].grad;
                for (std::size_t i = 0; i < xv.size(); ++i)
                    if (xv[i] > T(0) && xv[i] < T(1)) gx[i] += gy[i];
            };
        }
        return out;
    }

    Var concat(const std::vector<Var>& xs) {
        if (xs.empty()) throw std::invalid_argument("concat of nothing");
        const int h = node(xs[0]).shape.at(1), w = node(xs[0]).shape.at(2);
        int c_total = 0;
        bool rg = false;
        for (Var v : xs) {
            const auto& s = node(v).shape;
            if (s.size() != 3 || s[1] != h || s[2] != w)
                throw std::invalid_argument("concat spatial mismatch: " + shape_str(node(xs[0]).shape) +
                                            " vs " + shape_str(s));
            c_total += s[0];
            rg = rg || needs_grad(v);
        }
        std::vector<T> y;
        y.reserve(static_cast<std::size_t>(c_total) * h * w);
        for (Var v : xs) y.insert(y.end(), node(v).val.begin(), node(v).val.end());
        Var out = push(Shape{c_total, h, w}, std::move(y), rg, nullptr);
        if (node(out).requires_grad) {
            std::vector<int> ids(xs.size());
            for (std::size_t i = 0; i < xs.size(); ++i) ids[i] = xs[i].id;
            const int oid = out.id;
            node(out).back = [ids, oid](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                std::size_t off = 0;
                for (int id : ids) {
                    auto& n = tp.nodes_[id];
                    if (tp.requires_id(id))
                        for (std::size_t i = 0; i < n.val.size(); ++i) n.grad[i] += gy[off + i];
                    off += n.val.size();
                }
            };
        }
        return out;
    }

    Var slice_channels(Var x, int from, int count) {
        const auto& s = node(x).shape;
        if (s.size() != 3 || from < 0 || count <= 0 || from + count > s[0])
            throw std::invalid_argument("bad channel slice [" + std::to_string(from) + "," +
                                        std::to_string(from + count) + ") of " + shape_str(s));
        const std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
        std::vector<T> y(node(x).val.begin() + from * plane,
                         node(x).val.begin() + (from + count) * plane);
        Var out = push(Shape{count, s[1], s[2]}, std::move(y), needs_grad(x), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, oid = out.id;
            const std::size_t off = from * plane;
            node(out).back = [xid, oid, off](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                auto& gx = tp.nodes_[xid].grad;
                for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
            };
        }
        return out;
    }

    Var upsample_nearest2(Var x) {
        const auto& s = node(x).shape;
        if (s.size() != 3) throw std::invalid_argument("upsample input must be CxHxW");
        const int c = s[0], h = s[1], w = s[2];
        std::vector<T> y(static_cast<std::size_t>(c) * 4 * h * w);
        const auto& xv = node(x).val;
        for (int ci = 0; ci < c; ++ci)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) {
                    const T v = xv[(static_cast<std::size_t>(ci) * h + yy) * w + xx];
                    T* base = y.data() + (static_cast<std::size_t>(ci) * 2 * h + 2 * yy) * 2 * w + 2 * xx;
                    base[0] = v;
                    base[1] = v;
                    base[2 * w] = v;
                    base[2 * w + 1] = v;
                }
        Var out = push(Shape{c, 2 * h, 2 * w}, std::move(y), needs_grad(x), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, oid = out.id;
            node(out).back = [xid, oid, c, h, w](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                auto& gx = tp.nodes_[xid].grad;
                for (int ci = 0; ci < c; ++ci)
                    for (int yy = 0; yy < h; ++yy)
                        for (int xx = 0; xx < w; ++xx) {
                            const T* base =
                                gy.data() + (static_cast<std::size_t>(ci) * 2 * h + 2 * yy) * 2 * w + 2 * xx;
                            gx[(static_cast<std::size_t>(ci) * h + yy) * w + xx] +=
                                base[0] + base[1] + base[2 * w] + base[2 * w + 1];
                        }
            };
        }
        return out;
    }

    // Magnitude of the 3x3 Sobel response with replicate border handling.
    Var sobel_mag(Var x) {
        const auto& s = node(x).shape;
        if (s.size() != 3 || s[0] != 1)
            throw std::invalid_argument("sobel expects a single-channel map, got " + shape_str(s));
        const int h = s[1], w = s[2];
        const auto& xv = node(x).val;
        auto gxv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(h) * w);
        auto gyv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(h) * w);
        std::vector<T> mag(static_cast<std::size_t>(h) * w);
        auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
        auto px = [&](int y, int x) {
            return xv[static_cast<std::size_t>(clampi(y, h)) * w + clampi(x, w)];
        };
        // evaluated as (positive tap sum) - (negative tap sum) so constant
        // regions cancel exactly
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const T right = px(y - 1, xx + 1) + T(2) * px(y, xx + 1) + px(y + 1, xx + 1);
                const T left = px(y - 1, xx - 1) + T(2) * px(y, xx - 1) + px(y + 1, xx - 1);
                const T bottom = px(y + 1, xx - 1) + T(2) * px(y + 1, xx) + px(y + 1, xx + 1);
                const T top = px(y - 1, xx - 1) + T(2) * px(y - 1, xx) + px(y - 1, xx + 1);
                const T ax = right - left;
                const T ay = bottom - top;
                (*gxv)[y * w + xx] = ax;
                (*gyv)[y * w + xx] = ay;
                mag[y * w + xx] = std::sqrt(ax * ax + ay * ay);
            }
        }
        Var out = push(Shape{1, h, w}, std::move(mag), needs_grad(x), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, oid = out.id;
            node(out).back = [xid, oid, h, w, gxv, gyv](Tape& tp) {
                const auto& on = tp.nodes_[oid];
                auto& gx = tp.nodes_[xid].grad;
                auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
                static constexpr int KX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
                static constexpr int KY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const std::size_t i = static_cast<std::size_t>(y) * w + xx;
                        const T m = on.val[i];
                        if (m <= T(0)) continue; // subgradient 0 at the cusp
                        const T a = on.grad[i] / m;
                        const T dgx = a * (*gxv)[i];
                        const T dgy = a * (*gyv)[i];
                        for (int dy = 0; dy < 3; ++dy)
                            for (int dx = 0; dx < 3; ++dx)
                                gx[static_cast<std::size_t>(clampi(y + dy - 1, h)) * w +
                                   clampi(xx + dx - 1, w)] +=
                                    T(KX[dy][dx]) * dgx + T(KY[dy][dx]) * dgy;
                    }
            };
        }
        return out;
    }

    // Two-way confidence-weighted blend: softmax(c1, c2) over the channel
    // pair, computed max-shifted so large logits cannot overflow.
    Var fuse_softmax(Var d1, Var d2, Var c1, Var c2) {
        const auto& s = node(d1).shape;
        for (Var v : {d2, c1, c2})
            if (node(v).shape != s)
                throw std::invalid_argument("fuse shape mismatch: " + shape_str(s) + " vs " +
                                            shape_str(node(v).shape));
        for (Var v : {d1, d2, c1, c2})
            for (T t : node(v).val)
                if (!std::isfinite(static_cast<double>(t)))
                    throw std::runtime_error("fuse rejects non-finite inputs");
        const std::size_t n = node(d1).val.size();
        auto w1 = std::make_shared<std::vector<T>>(n);
        std::vector<T> y(n);
        {
            const auto &D1 = node(d1).val, &D2 = node(d2).val;
            const auto &C1 = node(c1).val, &C2 = node(c2).val;
            for (std::size_t i = 0; i < n; ++i) {
                const T mx = std::max(C1[i], C2[i]);
                const T e1 = std::exp(C1[i] - mx);
                const T e2 = std::exp(C2[i] - mx);
                const T s1 = e1 / (e1 + e2);
                (*w1)[i] = s1;
                y[i] = s1 * D1[i] + (T(1) - s1) * D2[i];
            }
        }
        Var out = push(s, std::move(y),
                       needs_grad(d1) || needs_grad(d2) || needs_grad(c1) || needs_grad(c2), nullptr);
        if (node(out).requires_grad) {
            const int i1 = d1.id, i2 = d2.id, j1 = c1.id, j2 = c2.id, oid = out.id;
            node(out).back = [i1, i2, j1, j2, oid, w1, n](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                const auto &D1 = tp.nodes_[i1].val, &D2 = tp.nodes_[i2].val;
                for (std::size_t i = 0; i < n; ++i) {
                    const T s1 = (*w1)[i];
                    const T g = gy[i];
                    if (tp.requires_id(i1)) tp.nodes_[i1].grad[i] += g * s1;
                    if (tp.requires_id(i2)) tp.nodes_[i2].grad[i] += g * (T(1) - s1);
                    const T dc = g * s1 * (T(1) - s1) * (D1[i] - D2[i]);
                    if (tp.requires_id(j1)) tp.nodes_[j1].grad[i] += dc;
                    if (tp.requires_id(j2)) tp.nodes_[j2].grad[i] -= dc;
                }
            };
        }
        return out;
    }

    // Mean squared error over the valid set of gt; invalid pixels contribute
    // neither to the mean nor to the gradient.
    Var masked_mse(Var pred, const SparseDepthMapT<T>& gt) {
        const auto& s = node(pred).shape;
        if (s != gt.depth.shape)
            throw std::invalid_argument("masked_mse shape mismatch: pred " + shape_str(s) +
                                        " vs gt " + shape_str(gt.depth.shape));
        const std::int64_t nv = gt.mask.count();
        if (nv == 0) throw std::invalid_argument("masked_mse: ground truth has no valid pixels");
        const auto& pv = node(pred).val;
        double acc = 0;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            if (gt.mask.data[i] == T(0)) continue;
            const double r = static_cast<double>(gt.depth.data[i]) - static_cast<double>(pv[i]);
            acc += r * r;
        }
        std::vector<T> y{static_cast<T>(acc / static_cast<double>(nv))};
        Var out = push(Shape{1}, std::move(y), needs_grad(pred), nullptr);
        if (node(out).requires_grad) {
            const int pid = pred.id, oid = out.id;
            auto gtd = std::make_shared<std::vector<T>>(gt.depth.data);
            auto gtm = std::make_shared<std::vector<T>>(gt.mask.data);
            node(out).back = [pid, oid, gtd, gtm, nv](Tape& tp) {
                const T seed = tp.nodes_[oid].grad[0];
                auto& gp = tp.nodes_[pid].grad;
                const auto& pv = tp.nodes_[pid].val;
                const T c = seed * T(2) / static_cast<T>(nv);
                for (std::size_t i = 0; i < pv.size(); ++i)
                    if ((*gtm)[i] != T(0)) gp[i] += c * (pv[i] - (*gtd)[i]);
            };
        }
        return out;
    }

    // a*x + b*y elementwise (used to combine scalar losses)
    Var wsum(T a, Var x, T b, Var y) {
        if (node(x).shape != node(y).shape)
            throw std::invalid_argument("wsum shape mismatch: " + shape_str(node(x).shape) + " vs " +
                                        shape_str(node(y).shape));
        const auto &xv = node(x).val, &yv = node(y).val;
        std::vector<T> z(xv.size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * xv[i] + b * yv[i];
        Var out = push(node(x).shape, std::move(z), needs_grad(x) || needs_grad(y), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, yid = y.id, oid = out.id;
            node(out).back = [xid, yid, oid, a, b](Tape& tp) {
                const auto& gz = tp.nodes_[oid].grad;
                if (tp.requires_id(xid))
                    kern::axpy<T>(a, gz.data(), gz.size(), tp.nodes_[xid].grad.data());
                if (tp.requires_id(yid))
                    kern::axpy<T>(b, gz.data(), gz.size(), tp.nodes_[yid].grad.data());
            };
        }
        return out;
    }

    // Frozen-coefficient contraction to a scalar; the projection tensor is a
    // constant. Used by the gradient checks to reduce any output to one number.
    Var dot_const(Var x, std::shared_ptr<const std::vector<T>> r) {
        const auto& xv = node(x).val;
        if (!r || r->size() != xv.size()) throw std::invalid_argument("dot_const size mismatch");
        double acc = 0;
        for (std::size_t i = 0; i < xv.size(); ++i)
            acc += static_cast<double>(xv[i]) * static_cast<double>((*r)[i]);
        Var out = push(Shape{1}, std::vector<T>{static_cast<T>(acc)}, needs_grad(x), nullptr);
        if (node(out).requires_grad) {
            const int xid = x.id, oid = out.id;
            node(out).back = [xid, oid, r](Tape& tp) {
                kern::axpy<T>(tp.nodes_[oid].grad[0], r->data(), r->size(),
                              tp.nodes_[xid].grad.data());
            };
        }
        return out;
    }

    // ---- access & backward ----

    const std::vector<T>& value(Var v) const { return node(v).val; }
    const Shape& shape(Var v) const { return node(v).shape; }

    TensorT<T> tensor(Var v) const {
        TensorT<T> t;
        t.shape = node(v).shape;
        t.data = node(v).val;
        return t;
    }

    const std::vector<T>& grad(Var v) const {
        if (!backward_done_) throw std::logic_error("grad requested before backward");
        return node(v).grad;
    }

    void backward(Var out, bool flush_params = true) {
        std::vector<T> seed(node(out).val.size(), T(1));
        backward(out, seed, flush_params);
    }

    // With flush_params = false the gradients stay on the tape (read them
    // via grad()); callers running several tapes concurrently use this and
    // reduce into the parameter tensors in a fixed order themselves.
    void backward(Var out, const std::vector<T>& seed, bool flush_params = true) {
        if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
        if (!out.valid() || out.id >= static_cast<int>(nodes_.size()))
            throw std::logic_error("backward before forward: output was never recorded");
        if (backward_done_) throw std::logic_error("backward already ran on this tape");
        if (seed.size() != node(out).val.size())
            throw std::invalid_argument("seed gradient size mismatch");
        for (int i = 0; i <= out.id; ++i)
            if (nodes_[i].requires_grad) nodes_[i].grad.assign(nodes_[i].val.size(), T(0));
        if (!nodes_[out.id].requires_grad)
            nodes_[out.id].grad.assign(nodes_[out.id].val.size(), T(0));
        nodes_[out.id].grad = seed;
        for (int i = out.id; i >= 0; --i)
            if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back(*this);
        backward_done_ = true;
        if (!flush_params) return;
        for (auto& n : nodes_) {
            if (!n.bound || !n.requires_grad) continue;
            if (n.bound->grad.size() != n.bound->data.size()) n.bound->alloc_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    bool grad_enabled() const { return grad_enabled_; }

    // Gradients of tensors registered via param(), in registration order.
    struct BoundGrad {
        TensorT<T>* tensor;
        const std::vector<T>* grad;
    };
    std::vector<BoundGrad> bound_grads() const {
        if (!backward_done_) throw std::logic_error("bound_grads before backward");
        std::vector<BoundGrad> out;
        for (const auto& n : nodes_)
            if (n.bound && n.requires_grad) out.push_back({n.bound, &n.grad});
        return out;
    }

private:
    struct Node {
        Shape shape;
        std::vector<T> val;
        std::vector<T> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> back;
        TensorT<T>* bound = nullptr;
    };

    Var push(Shape s, std::vector<T> v, bool rg, std::function<void(Tape&)> back) {
        Node n;
        n.shape = std::move(s);
        n.val = std::move(v);
        n.requires_grad = rg && grad_enabled_;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var binary(Var a, Var b, T ca, T cb) {
        if (node(a).shape != node(b).shape)
            throw std::invalid_argument("elementwise shape mismatch: " + shape_str(node(a).shape) +
                                        " vs " + shape_str(node(b).shape));
        const auto &av = node(a).val, &bv = node(b).val;
        std::vector<T> y(av.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = ca * av[i] + cb * bv[i];
        Var out = push(node(a).shape, std::move(y), needs_grad(a) || needs_grad(b), nullptr);
        if (node(out).requires_grad) {
            const int aid = a.id, bid = b.id, oid = out.id;
            node(out).back = [aid, bid, oid, ca, cb](Tape& tp) {
                const auto& gy = tp.nodes_[oid].grad;
                if (tp.requires_id(aid))
                    kern::axpy<T>(ca, gy.data(), gy.size(), tp.nodes_[aid].grad.data());
                if (tp.requires_id(bid))
                    kern::axpy<T>(cb, gy.data(), gy.size(), tp.nodes_[bid].grad.data());
            };
        }
        return out;
    }

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw std::logic_error("use of an invalid tape variable");
        return nodes_[v.id];
    }
    Node& node(Var v) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(v)); }

    bool needs_grad(Var v) const { return v.valid() && node(v).requires_grad; }
    bool requires_id(int id) const { return id >= 0 && nodes_[id].requires_grad; }

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
    bool backward_done_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

} // namespace sdkit
