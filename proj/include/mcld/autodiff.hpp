#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mcld/tensor.hpp"

namespace mcld {

// Reverse-mode tape over Tensor<S>. A tape is built per forward pass
// (dynamic graph); backward() walks the nodes in reverse creation order.
// Backward closures capture node indices, never pointers into the node
// vector, which may reallocate while the graph grows.
template <class S>
class Tape {
public:
    using Var = int32_t;

    Var constant(Tensor<S> v) { return push(std::move(v), false, {}); }

    Var param(const Tensor<S>& v) { return push(v, true, {}); }

    const Tensor<S>& val(Var i) const { return nodes_[static_cast<size_t>(i)].val; }

    // Gradient accumulator, zero-allocated on first touch.
    Tensor<S>& g(Var i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad.numel() == 0 && n.val.numel() > 0) n.grad = Tensor<S>(n.val.shape);
        return n.grad;
    }

    const Tensor<S>& grad(Var i) const {
        const Node& n = nodes_[static_cast<size_t>(i)];
        check(n.grad.numel() > 0, "grad: node has no gradient (not on the backward path)");
        return n.grad;
    }

    bool has_grad(Var i) const { return nodes_[static_cast<size_t>(i)].grad.numel() > 0; }

    size_t size() const { return nodes_.size(); }

    void backward(Var root) {
        check(val(root).numel() == 1, "backward: root must be scalar");
        g(root).data[0] = S(1);
        for (int64_t i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs_grad && n.back && n.grad.numel() > 0) n.back(*this);
        }
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check(val(a).same_shape(val(b)), "add: shape mismatch");
        Tensor<S> out(val(a).shape);
        out.data = val(a).data + val(b).data;
        return push(std::move(out), needs(a) || needs(b), make_back([a, b](Tape& t, Var o) {
                        if (t.needs(a)) t.g(a).data += t.g(o).data;
                        if (t.needs(b)) t.g(b).data += t.g(o).data;
                    }));
    }

    Var sub(Var a, Var b) {
        check(val(a).same_shape(val(b)), "sub: shape mismatch");
        Tensor<S> out(val(a).shape);
        out.data = val(a).data - val(b).data;
        return push(std::move(out), needs(a) || needs(b), make_back([a, b](Tape& t, Var o) {
                        if (t.needs(a)) t.g(a).data += t.g(o).data;
                        if (t.needs(b)) t.g(b).data -= t.g(o).data;
                    }));
    }

    Var mul(Var a, Var b) {
        check(val(a).same_shape(val(b)), "mul: shape mismatch");
        Tensor<S> out(val(a).shape);
        out.data = val(a).data * val(b).data;
        return push(std::move(out), needs(a) || needs(b), make_back([a, b](Tape& t, Var o) {
                        if (t.needs(a)) t.g(a).data += t.g(o).data * t.val(b).data;
                        if (t.needs(b)) t.g(b).data += t.g(o).data * t.val(a).data;
                    }));
    }

    Var scale(Var a, S c) {
        Tensor<S> out(val(a).shape);
        out.data = val(a).data * c;
        return push(std::move(out), needs(a), make_back([a, c](Tape& t, Var o) {
                        if (t.needs(a)) t.g(a).data += t.g(o).data * c;
                    }));
    }

    Var silu(Var a) {
        Tensor<S> out(val(a).shape);
        for (int64_t i = 0; i < out.numel(); ++i) {
            S x = val(a).data[i];
            out.data[i] = x / (S(1) + std::exp(-x));
        }
        return push(std::move(out), needs(a), make_back([a](Tape& t, Var o) {
                        if (!t.needs(a)) return;
                        auto& ga = t.g(a);
                        const auto& go = t.g(o);
                        const auto& xv = t.val(a);
                        for (int64_t i = 0; i < xv.numel(); ++i) {
                            S x = xv.data[i];
                            S s = S(1) / (S(1) + std::exp(-x));
                            ga.data[i] += go.data[i] * s * (S(1) + x * (S(1) - s));
                        }
                    }));
    }

    // ---- linear algebra ----

    // C = op(A) * op(B), 2-D only.
    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        const Tensor<S>& av = val(a);
        const Tensor<S>& bv = val(b);
        check(av.ndim() == 2 && bv.ndim() == 2, "matmul: expected 2-D operands");
        const int64_t n = ta ? av.dim(1) : av.dim(0);
        const int64_t k = ta ? av.dim(0) : av.dim(1);
        const int64_t k2 = tb ? bv.dim(1) : bv.dim(0);
        const int64_t m = tb ? bv.dim(0) : bv.dim(1);
        check(k == k2, "matmul: inner dimension mismatch");
        Tensor<S> out({n, m});
        auto A = av.as_matrix(av.dim(0), av.dim(1));
        auto B = bv.as_matrix(bv.dim(0), bv.dim(1));
        auto C = out.as_matrix(n, m);
        if (!ta && !tb)
            C.noalias() = A * B;
        else if (ta && !tb)
            C.noalias() = A.transpose() * B;
        else if (!ta && tb)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A.transpose() * B.transpose();
        return push(std::move(out), needs(a) || needs(b),
                    make_back([a, b, ta, tb, n, m](Tape& t, Var o) {
                        const auto& av2 = t.val(a);
                        const auto& bv2 = t.val(b);
                        auto A = av2.as_matrix(av2.dim(0), av2.dim(1));
                        auto B = bv2.as_matrix(bv2.dim(0), bv2.dim(1));
                        auto G = t.g(o).as_matrix(n, m);
                        if (t.needs(a)) {
                            auto dA = t.g(a).as_matrix(av2.dim(0), av2.dim(1));
                            if (!ta && !tb)
                                dA.noalias() += G * B.transpose();
                            else if (ta && !tb)
                                dA.noalias() += B * G.transpose();
                            else if (!ta && tb)
                                dA.noalias() += G * B;
                            else
                                dA.noalias() += B.transpose() * G.transpose();
                        }
                        if (t.needs(b)) {
                            auto dB = t.g(b).as_matrix(bv2.dim(0), bv2.dim(1));
                            if (!ta && !tb)
                                dB.noalias() += A.transpose() * G;
                            else if (ta && !tb)
                                dB.noalias() += A * G;
                            else if (!ta && tb)
                                dB.noalias() += G.transpose() * A;
                            else
                                dB.noalias() += G.transpose() * A.transpose();
                        }
                    }));
    }

    // out = x·w + b (b broadcast over rows)
    Var linear(Var x, Var w, Var b) {
        Var y = matmul(x, w);
        return add_row_bias(y, b);
    }

    Var add_row_bias(Var x, Var b) {
        const Tensor<S>& xv = val(x);
        const Tensor<S>& bv = val(b);
        check(xv.ndim() == 2 && bv.numel() == xv.dim(1), "add_row_bias: width mismatch");
        Tensor<S> out = xv;
        auto M = out.as_matrix(xv.dim(0), xv.dim(1));
        for (int64_t i = 0; i < xv.dim(0); ++i) M.row(i) += bv.data.matrix().transpose();
        return push(std::move(out), needs(x) || needs(b), make_back([x, b](Tape& t, Var o) {
                        const auto& xv2 = t.val(x);
                        if (t.needs(x)) t.g(x).data += t.g(o).data;
                        if (t.needs(b)) {
                            auto G = t.g(o).as_matrix(xv2.dim(0), xv2.dim(1));
                            t.g(b).data.matrix() += G.colwise().sum().transpose();
                        }
                    }));
    }

    // Broadcast-add b[C] over the last axis of x[..., C].
    Var add_channel_bias(Var x, Var b) {
        const Tensor<S>& xv = val(x);
        const int64_t c = val(b).numel();
        check(xv.ndim() >= 1 && xv.shape.back() == c, "add_channel_bias: channel mismatch");
        const int64_t rows = xv.numel() / c;
        Tensor<S> out = xv;
        auto M = out.as_matrix(rows, c);
        for (int64_t i = 0; i < rows; ++i) M.row(i) += val(b).data.matrix().transpose();
        return push(std::move(out), needs(x) || needs(b), make_back([x, b, rows, c](Tape& t, Var o) {
                        if (t.needs(x)) t.g(x).data += t.g(o).data;
                        if (t.needs(b)) {
                            auto G = t.g(o).as_matrix(rows, c);
                            t.g(b).data.matrix() += G.colwise().sum().transpose();
                        }
                    }));
    }

    Var softmax_rows(Var a) {
        const Tensor<S>& av = val(a);
        check(av.ndim() == 2, "softmax_rows: expected 2-D");
        const int64_t n = av.dim(0), m = av.dim(1);
        Tensor<S> out({n, m});
        for (int64_t i = 0; i < n; ++i) {
            S mx = av.at(i, 0);
            for (int64_t j = 1; j < m; ++j) mx = std::max(mx, av.at(i, j));
            S sum = S(0);
            for (int64_t j = 0; j < m; ++j) {
                S e = std::exp(av.at(i, j) - mx);
                out.at(i, j) = e;
                sum += e;
            }
            for (int64_t j = 0; j < m; ++j) out.at(i, j) /= sum;
        }
        return push(std::move(out), needs(a), make_back([a, n, m](Tape& t, Var o) {
                        if (!t.needs(a)) return;
                        const auto& p = t.val(o);
                        const auto& go = t.g(o);
                        auto& ga = t.g(a);
                        for (int64_t i = 0; i < n; ++i) {
                            S dot = S(0);
                            for (int64_t j = 0; j < m; ++j) dot += go.at(i, j) * p.at(i, j);
                            for (int64_t j = 0; j < m; ++j)
                                ga.at(i, j) += p.at(i, j) * (go.at(i, j) - dot);
                        }
                    }));
    }

    Var l2_normalize_rows(Var a, S eps = S(1e-12)) {
        const Tensor<S>& av = val(a);
        check(av.ndim() == 2, "l2_normalize_rows: expected 2-D");
        const int64_t n = av.dim(0), m = av.dim(1);
        Tensor<S> out({n, m});
        for (int64_t i = 0; i < n; ++i) {
            S s = S(0);
            for (int64_t j = 0; j < m; ++j) s += av.at(i, j) * av.at(i, j);
            S r = std::sqrt(s + eps);
            for (int64_t j = 0; j < m; ++j) out.at(i, j) = av.at(i, j) / r;
        }
        return push(std::move(out), needs(a), make_back([a, n, m, eps](Tape& t, Var o) {
                        if (!t.needs(a)) return;
                        const auto& xv = t.val(a);
                        const auto& yv = t.val(o);
                        const auto& go = t.g(o);
                        auto& ga = t.g(a);
                        for (int64_t i = 0; i < n; ++i) {
                            S s = S(0);
                            for (int64_t j = 0; j < m; ++j) s += xv.at(i, j) * xv.at(i, j);
                            S r = std::sqrt(s + eps);
                            S dot = S(0);
                            for (int64_t j = 0; j < m; ++j) dot += go.at(i, j) * yv.at(i, j);
                            for (int64_t j = 0; j < m; ++j)
                                ga.at(i, j) += (go.at(i, j) - yv.at(i, j) * dot) / r;
                        }
                    }));
    }

    // ---- shape ----

    Var reshape(Var a, std::vector<int64_t> shape) {
        Tensor<S> out = val(a).reshaped(shape);
        return push(std::move(out), needs(a), make_back([a](Tape& t, Var o) {
                        if (t.needs(a)) t.g(a).data += t.g(o).data;
                    }));
    }

    Var concat_rows(Var a, Var b) {
        const Tensor<S>& av = val(a);
        const Tensor<S>& bv = val(b);
        check(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(1),
              "concat_rows: width mismatch");
        Tensor<S> out({av.dim(0) + bv.dim(0), av.dim(1)});
        out.data.head(av.numel()) = av.data;
        out.data.tail(bv.numel()) = bv.data;
        const int64_t na = av.numel();
        return push(std::move(out), needs(a) || needs(b), make_back([a, b, na](Tape& t, Var o) {
                        const auto& go = t.g(o);
                        if (t.needs(a)) t.g(a).data += go.data.head(na);
                        if (t.needs(b)) t.g(b).data += go.data.tail(go.data.size() - na);
                    }));
    }

    Var concat_channels(Var a, Var b) {
        const Tensor<S>& av = val(a);
        const Tensor<S>& bv = val(b);
        check(av.ndim() == 3 && bv.ndim() == 3 && av.dim(0) == bv.dim(0) &&
                  av.dim(1) == bv.dim(1),
              "concat_channels: spatial mismatch");
        const int64_t h = av.dim(0), w = av.dim(1), ca = av.dim(2), cb = bv.dim(2);
        Tensor<S> out({h, w, ca + cb});
        for (int64_t i = 0; i < h * w; ++i) {
            out.data.segment(i * (ca + cb), ca) = av.data.segment(i * ca, ca);
            out.data.segment(i * (ca + cb) + ca, cb) = bv.data.segment(i * cb, cb);
        }
        return push(std::move(out), needs(a) || needs(b),
                    make_back([a, b, h, w, ca, cb](Tape& t, Var o) {
                        const auto& go = t.g(o);
                        for (int64_t i = 0; i < h * w; ++i) {
                            if (t.needs(a))
                                t.g(a).data.segment(i * ca, ca) +=
                                    go.data.segment(i * (ca + cb), ca);
                            if (t.needs(b))
                                t.g(b).data.segment(i * cb, cb) +=
                                    go.data.segment(i * (ca + cb) + ca, cb);
                        }
                    }));
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        Tensor<S> out({1});
        out.data[0] = val(a).data.sum();
        return push(std::move(out), needs(a), make_back([a](Tape& t, Var o) {
                        if (t.needs(a)) t.g(a).data += t.g(o).data[0];
                    }));
    }

    Var mean_all(Var a) {
        const int64_t n = val(a).numel();
        check(n > 0, "mean_all: empty tensor");
        Tensor<S> out({1});
        out.data[0] = val(a).data.sum() / static_cast<S>(n);
        return push(std::move(out), needs(a), make_back([a, n](Tape& t, Var o) {
                        if (t.needs(a)) t.g(a).data += t.g(o).data[0] / static_cast<S>(n);
                    }));
    }

    // Multiply x[H,W,C] by a constant {0,1}-ish mask[H,W], broadcast over C.
    Var mul_mask_hw(Var x, const Tensor<S>& mask) {
        const Tensor<S>& xv = val(x);
        check(xv.ndim() == 3 && mask.ndim() == 2 && mask.dim(0) == xv.dim(0) &&
                  mask.dim(1) == xv.dim(1),
              "mul_mask_hw: shape mismatch");
        const int64_t hw = mask.numel(), c = xv.dim(2);
        Tensor<S> out = xv;
        for (int64_t i = 0; i < hw; ++i) out.data.segment(i * c, c) *= mask.data[i];
        auto mk = std::make_shared<Tensor<S>>(mask);
        return push(std::move(out), needs(x), make_back([x, mk, hw, c](Tape& t, Var o) {
                        if (!t.needs(x)) return;
                        auto& gx = t.g(x);
                        const auto& go = t.g(o);
                        for (int64_t i = 0; i < hw; ++i)
                            gx.data.segment(i * c, c) += go.data.segment(i * c, c) * mk->data[i];
                    }));
    }

    // Average-pool x[H,W,C] onto a gh×gw grid of cells -> [gh·gw, C] tokens.
    Var avg_pool_cells(Var x, int64_t gh, int64_t gw) {
        const Tensor<S>& xv = val(x);
        check(xv.ndim() == 3, "avg_pool_cells: expected H×W×C");
        const int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
        check(gh > 0 && gw > 0 && h % gh == 0 && w % gw == 0,
              "avg_pool_cells: grid must divide spatial dims");
        const int64_t ch = h / gh, cw = w / gw;
        Tensor<S> out({gh * gw, c});
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                for (int64_t y = gy * ch; y < (gy + 1) * ch; ++y)
                    for (int64_t x2 = gx * cw; x2 < (gx + 1) * cw; ++x2)
                        for (int64_t k = 0; k < c; ++k) out.at(gy * gw + gx, k) += xv.at(y, x2, k);
                for (int64_t k = 0; k < c; ++k)
                    out.at(gy * gw + gx, k) /= static_cast<S>(ch * cw);
            }
        return push(std::move(out), needs(x),
                    make_back([x, gh, gw, ch, cw, c](Tape& t, Var o) {
                        if (!t.needs(x)) return;
                        auto& gx2 = t.g(x);
                        const auto& go = t.g(o);
                        const S inv = S(1) / static_cast<S>(ch * cw);
                        for (int64_t gy = 0; gy < gh; ++gy)
                            for (int64_t gx = 0; gx < gw; ++gx)
                                for (int64_t y = gy * ch; y < (gy + 1) * ch; ++y)
                                    for (int64_t x2 = gx * cw; x2 < (gx + 1) * cw; ++x2)
                                        for (int64_t k = 0; k < c; ++k)
                                            gx2.at(y, x2, k) += go.at(gy * gw + gx, k) * inv;
                    }));
    }

    // ---- convolution ----

    // x: [H,W,Ci], w: [kh,kw,Ci,Co], b: [Co]. Zero padding.
    Var conv2d(Var x, Var w, Var b, int stride, int pad) {
        const Tensor<S>& xv = val(x);
        const Tensor<S>& wv = val(w);
        check(xv.ndim() == 3 && wv.ndim() == 4, "conv2d: bad ranks");
        const int64_t H = xv.dim(0), W = xv.dim(1), Ci = xv.dim(2);
        const int64_t kh = wv.dim(0), kw = wv.dim(1), Co = wv.dim(3);
        check(wv.dim(2) == Ci, "conv2d: input channel mismatch");
        check(val(b).numel() == Co, "conv2d: bias size mismatch");
        const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
        const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
        check(Ho > 0 && Wo > 0, "conv2d: output would be empty");
        const int64_t K = kh * kw * Ci;
        auto M = std::make_shared<MatRM<S>>(Ho * Wo, K);
        M->setZero();
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                S* row = M->data() + (oy * Wo + ox) * K;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const int64_t ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        const S* src = xv.data.data() + (iy * W + ix) * Ci;
                        S* dst = row + (ky * kw + kx) * Ci;
                        for (int64_t ci = 0; ci < Ci; ++ci) dst[ci] = src[ci];
                    }
                }
            }
        Tensor<S> out({Ho, Wo, Co});
        auto O = out.as_matrix(Ho * Wo, Co);
        auto Wm = wv.as_matrix(K, Co);
        O.noalias() = (*M) * Wm;
        for (int64_t i = 0; i < Ho * Wo; ++i) O.row(i) += val(b).data.matrix().transpose();
        return push(std::move(out), needs(x) || needs(w) || needs(b),
                    make_back([x, w, b, M, stride, pad, H, W, Ci, kh, kw, Co, Ho, Wo, K](
                                  Tape& t, Var o) {
                        auto G = t.g(o).as_matrix(Ho * Wo, Co);
                        if (t.needs(b)) t.g(b).data.matrix() += G.colwise().sum().transpose();
                        if (t.needs(w)) {
                            auto dW = t.g(w).as_matrix(K, Co);
                            dW.noalias() += M->transpose() * G;
                        }
                        if (t.needs(x)) {
                            const auto& wv2 = t.val(w);
                            auto Wm2 = wv2.as_matrix(K, Co);
                            MatRM<S> dM(Ho * Wo, K);
                            dM.noalias() = G * Wm2.transpose();
                            auto& gx = t.g(x);
                            for (int64_t oy = 0; oy < Ho; ++oy)
                                for (int64_t ox = 0; ox < Wo; ++ox) {
                                    const S* row = dM.data() + (oy * Wo + ox) * K;
                                    for (int64_t ky = 0; ky < kh; ++ky) {
                                        const int64_t iy = oy * stride + ky - pad;
                                        if (iy < 0 || iy >= H) continue;
                                        for (int64_t kx = 0; kx < kw; ++kx) {
                                            const int64_t ix = ox * stride + kx - pad;
                                            if (ix < 0 || ix >= W) continue;
                                            S* dst = gx.data.data() + (iy * W + ix) * Ci;
                                            const S* src = row + (ky * kw + kx) * Ci;
                                            for (int64_t ci = 0; ci < Ci; ++ci) dst[ci] += src[ci];
                                        }
                                    }
                                }
                        }
                    }));
    }

    // Nearest-neighbor ×2 upsample of [H,W,C].
    Var upsample2(Var x) {
        const Tensor<S>& xv = val(x);
        check(xv.ndim() == 3, "upsample2: expected H×W×C");
        const int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
        Tensor<S> out({2 * h, 2 * w, c});
        for (int64_t y = 0; y < 2 * h; ++y)
            for (int64_t x2 = 0; x2 < 2 * w; ++x2)
                for (int64_t k = 0; k < c; ++k) out.at(y, x2, k) = xv.at(y / 2, x2 / 2, k);
        return push(std::move(out), needs(x), make_back([x, h, w, c](Tape& t, Var o) {
                        if (!t.needs(x)) return;
                        auto& gx = t.g(x);
                        const auto& go = t.g(o);
                        for (int64_t y = 0; y < 2 * h; ++y)
                            for (int64_t x2 = 0; x2 < 2 * w; ++x2)
                                for (int64_t k = 0; k < c; ++k)
                                    gx.at(y / 2, x2 / 2, k) += go.at(y, x2, k);
                    }));
    }

    // Cross-entropy over logits x[n] against an integer label -> [1].
    Var ce_logits(Var x, int64_t label) {
        const Tensor<S>& xv = val(x);
        const int64_t n = xv.numel();
        check(label >= 0 && label < n, "ce_logits: label out of range");
        S mx = xv.data.maxCoeff();
        S lse = S(0);
        for (int64_t i = 0; i < n; ++i) lse += std::exp(xv.data[i] - mx);
        lse = std::log(lse) + mx;
        Tensor<S> out({1});
        out.data[0] = lse - xv.data[label];
        return push(std::move(out), needs(x), make_back([x, label, n](Tape& t, Var o) {
                        if (!t.needs(x)) return;
                        const auto& xv2 = t.val(x);
                        S mx2 = xv2.data.maxCoeff();
                        S z = S(0);
                        for (int64_t i = 0; i < n; ++i) z += std::exp(xv2.data[i] - mx2);
                        const S go = t.g(o).data[0];
                        auto& gx = t.g(x);
                        for (int64_t i = 0; i < n; ++i) {
                            S p = std::exp(xv2.data[i] - mx2) / z;
                            gx.data[i] += go * (p - (i == label ? S(1) : S(0)));
                        }
                    }));
    }

private:
    struct Node {
        Tensor<S> val;
        Tensor<S> grad;
        bool needs_grad = false;
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes_;

    bool needs(Var i) const { return nodes_[static_cast<size_t>(i)].needs_grad; }

    Var push(Tensor<S> v, bool needs_grad, std::function<void(Tape&)> back) {
        Node n;
        n.val = std::move(v);
        n.needs_grad = needs_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    template <class F>
    std::function<void(Tape&)> make_back(F&& f) {
        const Var out = static_cast<Var>(nodes_.size());  // index the new node will get
        return [f = std::forward<F>(f), out](Tape& t) { f(t, out); };
    }
};

// Adam with bias correction; state aligned with a fixed parameter list.
template <class S>
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(const std::vector<Tensor<S>*>& params, const std::vector<const Tensor<S>*>& grads) {
        check(params.size() == grads.size(), "adam: param/grad count mismatch");
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i] = ArrayX<S>::Zero(params[i]->numel());
                v_[i] = ArrayX<S>::Zero(params[i]->numel());
            }
        }
        ++t_;
        const S c1 = static_cast<S>(1.0 - std::pow(b1_, static_cast<double>(t_)));
        const S c2 = static_cast<S>(1.0 - std::pow(b2_, static_cast<double>(t_)));
        for (size_t i = 0; i < params.size(); ++i) {
            const auto& gr = grads[i]->data;
            m_[i] = static_cast<S>(b1_) * m_[i] + static_cast<S>(1.0 - b1_) * gr;
            v_[i] = static_cast<S>(b2_) * v_[i] + static_cast<S>(1.0 - b2_) * gr * gr;
            params[i]->data -=
                static_cast<S>(lr_) * (m_[i] / c1) / ((v_[i] / c2).sqrt() + static_cast<S>(eps_));
        }
    }

    double lr() const { return lr_; }

private:
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<ArrayX<S>> m_, v_;
};

// Maps parameter tensors (by address) to their tape variables.
template <class S>
struct VarMap {
    std::unordered_map<const Tensor<S>*, typename Tape<S>::Var> vars;

    typename Tape<S>::Var at(const Tensor<S>& t) const {
        auto it = vars.find(&t);
        check(it != vars.end(), "varmap: tensor not bound");
        return it->second;
    }
};

// Registers every tensor reachable via model.visit() on the tape.
template <class S, class Model>
void bind_params(Tape<S>& tape, Model& model, bool trainable, VarMap<S>& vm) {
    model.visit("", [&](const std::string&, Tensor<S>& t) {
        vm.vars[&t] = trainable ? tape.param(t) : tape.constant(t);
    });
}

}  // namespace mcld
