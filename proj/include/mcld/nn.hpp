#pragma once

#include <string>

#include "mcld/autodiff.hpp"

namespace mcld {

// Visit helper: forwards f with a dotted name.
#define MCLD_VISIT(f, prefix, field) f(prefix + "." #field, field)

template <class S>
struct Dense {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out]

    void init(Rng& rng, int64_t in, int64_t out, double gain = 1.0) {
        w = randn<S>({in, out}, rng, gain / std::sqrt(static_cast<double>(in)));
        b = zeros<S>({out});
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w", w);
        f(p + ".b", b);
    }

    typename Tape<S>::Var fwd(Tape<S>& tp, const VarMap<S>& vm, typename Tape<S>::Var x) const {
        return tp.linear(x, vm.at(w), vm.at(b));
    }
};

template <class S>
struct Conv {
    Tensor<S> w;  // [kh,kw,ci,co]
    Tensor<S> b;  // [co]
    int stride = 1;
    int pad = 1;

    void init(Rng& rng, int64_t kh, int64_t kw, int64_t ci, int64_t co, int stride_, int pad_,
              bool zero_init = false, double scale = 1.0) {
        stride = stride_;
        pad = pad_;
        if (zero_init) {
            w = zeros<S>({kh, kw, ci, co});
        } else {
            const double fan_in = static_cast<double>(kh * kw * ci);
            w = randn<S>({kh, kw, ci, co}, rng, scale * std::sqrt(2.0 / fan_in));
        }
        b = zeros<S>({co});
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w", w);
        f(p + ".b", b);
    }

    typename Tape<S>::Var fwd(Tape<S>& tp, const VarMap<S>& vm, typename Tape<S>::Var x) const {
        return tp.conv2d(x, vm.at(w), vm.at(b), stride, pad);
    }
};

// Two 3×3 convs with a SiLU-preactivation residual path and an optional
// per-channel timestep bias between them. Channel count is preserved. The
// second conv starts near zero so stacked residual blocks do not inflate
// activation variance at initialization.
template <class S>
struct ResBlock {
    Conv<S> c1, c2;
    Dense<S> t_proj;  // temb -> channels
    bool has_time = true;

    void init(Rng& rng, int64_t channels, int64_t temb_dim, bool with_time = true,
              double out_scale = 0.05) {
        has_time = with_time;
        c1.init(rng, 3, 3, channels, channels, 1, 1);
        c2.init(rng, 3, 3, channels, channels, 1, 1, false, out_scale);
        if (has_time) t_proj.init(rng, temb_dim, channels);
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        c1.visit(p + ".c1", f);
        c2.visit(p + ".c2", f);
        if (has_time) t_proj.visit(p + ".t_proj", f);
    }

    // temb: [1, temb_dim] (ignored when has_time is false)
    typename Tape<S>::Var fwd(Tape<S>& tp, const VarMap<S>& vm, typename Tape<S>::Var x,
                              typename Tape<S>::Var temb = -1) const {
        auto h = c1.fwd(tp, vm, tp.silu(x));
        if (has_time) {
            check(temb >= 0, "resblock: missing timestep embedding");
            auto tb = t_proj.fwd(tp, vm, temb);  // [1, channels]
            h = tp.add_channel_bias(h, tp.reshape(tb, {tp.val(tb).numel()}));
        }
        h = c2.fwd(tp, vm, tp.silu(h));
        return tp.add(x, h);
    }
};

// Scaled dot-product attention, composed from tape primitives so training
// and inference share one code path.
template <class S>
typename Tape<S>::Var attention_op(Tape<S>& tp, typename Tape<S>::Var q, typename Tape<S>::Var k,
                                   typename Tape<S>::Var v) {
    check(tp.val(k).dim(0) >= 1, "attention: no keys");
    check(tp.val(q).dim(1) == tp.val(k).dim(1) && tp.val(k).dim(0) == tp.val(v).dim(0),
          "attention: shape mismatch");
    S scale = S(1) / std::sqrt(static_cast<S>(tp.val(q).dim(1)));
#ifdef MCLD_FAULT_INJECT_ATTENTION
    scale *= S(1.01);  // test hook: selfcheck must detect this
#endif
    auto logits = tp.scale(tp.matmul(q, k, false, true), scale);
    auto p = tp.softmax_rows(logits);
    return tp.matmul(p, v);
}

// Single-head self-attention block with residual: x + Attn(xWq, xWk, xWv)·Wo.
// The output projection starts small, like the residual convs.
template <class S>
struct SelfAttn {
    Tensor<S> w_q, w_k, w_v;  // [c, d_a]
    Tensor<S> w_o;            // [d_a, c]

    void init(Rng& rng, int64_t c, int64_t d_a, double out_scale = 0.05) {
        const double s_in = 1.0 / std::sqrt(static_cast<double>(c));
        const double s_out = out_scale / std::sqrt(static_cast<double>(d_a));
        w_q = randn<S>({c, d_a}, rng, s_in);
        w_k = randn<S>({c, d_a}, rng, s_in);
        w_v = randn<S>({c, d_a}, rng, s_in);
        w_o = randn<S>({d_a, c}, rng, s_out);
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w_q", w_q);
        f(p + ".w_k", w_k);
        f(p + ".w_v", w_v);
        f(p + ".w_o", w_o);
    }

    typename Tape<S>::Var fwd(Tape<S>& tp, const VarMap<S>& vm, typename Tape<S>::Var x) const {
        auto q = tp.matmul(x, vm.at(w_q));
        auto k = tp.matmul(x, vm.at(w_k));
        auto v = tp.matmul(x, vm.at(w_v));
        auto a = attention_op(tp, q, k, v);
        return tp.add(x, tp.matmul(a, vm.at(w_o)));
    }
};

// Collects (name, tensor*) pairs in visit order.
template <class S, class Model>
std::vector<std::pair<std::string, Tensor<S>*>> named_params(Model& m, const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    m.visit(prefix, [&](const std::string& name, Tensor<S>& t) { out.emplace_back(name, &t); });
    return out;
}

template <class S, class Model>
int64_t param_count(Model& m) {
    int64_t n = 0;
    m.visit("", [&](const std::string&, Tensor<S>& t) { n += t.numel(); });
    return n;
}

}  // namespace mcld
