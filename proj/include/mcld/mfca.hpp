#pragma once

#include <string>

#include "mcld/embedders.hpp"
#include "mcld/nn.hpp"

namespace mcld {

// UNet region a conditioning block lives in; drives the selective switcher.
enum class StageId { Encoder, Mid, Decoder };

inline const char* stage_name(StageId s) {
    switch (s) {
        case StageId::Encoder: return "enc";
        case StageId::Mid: return "mid";
        case StageId::Decoder: return "dec";
    }
    return "?";
}

// Conditioning variants. Full keeps the per-stage switcher plus the face
// branch; B1–B5 mirror the ablation table (B1 image-only, B2/B3 plain
// concatenation, B4 drops the image embedding, B5 drops the face branch).
enum class Ablation { Full, B1, B2, B3, B4, B5 };

struct CondRouting {
    enum class SwitchMode { PerStage, AlwaysI, AlwaysA, ConcatIA, ConcatIAF };
    SwitchMode s_mode = SwitchMode::PerStage;
    bool face_branch = true;
};

inline CondRouting routing_for(Ablation a) {
    using SM = CondRouting::SwitchMode;
    switch (a) {
        case Ablation::Full: return {SM::PerStage, true};
        case Ablation::B1: return {SM::AlwaysI, false};
        case Ablation::B2: return {SM::ConcatIA, false};
        case Ablation::B3: return {SM::ConcatIAF, false};
        case Ablation::B4: return {SM::AlwaysA, true};
        case Ablation::B5: return {SM::PerStage, false};
    }
    return {};
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::Full;
    if (s == "B1" || s == "b1") return Ablation::B1;
    if (s == "B2" || s == "b2") return Ablation::B2;
    if (s == "B3" || s == "b3") return Ablation::B3;
    if (s == "B4" || s == "b4") return Ablation::B4;
    if (s == "B5" || s == "b5") return Ablation::B5;
    throw std::runtime_error("unknown ablation preset: " + s);
}

inline std::string ablation_to_string(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::B1: return "B1";
        case Ablation::B2: return "B2";
        case Ablation::B3: return "B3";
        case Ablation::B4: return "B4";
        case Ablation::B5: return "B5";
    }
    return "?";
}

// Per-block multi-focal condition aggregation weights. The lambda scales
// are configuration, not trainable parameters.
template <class S>
struct MfcaParams {
    Tensor<S> w_q;           // d_z × d_a
    Tensor<S> w_k_s, w_v_s;  // d × d_a (switcher branch)
    Tensor<S> w_k_f, w_v_f;  // d × d_a (face branch)
    Tensor<S> w_o;           // d_a × d_z
    S lambda_s = S(1.0);
    S lambda_f = S(0.5);

    void init(Rng& rng, int64_t d_z, int64_t d, int64_t d_a, double ls, double lf,
              double out_scale = 0.05) {
        const double si = 1.0 / std::sqrt(static_cast<double>(d_z));
        const double se = 1.0 / std::sqrt(static_cast<double>(d));
        const double so = out_scale / std::sqrt(static_cast<double>(d_a));
        w_q = randn<S>({d_z, d_a}, rng, si);
        w_k_s = randn<S>({d, d_a}, rng, se);
        w_v_s = randn<S>({d, d_a}, rng, se);
        w_k_f = randn<S>({d, d_a}, rng, se);
        w_v_f = randn<S>({d, d_a}, rng, se);
        w_o = randn<S>({d_a, d_z}, rng, so);
        lambda_s = static_cast<S>(ls);
        lambda_f = static_cast<S>(lf);
    }

    template <class F>
    void visit(const std::string& p, F&& fn) {
        fn(p + ".w_q", w_q);
        fn(p + ".w_k_s", w_k_s);
        fn(p + ".w_v_s", w_v_s);
        fn(p + ".w_k_f", w_k_f);
        fn(p + ".w_v_f", w_v_f);
        fn(p + ".w_o", w_o);
    }
};

// Stabilized softmax cross-attention as a pure tensor function. Shares the
// tape composite so training and inference cannot diverge.
template <class S>
Tensor<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
    check(k.ndim() == 2 && k.dim(0) >= 1, "attention: m must be >= 1");
    Tape<S> tp;
    return tp.val(attention_op(tp, tp.constant(q), tp.constant(k), tp.constant(v)));
}

// Row-stochastic attention weights (softmax(QKᵀ/√d)); diagnostic surface
// for the rows-sum-to-one property.
template <class S>
Tensor<S> attention_weights(const Tensor<S>& q, const Tensor<S>& k) {
    Tape<S> tp;
    S scale = S(1) / std::sqrt(static_cast<S>(q.dim(1)));
    auto logits = tp.scale(tp.matmul(tp.constant(q), tp.constant(k), false, true), scale);
    return tp.val(tp.softmax_rows(logits));
}

// Eq.-style switcher: Encoder takes the image embedding, Mid the
// concatenation, Decoder the atlas embedding.
template <class S>
Tensor<S> select_condition(StageId stage, const Tensor<S>& i_emb, const Tensor<S>& a_emb) {
    check(i_emb.ndim() == 2 && a_emb.ndim() == 2 && i_emb.dim(1) == a_emb.dim(1),
          "select_condition: embedding width mismatch");
    if (stage == StageId::Encoder) return i_emb;
    if (stage == StageId::Decoder) return a_emb;
    Tape<S> tp;
    return tp.val(tp.concat_rows(tp.constant(i_emb), tp.constant(a_emb)));
}

// Tape-level embedding handles used by the conditioning blocks.
template <class S>
struct EmbeddingVars {
    typename Tape<S>::Var i_emb = -1;
    typename Tape<S>::Var a_emb = -1;
    typename Tape<S>::Var f_emb = -1;
};

template <class S>
typename Tape<S>::Var select_condition_t(Tape<S>& tp, StageId stage, const EmbeddingVars<S>& emb,
                                         const CondRouting& routing) {
    using SM = CondRouting::SwitchMode;
    switch (routing.s_mode) {
        case SM::AlwaysI: return emb.i_emb;
        case SM::AlwaysA: return emb.a_emb;
        case SM::ConcatIA: return tp.concat_rows(emb.i_emb, emb.a_emb);
        case SM::ConcatIAF:
            return tp.concat_rows(tp.concat_rows(emb.i_emb, emb.a_emb), emb.f_emb);
        case SM::PerStage:
            if (stage == StageId::Encoder) return emb.i_emb;
            if (stage == StageId::Decoder) return emb.a_emb;
            return tp.concat_rows(emb.i_emb, emb.a_emb);
    }
    throw std::logic_error("select_condition_t: bad switch mode");
}

// z + proj(λ_s·Attn(Q,K_s,V_s) + λ_F·Attn(Q,K_F,V_F)); the face branch is
// dropped under the single-attention ablations.
template <class S>
typename Tape<S>::Var mfca_apply(Tape<S>& tp, const VarMap<S>& vm, const MfcaParams<S>& params,
                                 typename Tape<S>::Var z_tokens, StageId stage,
                                 const EmbeddingVars<S>& emb,
                                 const CondRouting& routing = CondRouting{}) {
    auto q = tp.matmul(z_tokens, vm.at(params.w_q));
    auto s = select_condition_t(tp, stage, emb, routing);
    auto attn_s = attention_op(tp, q, tp.matmul(s, vm.at(params.w_k_s)),
                               tp.matmul(s, vm.at(params.w_v_s)));
    auto agg = tp.scale(attn_s, params.lambda_s);
    if (routing.face_branch) {
        auto attn_f = attention_op(tp, q, tp.matmul(emb.f_emb, vm.at(params.w_k_f)),
                                   tp.matmul(emb.f_emb, vm.at(params.w_v_f)));
        agg = tp.add(agg, tp.scale(attn_f, params.lambda_f));
    }
    return tp.add(z_tokens, tp.matmul(agg, vm.at(params.w_o)));
}

// Spec-level forward over plain tensors (full routing).
template <class S>
Tensor<S> mfca_forward(const Tensor<S>& z_tokens, StageId stage, const EmbeddingSet<S>& emb,
                       const MfcaParams<S>& params) {
    Tape<S> tp;
    VarMap<S> vm;
    bind_params(tp, const_cast<MfcaParams<S>&>(params), false, vm);
    EmbeddingVars<S> ev{tp.constant(emb.i_emb), tp.constant(emb.a_emb), tp.constant(emb.f_emb)};
    return tp.val(mfca_apply(tp, vm, params, tp.constant(z_tokens), stage, ev));
}

}  // namespace mcld
