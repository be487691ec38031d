#pragma once

#include <string>
#include <vector>

#include "mcld/nn.hpp"
#include "mcld/synthdata.hpp"

namespace mcld {

// The three focal embeddings plus layout: I_emb (global image), A_emb
// (texture atlas), F_emb (identity).
template <class S>
struct EmbeddingSet {
    Tensor<S> i_emb;  // N_I×d
    Tensor<S> a_emb;  // N_A×d
    Tensor<S> f_emb;  // 1×d, unit norm

    static EmbeddingSet zero(int64_t tokens, int64_t d) {
        EmbeddingSet e;
        e.i_emb = zeros<S>({tokens, d});
        e.a_emb = zeros<S>({tokens, d});
        e.f_emb = zeros<S>({1, d});
        return e;
    }
};

// Small conv encoder producing `tokens` pooled tokens projected to width d.
// Stands in for the reference pipeline's frozen image encoder but is
// trained jointly with the diffusion model.
template <class S>
struct ImageEncoderParams {
    Conv<S> c1, c2;
    Dense<S> proj;
    int tokens = 1;
    int embed_dim = 0;

    int grid() const {
        return static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens))));
    }

    void init(Rng& rng, int width, int d, int tokens_ = 1) {
        tokens = tokens_;
        embed_dim = d;
        check(grid() * grid() == tokens, "image encoder: tokens must be square");
        c1.init(rng, 3, 3, 3, width, 2, 1);
        c2.init(rng, 3, 3, width, 2 * width, 2, 1);
        proj.init(rng, 2 * width, d);
    }

    template <class F>
    void visit(const std::string& p, F&& fn) {
        c1.visit(p + ".c1", fn);
        c2.visit(p + ".c2", fn);
        proj.visit(p + ".proj", fn);
    }

    typename Tape<S>::Var fwd(Tape<S>& tp, const VarMap<S>& vm, typename Tape<S>::Var img) const {
        auto h = tp.silu(c1.fwd(tp, vm, img));
        h = tp.silu(c2.fwd(tp, vm, h));
        auto tok = tp.avg_pool_cells(h, grid(), grid());
        return proj.fwd(tp, vm, tok);  // [tokens, d]
    }

    Tensor<S> embed(const Tensor<S>& image) const {
        Tape<S> tp;
        VarMap<S> vm;
        bind_params(tp, const_cast<ImageEncoderParams&>(*this), false, vm);
        return tp.val(fwd(tp, vm, tp.constant(image)));
    }
};

// Identity encoder over fixed-size face crops. Frozen after stage-1
// classification training. The raw projection output feeds the euclidean
// distance metric; F_emb is its L2 normalization.
template <class S>
struct FaceEncoderParams {
    Conv<S> c1, c2;
    Dense<S> feat;
    Dense<S> proj;
    int face_size = 16;
    int embed_dim = 0;

    void init(Rng& rng, int width, int d, int face_size_ = 16) {
        face_size = face_size_;
        embed_dim = d;
        check(face_size % 4 == 0, "face encoder: crop side must be divisible by 4");
        c1.init(rng, 3, 3, 3, width, 2, 1);
        c2.init(rng, 3, 3, width, 2 * width, 2, 1);
        const int64_t flat = static_cast<int64_t>(face_size / 4) * (face_size / 4) * 2 * width;
        feat.init(rng, flat, d);
        proj.init(rng, d, d);
    }

    template <class F>
    void visit(const std::string& p, F&& fn) {
        const std::string q = p.empty() ? "face_enc" : p;
        c1.visit(q + ".c1", fn);
        c2.visit(q + ".c2", fn);
        feat.visit(q + ".feat", fn);
        proj.visit(q + ".proj", fn);
    }

    typename Tape<S>::Var fwd_raw(Tape<S>& tp, const VarMap<S>& vm,
                                  typename Tape<S>::Var crop) const {
        const auto& shp = tp.val(crop).shape;
        check(shp.size() == 3 && shp[0] == face_size && shp[1] == face_size && shp[2] == 3,
              "face encoder: expected " + std::to_string(face_size) + "×" +
                  std::to_string(face_size) + "×3 crop");
        auto h = tp.silu(c1.fwd(tp, vm, crop));
        h = tp.silu(c2.fwd(tp, vm, h));
        auto flat = tp.reshape(h, {1, tp.val(h).numel()});
        auto fe = tp.silu(feat.fwd(tp, vm, flat));
        return proj.fwd(tp, vm, fe);  // [1, d]
    }

    // (raw, normalized) embedding pair.
    std::pair<Tensor<S>, Tensor<S>> features(const Tensor<S>& crop) const {
        Tape<S> tp;
        VarMap<S> vm;
        bind_params(tp, const_cast<FaceEncoderParams&>(*this), false, vm);
        auto raw = fwd_raw(tp, vm, tp.constant(crop));
        auto emb = tp.l2_normalize_rows(raw);
        return {tp.val(raw), tp.val(emb)};
    }
};

// Resized face crop for the encoder; empty boxes are rejected.
template <class S>
Tensor<S> face_crop_resized(const Tensor<S>& image, const std::array<int64_t, 4>& box,
                            int face_size) {
    check(box[2] > box[0] && box[3] > box[1], "face crop: empty box");
    auto c = crop(image, box[0], box[1], box[2], box[3]);
    return resize_nearest(c, face_size, face_size);
}

template <class S>
Tensor<S> face_embed(const FaceEncoderParams<S>& params, const Tensor<S>& face_crop) {
    return params.features(face_crop).second;
}

template <class S>
Tensor<S> image_embed(const ImageEncoderParams<S>& params, const Tensor<S>& image) {
    return params.embed(image);
}

template <class S>
Tensor<S> atlas_embed(const ImageEncoderParams<S>& params, const Tensor<S>& atlas_texels) {
    return params.embed(atlas_texels);
}

// Test oracle: a perfectly pose-invariant unit embedding derived from the
// generation seed alone.
inline Tensor<float> oracle_face_embed(uint64_t identity_seed, int64_t d = 64) {
    Rng rng(hash_u64(identity_seed, fnv1a64("oracle_face")));
    Tensor<float> e({1, d});
    double norm2 = 0;
    for (int64_t i = 0; i < d; ++i) {
        e.data[i] = static_cast<float>(rng.normal());
        norm2 += static_cast<double>(e.data[i]) * e.data[i];
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
    e.data *= inv;
    return e;
}

template <class S>
double cosine(const Tensor<S>& a, const Tensor<S>& b) {
    check(a.numel() == b.numel(), "cosine: size mismatch");
    double num = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        num += static_cast<double>(a.data[i]) * b.data[i];
        na += static_cast<double>(a.data[i]) * a.data[i];
        nb += static_cast<double>(b.data[i]) * b.data[i];
    }
    if (na == 0 || nb == 0) return 0;
    return num / std::sqrt(na * nb);
}

// ---------------------------------------------------------------------------
// Stage-1 face encoder training (identity classification, then frozen)
// ---------------------------------------------------------------------------

struct FaceTrainConfig {
    double lr = 2e-3;
    int steps = 1500;
    int batch = 16;
    uint64_t seed = 0;
    int width = 16;
    int embed_dim = 64;
    int face_size = 16;
};

struct FaceTrainResult {
    FaceEncoderParams<float> params;
    std::vector<double> loss_curve;
};

inline FaceTrainResult train_face_encoder(const Dataset& dataset, const FaceTrainConfig& cfg) {
    std::vector<Tensor<float>> crops;
    std::vector<int64_t> labels;
    std::vector<uint64_t> identities;
    for (const auto& p : dataset.pairs) {
        const uint64_t id = p.source.spec.identity_seed;
        int64_t label = -1;
        for (size_t i = 0; i < identities.size(); ++i)
            if (identities[i] == id) label = static_cast<int64_t>(i);
        if (label < 0) {
            label = static_cast<int64_t>(identities.size());
            identities.push_back(id);
        }
        for (const Sample* s : {&p.source, &p.target}) {
            if (s->face_box[2] <= s->face_box[0]) continue;  // headless render
            crops.push_back(face_crop_resized(s->image, s->face_box, cfg.face_size));
            labels.push_back(label);
        }
    }
    check(identities.size() >= 2, "train_face_encoder: dataset must contain >= 2 identities");
    check(!crops.empty(), "train_face_encoder: no usable face crops");
    const int64_t n_ids = static_cast<int64_t>(identities.size());

    FaceTrainResult res;
    Rng init_rng(hash_u64(cfg.seed, fnv1a64("face_init")));
    res.params.init(init_rng, cfg.width, cfg.embed_dim, cfg.face_size);
    Dense<float> head;
    head.init(init_rng, cfg.embed_dim, n_ids);

    std::vector<Tensor<float>*> params;
    res.params.visit("", [&](const std::string&, Tensor<float>& t) { params.push_back(&t); });
    head.visit("head", [&](const std::string&, Tensor<float>& t) { params.push_back(&t); });
    Adam<float> opt(cfg.lr);

    for (int step = 0; step < cfg.steps; ++step) {
        Rng step_rng(hash_u64(cfg.seed, 0xfa000000ull + static_cast<uint64_t>(step)));
        Tape<float> tp;
        VarMap<float> vm;
        bind_params(tp, res.params, true, vm);
        bind_params(tp, head, true, vm);
        typename Tape<float>::Var loss = -1;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto idx = static_cast<size_t>(
                step_rng.uniform_int(0, static_cast<int64_t>(crops.size())));
            auto raw = res.params.fwd_raw(tp, vm, tp.constant(crops[idx]));
            auto emb = tp.l2_normalize_rows(raw);
            auto logits = head.fwd(tp, vm, tp.scale(emb, 8.0f));  // sharpen unit-norm logits
            auto l = tp.ce_logits(tp.reshape(logits, {n_ids}), labels[idx]);
            loss = (loss < 0) ? l : tp.add(loss, l);
        }
        loss = tp.scale(loss, 1.0f / static_cast<float>(cfg.batch));
        const double lv = static_cast<double>(tp.val(loss).data[0]);
        if (!std::isfinite(lv))
            throw std::runtime_error("face encoder training diverged at step " +
                                     std::to_string(step));
        res.loss_curve.push_back(lv);
        tp.backward(loss);
        std::vector<const Tensor<float>*> grads;
        for (auto* p : params) grads.push_back(&tp.grad(vm.at(*p)));
        opt.step(params, grads);
    }
    return res;
}

}  // namespace mcld
