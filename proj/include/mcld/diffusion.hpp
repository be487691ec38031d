#pragma once

#include <functional>
#include <optional>
#include <set>
#include <vector>

#include "mcld/models.hpp"
#include "mcld/synthdata.hpp"

namespace mcld {

// ---------------------------------------------------------------------------
// Noise schedule and forward process
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    int T = 1000;
    std::vector<double> betas;       // index t-1
    std::vector<double> alphas;      // 1 - beta
    std::vector<double> alpha_bars;  // cumulative product

    double alpha_bar(int t) const {  // alpha_bar(0) == 1 by convention
        check(t >= 0 && t <= T, "alpha_bar: t out of range");
        return t == 0 ? 1.0 : alpha_bars[static_cast<size_t>(t - 1)];
    }
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    check(T >= 1, "make_schedule: T must be >= 1");
    check(beta_start > 0 && beta_start < beta_end && beta_end < 1,
          "make_schedule: need 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double beta =
            T == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                      static_cast<double>(T - 1);
        s.betas[static_cast<size_t>(t)] = beta;
        s.alphas[static_cast<size_t>(t)] = 1.0 - beta;
        prod *= 1.0 - beta;
        s.alpha_bars[static_cast<size_t>(t)] = prod;
    }
    return s;
}

inline NoiseSchedule make_schedule(const RunConfig& cfg) {
    return make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
}

// z_t = sqrt(abar_t)·z0 + sqrt(1−abar_t)·noise, t in [1, T].
template <class S>
Tensor<S> q_sample(const NoiseSchedule& sched, const Tensor<S>& z0, int t,
                   const Tensor<S>& noise) {
    check(t >= 1 && t <= sched.T, "q_sample: t out of range [1, T]");
    check(z0.same_shape(noise), "q_sample: shape mismatch");
    const S a = static_cast<S>(std::sqrt(sched.alpha_bar(t)));
    const S b = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar(t)));
    Tensor<S> out(z0.shape);
    out.data = a * z0.data + b * noise.data;
    return out;
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

template <class S>
double loss_mse(const Tensor<S>& eps, const Tensor<S>& eps_hat) {
    check(eps.same_shape(eps_hat), "loss_mse: shape mismatch");
    double acc = 0;
    for (int64_t i = 0; i < eps.numel(); ++i) {
        const double d = static_cast<double>(eps.data[i]) - static_cast<double>(eps_hat.data[i]);
        acc += d * d;
    }
    return eps.numel() ? acc / static_cast<double>(eps.numel()) : 0.0;
}

// Mean squared error over the masked elements only; zero on an empty mask.
// m is an {0,1} latent-resolution mask broadcast over channels.
template <class S>
double loss_face(const Tensor<S>& eps, const Tensor<S>& eps_hat, const Tensor<S>& m) {
    check(eps.same_shape(eps_hat), "loss_face: shape mismatch");
    check(eps.ndim() == 3 && m.ndim() == 2 && m.dim(0) == eps.dim(0) && m.dim(1) == eps.dim(1),
          "loss_face: mask must match the spatial dims");
    double acc = 0;
    int64_t count = 0;
    const int64_t c = eps.dim(2);
    for (int64_t y = 0; y < eps.dim(0); ++y)
        for (int64_t x = 0; x < eps.dim(1); ++x) {
            if (m.at(y, x) == S(0)) continue;
            for (int64_t k = 0; k < c; ++k) {
                const double d = static_cast<double>(eps.at(y, x, k)) -
                                 static_cast<double>(eps_hat.at(y, x, k));
                acc += d * d;
            }
            count += c;
        }
    return count ? acc / static_cast<double>(count) : 0.0;
}

template <class S>
double loss_overall(const Tensor<S>& eps, const Tensor<S>& eps_hat, const Tensor<S>& m) {
    return loss_mse(eps, eps_hat) + loss_face(eps, eps_hat, m);
}

// Tape versions used by training; same definitions over tape nodes.
template <class S>
typename Tape<S>::Var loss_mse_t(Tape<S>& tp, typename Tape<S>::Var eps,
                                 typename Tape<S>::Var eps_hat) {
    auto d = tp.sub(eps_hat, eps);
    return tp.mean_all(tp.mul(d, d));
}

template <class S>
typename Tape<S>::Var loss_face_t(Tape<S>& tp, typename Tape<S>::Var eps,
                                  typename Tape<S>::Var eps_hat, const Tensor<S>& m) {
    double count = 0;
    for (int64_t i = 0; i < m.numel(); ++i) count += m.data[i] != S(0) ? 1.0 : 0.0;
    const int64_t c = tp.val(eps).dim(2);
    auto d = tp.sub(eps_hat, eps);
    auto masked = tp.mul_mask_hw(tp.mul(d, d), m);
    auto total = tp.sum_all(masked);
    if (count == 0) return tp.scale(total, S(0));
    return tp.scale(total, static_cast<S>(1.0 / (count * static_cast<double>(c))));
}

// ---------------------------------------------------------------------------
// Condition assembly
// ---------------------------------------------------------------------------

template <class S>
struct Conditions {
    EmbeddingSet<S> emb;
    std::vector<Tensor<S>> c_ref;  // one per stage
};

// Raw per-sample tensors every conditioning path consumes.
template <class S>
struct CondInputs {
    Tensor<S> source_image;   // H×W×3
    Tensor<S> atlas_texels;   // atlas image
    Tensor<S> a_ref_latent;   // encode(resize(atlas)) — ReferenceNet input
    Tensor<S> face_crop;      // resized crop
};

template <class S>
CondInputs<S> build_cond_inputs(const Models<S>& models, const Sample& source) {
    CondInputs<S> ci;
    ci.source_image = cast<S>(source.image);
    auto atlas = warp_to_atlas(source.image, source.dpmap, models.atlas_layout());
    ci.atlas_texels = cast<S>(atlas.texels);
    auto resized = resize_nearest(atlas.texels, source.image.dim(0), source.image.dim(1));
    ci.a_ref_latent = models.autoenc.encode(cast<S>(resized));
    ci.face_crop = cast<S>(face_crop_resized(source.image, source.face_box, models.dims.face_size));
    return ci;
}

template <class S>
CondInputs<S> cond_inputs_from_atlas(const Models<S>& models, const Sample& source,
                                     const TextureAtlas& atlas, const Tensor<S>& face_crop) {
    CondInputs<S> ci;
    ci.source_image = cast<S>(source.image);
    ci.atlas_texels = cast<S>(atlas.texels);
    auto resized = resize_nearest(atlas.texels, source.image.dim(0), source.image.dim(1));
    ci.a_ref_latent = models.autoenc.encode(cast<S>(resized));
    ci.face_crop = face_crop;
    return ci;
}

template <class S>
Conditions<S> conditions_from_inputs(const Models<S>& models, const CondInputs<S>& ci) {
    Conditions<S> c;
    c.emb.i_emb = models.image_enc.embed(ci.source_image);
    c.emb.a_emb = models.atlas_enc.embed(ci.atlas_texels);
    c.emb.f_emb = models.face.features(ci.face_crop).second;
    c.c_ref = reference_forward(models.ref, ci.a_ref_latent);
    return c;
}

template <class S>
Conditions<S> build_conditions(const Models<S>& models, const Sample& source) {
    return conditions_from_inputs(models, build_cond_inputs(models, source));
}

// All-zero conditions: the unconditional state used for classifier-free
// guidance (embeddings, reference features and guider input all zeroed).
template <class S>
Conditions<S> unconditional_conditions(const Models<S>& models) {
    Conditions<S> c;
    c.emb = EmbeddingSet<S>::zero(models.cfg.embed_tokens, models.cfg.embed_dim);
    const int64_t lh = models.latent_h(), lw = models.latent_w();
    c.c_ref = {zeros<S>({lh, lw, static_cast<int64_t>(models.dims.unet_w1)}),
               zeros<S>({lh / 2, lw / 2, static_cast<int64_t>(models.dims.unet_w2)}),
               zeros<S>({lh / 2, lw / 2, static_cast<int64_t>(models.dims.unet_w2)})};
    return c;
}

template <class S>
Tensor<S> uncond_pose_feature(const Models<S>& models) {
    DensePoseMap zero_pose;
    zero_pose.part = zeros<float>({models.cfg.canvas, models.cfg.canvas});
    zero_pose.uv = zeros<float>({models.cfg.canvas, models.cfg.canvas, 2});
    zero_pose.parts = models.cfg.parts;
    return pose_guide(models.pose_guider, zero_pose);
}

inline bool drop_conditions(Rng& rng, double p) { return rng.uniform() < p; }

// ---------------------------------------------------------------------------
// DDIM sampling with classifier-free guidance
// ---------------------------------------------------------------------------

// step_index counts down to 0; eps_used is the guided prediction driving
// the update; z_next is the state after the update.
template <class S>
using DdimObserver =
    std::function<void(int step_index, int t, const Tensor<S>& eps_used, const Tensor<S>& z_next)>;

template <class S>
using NoisePredictor = std::function<Tensor<S>(const Tensor<S>& z, int t)>;

inline std::vector<int> ddim_timesteps(int T, int steps) {
    check(steps >= 1 && steps <= T, "ddim: steps must be in [1, T]");
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int j = 0; j < steps; ++j)
        ts[static_cast<size_t>(j)] = static_cast<int>((static_cast<int64_t>(j) + 1) * T / steps);
    return ts;
}

// Deterministic at eta=0; the terminal step returns the predicted z0.
template <class S>
Tensor<S> ddim_loop(const NoiseSchedule& sched, const std::vector<int64_t>& latent_shape,
                    const NoisePredictor<S>& predict, int steps, double eta, uint64_t seed,
                    const DdimObserver<S>& observer = nullptr) {
    Rng rng(hash_u64(seed, fnv1a64("ddim")));
    Tensor<S> z = randn<S>(latent_shape, rng);
    const auto ts = ddim_timesteps(sched.T, steps);
    for (int j = steps - 1; j >= 0; --j) {
        const int t = ts[static_cast<size_t>(j)];
        const double ab_t = sched.alpha_bar(t);
        const double ab_prev = j > 0 ? sched.alpha_bar(ts[static_cast<size_t>(j - 1)]) : 1.0;
        Tensor<S> eps = predict(z, t);
        check(eps.same_shape(z), "ddim: predictor returned wrong shape");
        const S inv_sqrt_ab = static_cast<S>(1.0 / std::sqrt(ab_t));
        const S sig_t = static_cast<S>(std::sqrt(1.0 - ab_t));
        Tensor<S> z0_hat(z.shape);
        z0_hat.data = (z.data - sig_t * eps.data) * inv_sqrt_ab;
        const double sigma =
            eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
        const double dir_coef = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
        Tensor<S> z_next(z.shape);
        z_next.data = static_cast<S>(std::sqrt(ab_prev)) * z0_hat.data +
                      static_cast<S>(dir_coef) * eps.data;
        if (sigma > 0) {
            for (int64_t i = 0; i < z_next.numel(); ++i)
                z_next.data[i] += static_cast<S>(sigma * rng.normal());
        }
        z = std::move(z_next);
        if (observer) observer(j, t, eps, z);
    }
    return z;
}

// Guided prediction ε_u + w·(ε_c − ε_u); at w == 1 the unconditional branch
// is skipped so the result is the conditional prediction, exactly.
template <class S>
NoisePredictor<S> make_cfg_predictor(const Models<S>& models, const Conditions<S>& cond,
                                     const Tensor<S>& pose_feat, double cfg_scale,
                                     const CondRouting& routing) {
    auto uncond = std::make_shared<Conditions<S>>(unconditional_conditions(models));
    auto pose_uncond = std::make_shared<Tensor<S>>(uncond_pose_feature(models));
    auto cond_copy = std::make_shared<Conditions<S>>(cond);
    auto pose_copy = std::make_shared<Tensor<S>>(pose_feat);
    const auto* unet = &models.unet;
    return [=](const Tensor<S>& z, int t) {
        Tensor<S> eps_c = unet_forward(*unet, z, t, *pose_copy, cond_copy->c_ref, cond_copy->emb,
                                       routing);
        if (cfg_scale == 1.0) return eps_c;
        Tensor<S> eps_u =
            unet_forward(*unet, z, t, *pose_uncond, uncond->c_ref, uncond->emb, routing);
        Tensor<S> out(eps_c.shape);
        out.data = eps_u.data + static_cast<S>(cfg_scale) * (eps_c.data - eps_u.data);
        return out;
    };
}

struct SampleOptions {
    int steps = 50;
    double cfg_scale = 3.5;
    double eta = 0.0;
    uint64_t seed = 0;
};

// Full sampling pipeline: DDIM in latent space, decoded through the
// autoencoder (clamped to [0,1]).
template <class S>
Tensor<S> ddim_sample(const Models<S>& models, const Conditions<S>& cond,
                      const DensePoseMap& pose, const SampleOptions& opt,
                      const DdimObserver<S>& observer = nullptr) {
    NoiseSchedule sched = make_schedule(models.cfg);
    Tensor<S> pose_feat = pose_guide(models.pose_guider, pose);
    auto predict = make_cfg_predictor(models, cond, pose_feat, opt.cfg_scale,
                                      routing_for(models.ablation));
    std::vector<int64_t> shape{models.latent_h(), models.latent_w(),
                               static_cast<int64_t>(models.cfg.latent_channels)};
    Tensor<S> z0 = ddim_loop(sched, shape, predict, opt.steps, opt.eta, opt.seed, observer);
    return models.autoenc.decode(z0);
}

// ---------------------------------------------------------------------------
// Editing
// ---------------------------------------------------------------------------

struct Edits {
    const Sample* atlas_donor = nullptr;  // texture-map swap donor
    std::set<int> swap_parts;
    const Sample* face_donor = nullptr;   // face-embedding swap donor
};

// Condition-swap editing: rebuild the conditions from the edited atlas
// and/or donor face embedding, then sample. No masks, no retraining.
template <class S>
Tensor<S> edit_sample(const Models<S>& models, const Sample& source, const Edits& edits,
                      const DensePoseMap& pose, const SampleOptions& opt,
                      const DdimObserver<S>& observer = nullptr) {
    auto layout = models.atlas_layout();
    TextureAtlas atlas = warp_to_atlas(source.image, source.dpmap, layout);
    if (edits.atlas_donor) {
        TextureAtlas donor_atlas =
            warp_to_atlas(edits.atlas_donor->image, edits.atlas_donor->dpmap, layout);
        atlas = swap_region(atlas, donor_atlas, edits.swap_parts);
    } else {
        check(edits.swap_parts.empty(), "edit_sample: swap_parts given without a donor");
    }
    const Sample& face_src = edits.face_donor ? *edits.face_donor : source;
    Tensor<S> face_crop =
        cast<S>(face_crop_resized(face_src.image, face_src.face_box, models.dims.face_size));
    auto ci = cond_inputs_from_atlas(models, source, atlas, face_crop);
    auto cond = conditions_from_inputs(models, ci);
    return ddim_sample(models, cond, pose, opt, observer);
}

// Mask-blended baseline: per step the two condition sets are evaluated and
// the noise predictions combined as m·ε_s + (1−m)·ε_ref at latent
// resolution before the DDIM update.
template <class S>
Tensor<S> blended_edit_sample(const Models<S>& models, const Conditions<S>& source_cond,
                              const Conditions<S>& ref_cond, const Tensor<S>& m,
                              const DensePoseMap& pose, const SampleOptions& opt,
                              const DdimObserver<S>& observer = nullptr) {
    check(m.ndim() == 2 && m.dim(0) == models.latent_h() && m.dim(1) == models.latent_w(),
          "blended_edit_sample: mask must be latent resolution");
    for (int64_t i = 0; i < m.numel(); ++i)
        check(m.data[i] == S(0) || m.data[i] == S(1), "blended_edit_sample: mask must be 0/1");
    NoiseSchedule sched = make_schedule(models.cfg);
    Tensor<S> pose_feat = pose_guide(models.pose_guider, pose);
    const auto routing = routing_for(models.ablation);
    auto pred_s = make_cfg_predictor(models, source_cond, pose_feat, opt.cfg_scale, routing);
    auto pred_r = make_cfg_predictor(models, ref_cond, pose_feat, opt.cfg_scale, routing);
    const int64_t c = models.cfg.latent_channels;
    NoisePredictor<S> predict = [=](const Tensor<S>& z, int t) {
        Tensor<S> es = pred_s(z, t);
        Tensor<S> er = pred_r(z, t);
        Tensor<S> out(es.shape);
        for (int64_t y = 0; y < es.dim(0); ++y)
            for (int64_t x = 0; x < es.dim(1); ++x) {
                const S mv = m.at(y, x);
                for (int64_t k = 0; k < c; ++k)
                    out.at(y, x, k) = mv * es.at(y, x, k) + (S(1) - mv) * er.at(y, x, k);
            }
        return out;
    };
    std::vector<int64_t> shape{models.latent_h(), models.latent_w(), c};
    Tensor<S> z0 = ddim_loop(sched, shape, predict, opt.steps, opt.eta, opt.seed, observer);
    return models.autoenc.decode(z0);
}

// ---------------------------------------------------------------------------
// Diffusion training (stage 3)
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-3;
    int steps = 2000;
    int batch = 8;
    double cond_drop_prob = 0.1;
    uint64_t seed = 0;
    std::string preset = "tiny";
};

inline TrainConfig train_config_from(const RunConfig& cfg, const ModelDims& dims) {
    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.steps = cfg.steps;
    tc.batch = dims.batch;
    tc.cond_drop_prob = cfg.cond_drop_prob;
    tc.seed = cfg.seed;
    tc.preset = cfg.preset;
    check(tc.cond_drop_prob >= 0 && tc.cond_drop_prob < 1,
          "train: cond_drop_prob must be in [0,1)");
    return tc;
}

struct StepMetrics {
    int step = 0;
    double loss_mse = 0;
    double loss_face = 0;
    double loss_overall = 0;
};

struct TrainLog {
    std::vector<StepMetrics> steps;
    int64_t uncond_samples = 0;
    int64_t total_samples = 0;
    std::optional<int> diverged_at;  // params hold the last good state if set
};

namespace detail {

// Per-pair tensors that do not depend on trainable diffusion weights.
template <class S>
struct PairCache {
    Tensor<S> z0;             // encoded target
    Tensor<S> source_image;
    Tensor<S> atlas_texels;
    Tensor<S> a_ref_latent;
    Tensor<S> f_emb;          // frozen face embedding
    Tensor<S> tgt_raster;     // pose raster of the target
    Tensor<S> face_mask_lat;  // latent-resolution head mask of the target
};

template <class S>
PairCache<S> build_pair_cache(const Models<S>& models, const PairSample& pair) {
    PairCache<S> pc;
    pc.z0 = models.autoenc.encode(cast<S>(pair.target.image));
    auto ci = build_cond_inputs(models, pair.source);
    pc.source_image = ci.source_image;
    pc.atlas_texels = ci.atlas_texels;
    pc.a_ref_latent = ci.a_ref_latent;
    pc.f_emb = models.face.features(ci.face_crop).second;
    pc.tgt_raster = cast<S>(pose_raster(pair.target.dpmap));
    pc.face_mask_lat = cast<S>(face_mask(pair.target.dpmap, models.latent_h(), models.latent_w()));
    return pc;
}

}  // namespace detail

// Per step: draw pairs, form conditions from the source (embeddings are
// pose-invariant and shared), drive pose and face mask from the target,
// drop all conditions jointly with probability cond_drop_prob, and take an
// Adam step on loss_mse + loss_face. Single-threaded and seeded.
template <class S>
TrainLog train_diffusion(Models<S>& models, const Dataset& data, const TrainConfig& cfg) {
    check(data.size() > 0, "train_diffusion: empty dataset");
    check(models.stages.count("autoenc"), "train_diffusion: missing autoencoder stage");
    check(models.stages.count("face"), "train_diffusion: missing face-encoder stage");
    check(data.manifest.canvas == models.cfg.canvas && data.manifest.parts == models.cfg.parts &&
              data.manifest.tile == models.cfg.tile,
          "train_diffusion: dataset geometry does not match the model config");
    NoiseSchedule sched = make_schedule(models.cfg);
    const CondRouting routing = routing_for(models.ablation);
    const int64_t lh = models.latent_h(), lw = models.latent_w();

    std::vector<detail::PairCache<S>> cache;
    cache.reserve(static_cast<size_t>(data.size()));
    for (const auto& p : data.pairs) cache.push_back(detail::build_pair_cache(models, p));
    const Tensor<S> zero_raster =
        zeros<S>({models.cfg.canvas, models.cfg.canvas, static_cast<int64_t>(models.cfg.parts + 2)});
    const EmbeddingSet<S> zero_emb =
        EmbeddingSet<S>::zero(models.cfg.embed_tokens, models.cfg.embed_dim);
    const Tensor<S> zero_ref1 = zeros<S>({lh, lw, static_cast<int64_t>(models.dims.unet_w1)});
    const Tensor<S> zero_ref2 =
        zeros<S>({lh / 2, lw / 2, static_cast<int64_t>(models.dims.unet_w2)});

    std::vector<Tensor<S>*> params;
    models.visit_diffusion_trainable(
        [&](const std::string&, Tensor<S>& t) { params.push_back(&t); });
    Adam<S> opt(cfg.lr);
    TrainLog log;
    std::vector<Tensor<S>> snapshot(params.size());

    for (int step = 0; step < cfg.steps; ++step) {
        for (size_t i = 0; i < params.size(); ++i) snapshot[i] = *params[i];
        Rng rng(hash_u64(cfg.seed, 0xd1ff0000ull + static_cast<uint64_t>(step)));
        Tape<S> tp;
        VarMap<S> vm;
        bind_params(tp, models.unet, true, vm);
        bind_params(tp, models.ref, true, vm);
        bind_params(tp, models.pose_guider, true, vm);
        bind_params(tp, models.image_enc, true, vm);
        bind_params(tp, models.atlas_enc, true, vm);

        typename Tape<S>::Var mse_acc = -1, face_acc = -1;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& pc = cache[static_cast<size_t>(rng.uniform_int(0, data.size()))];
            const int t = static_cast<int>(rng.uniform_int(1, sched.T + 1));
            Tensor<S> noise = randn<S>(pc.z0.shape, rng);
            Tensor<S> z_t = q_sample(sched, pc.z0, t, noise);
            const bool drop = drop_conditions(rng, cfg.cond_drop_prob);
            ++log.total_samples;

            EmbeddingVars<S> ev;
            std::array<typename Tape<S>::Var, 3> cr;
            typename Tape<S>::Var pose_feat;
            if (drop) {
                ++log.uncond_samples;
                ev = {tp.constant(zero_emb.i_emb), tp.constant(zero_emb.a_emb),
                      tp.constant(zero_emb.f_emb)};
                cr = {tp.constant(zero_ref1), tp.constant(zero_ref2), tp.constant(zero_ref2)};
                pose_feat = models.pose_guider.fwd(tp, vm, tp.constant(zero_raster));
            } else {
                ev.i_emb = models.image_enc.fwd(tp, vm, tp.constant(pc.source_image));
                ev.a_emb = models.atlas_enc.fwd(tp, vm, tp.constant(pc.atlas_texels));
                ev.f_emb = tp.constant(pc.f_emb);  // frozen face encoder
                auto refs = models.ref.fwd(tp, vm, tp.constant(pc.a_ref_latent));
                cr = {refs[0], refs[1], refs[2]};
                pose_feat = models.pose_guider.fwd(tp, vm, tp.constant(pc.tgt_raster));
            }
            auto eps_hat =
                models.unet.fwd(tp, vm, tp.constant(z_t), t, pose_feat, cr, ev, routing);
            auto eps = tp.constant(noise);
            auto l_mse = loss_mse_t(tp, eps, eps_hat);
            auto l_face = loss_face_t(tp, eps, eps_hat, pc.face_mask_lat);
            mse_acc = (mse_acc < 0) ? l_mse : tp.add(mse_acc, l_mse);
            face_acc = (face_acc < 0) ? l_face : tp.add(face_acc, l_face);
        }
        const S inv_b = static_cast<S>(1.0 / cfg.batch);
        mse_acc = tp.scale(mse_acc, inv_b);
        face_acc = tp.scale(face_acc, inv_b);
        auto total = tp.add(mse_acc, face_acc);

        StepMetrics sm;
        sm.step = step;
        sm.loss_mse = static_cast<double>(tp.val(mse_acc).data[0]);
        sm.loss_face = static_cast<double>(tp.val(face_acc).data[0]);
        sm.loss_overall = static_cast<double>(tp.val(total).data[0]);
        if (!std::isfinite(sm.loss_overall)) {
            for (size_t i = 0; i < params.size(); ++i) *params[i] = snapshot[i];
            log.diverged_at = step;
            return log;
        }
        log.steps.push_back(sm);
        tp.backward(total);
        // parameters skipped this step (dropped conditions, ablated
        // branches) contribute zero gradients
        std::vector<Tensor<S>> zero_store(params.size());
        std::vector<const Tensor<S>*> grads;
        for (size_t i = 0; i < params.size(); ++i) {
            const auto v = vm.at(*params[i]);
            if (tp.has_grad(v)) {
                grads.push_back(&tp.grad(v));
            } else {
                zero_store[i] = Tensor<S>(params[i]->shape);
                grads.push_back(&zero_store[i]);
            }
        }
        opt.step(params, grads);
    }
    models.stages.insert("diffusion");
    return log;
}

}  // namespace mcld
