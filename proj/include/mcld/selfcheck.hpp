#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mcld/diffusion.hpp"
#include "mcld/metrics.hpp"

namespace mcld {

// ---------------------------------------------------------------------------
// Micro pipeline: the full conditional denoising loss at 8×8 / f=2 / d=8,
// in double precision, with the stage-1 models frozen. Used for the
// finite-difference gradient checks.
// ---------------------------------------------------------------------------

struct MicroCase {
    Models<double> models;
    Tensor<double> src_image, atlas_texels, a_ref_latent, f_emb;
    Tensor<double> z_t, noise, raster, mask;
    int t = 25;

    std::vector<Tensor<double>*> trainable() {
        std::vector<Tensor<double>*> out;
        models.visit_diffusion_trainable(
            [&](const std::string&, Tensor<double>& t2) { out.push_back(&t2); });
        return out;
    }
};

inline DensePoseMap micro_pose_map(int64_t h, int64_t w, int parts) {
    DensePoseMap dp;
    dp.part = zeros<float>({h, w});
    dp.uv = zeros<float>({h, w, 2});
    dp.parts = parts;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (y < h / 2 && x < w / 2)
                dp.part.at(y, x) = static_cast<float>(kHeadPart);
            else if (y >= h / 2)
                dp.part.at(y, x) = static_cast<float>(kPartTorso);
            else
                continue;
            dp.uv.at(y, x, 0) = static_cast<float>(x) / static_cast<float>(w - 1);
            dp.uv.at(y, x, 1) = static_cast<float>(y) / static_cast<float>(h - 1);
        }
    return dp;
}

inline MicroCase make_micro_case(uint64_t seed) {
    MicroCase mc;
    RunConfig cfg = preset_config("micro");
    cfg.seed = seed;
    mc.models = init_models<double>(cfg);
    Rng rng(hash_u64(seed, fnv1a64("micro_case")));
    const int64_t canvas = cfg.canvas;
    const int64_t lh = canvas / cfg.f, lw = canvas / cfg.f;
    mc.src_image = rand_uniform<double>({canvas, canvas, 3}, rng);
    AtlasLayout lay{cfg.parts, cfg.tile};
    mc.atlas_texels = rand_uniform<double>({lay.height_px(), lay.width_px(), 3}, rng);
    auto resized = resize_nearest(mc.atlas_texels, canvas, canvas);
    mc.a_ref_latent = mc.models.autoenc.encode(resized);
    auto crop = rand_uniform<double>({mc.models.dims.face_size, mc.models.dims.face_size, 3}, rng);
    mc.f_emb = mc.models.face.features(crop).second;
    auto dp = micro_pose_map(canvas, canvas, cfg.parts);
    mc.raster = cast<double>(pose_raster(dp));
    mc.mask = cast<double>(face_mask(dp, lh, lw));
    Tensor<double> z0 = randn<double>({lh, lw, static_cast<int64_t>(cfg.latent_channels)}, rng);
    mc.noise = randn<double>(z0.shape, rng);
    NoiseSchedule sched = make_schedule(cfg);
    mc.z_t = q_sample(sched, z0, mc.t, mc.noise);
    return mc;
}

// Builds the conditional training loss on a tape; trainable diffusion
// weights are bound as parameters.
inline typename Tape<double>::Var micro_loss_graph(MicroCase& mc, Tape<double>& tp,
                                                   VarMap<double>& vm) {
    bind_params(tp, mc.models.unet, true, vm);
    bind_params(tp, mc.models.ref, true, vm);
    bind_params(tp, mc.models.pose_guider, true, vm);
    bind_params(tp, mc.models.image_enc, true, vm);
    bind_params(tp, mc.models.atlas_enc, true, vm);
    EmbeddingVars<double> ev;
    ev.i_emb = mc.models.image_enc.fwd(tp, vm, tp.constant(mc.src_image));
    ev.a_emb = mc.models.atlas_enc.fwd(tp, vm, tp.constant(mc.atlas_texels));
    ev.f_emb = tp.constant(mc.f_emb);
    auto refs = mc.models.ref.fwd(tp, vm, tp.constant(mc.a_ref_latent));
    auto pose_feat = mc.models.pose_guider.fwd(tp, vm, tp.constant(mc.raster));
    auto eps_hat = mc.models.unet.fwd(tp, vm, tp.constant(mc.z_t), mc.t, pose_feat,
                                      {refs[0], refs[1], refs[2]}, ev,
                                      routing_for(mc.models.ablation));
    auto eps = tp.constant(mc.noise);
    return tp.add(loss_mse_t(tp, eps, eps_hat), loss_face_t(tp, eps, eps_hat, mc.mask));
}

inline double micro_loss_value(MicroCase& mc) {
    Tape<double> tp;
    VarMap<double> vm;
    return tp.val(micro_loss_graph(mc, tp, vm)).data[0];
}

struct GradCheckReport {
    int checked = 0;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;

    bool ok() const { return max_rel_err <= tolerance; }
};

// Central finite differences (step h) on n randomly chosen parameters of
// the full micro pipeline; relative error floored at 1e-3 magnitude.
inline GradCheckReport micro_pipeline_gradcheck(int n_probes, uint64_t seed, double h = 1e-4,
                                                double tolerance = 1e-4) {
    MicroCase mc = make_micro_case(seed);
    auto params = mc.trainable();
    Tape<double> tp;
    VarMap<double> vm;
    auto loss = micro_loss_graph(mc, tp, vm);
    tp.backward(loss);

    // pressure-test only reachable parameters (zero-init guider output conv
    // still receives gradients; all listed tensors are on the path)
    Rng pick(hash_u64(seed, fnv1a64("probe")));
    GradCheckReport rep;
    rep.tolerance = tolerance;
    for (int probe = 0; probe < n_probes; ++probe) {
        auto* t = params[static_cast<size_t>(
            pick.uniform_int(0, static_cast<int64_t>(params.size())))];
        const int64_t i = pick.uniform_int(0, t->numel());
        const auto v = vm.at(*t);
        const double analytic = tp.has_grad(v) ? tp.grad(v).data[i] : 0.0;
        const double orig = t->data[i];
        t->data[i] = orig + h;
        const double lp = micro_loss_value(mc);
        t->data[i] = orig - h;
        const double lm = micro_loss_value(mc);
        t->data[i] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double rel =
            std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-3});
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        ++rep.checked;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Self-check suites (oracle-based; shared by the CLI and the tests)
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool ok = false;
    std::string detail;
};

namespace selfcheck_detail {

template <class S>
Tensor<S> brute_force_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
    const int64_t n = q.dim(0), m = k.dim(0), d = q.dim(1), dv = v.dim(1);
    Tensor<S> out({n, dv});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> logits(static_cast<size_t>(m));
        double mx = -1e300;
        for (int64_t j = 0; j < m; ++j) {
            double acc = 0;
            for (int64_t t = 0; t < d; ++t)
                acc += static_cast<double>(q.at(i, t)) * static_cast<double>(k.at(j, t));
            logits[static_cast<size_t>(j)] = acc * scale;
            mx = std::max(mx, logits[static_cast<size_t>(j)]);
        }
        double z = 0;
        for (int64_t j = 0; j < m; ++j) z += std::exp(logits[static_cast<size_t>(j)] - mx);
        for (int64_t t = 0; t < dv; ++t) {
            double acc = 0;
            for (int64_t j = 0; j < m; ++j)
                acc += std::exp(logits[static_cast<size_t>(j)] - mx) / z *
                       static_cast<double>(v.at(j, t));
            out.at(i, t) = static_cast<S>(acc);
        }
    }
    return out;
}

inline CheckResult check_attention_oracle(int trials) {
    Rng rng(101);
    double worst32 = 0, worst64 = 0;
    for (int trial = 0; trial < trials; ++trial) {
        const int64_t n = rng.uniform_int(1, 9), m = rng.uniform_int(1, 10),
                      d = rng.uniform_int(1, 12);
        auto qf = randn<float>({n, d}, rng);
        auto kf = randn<float>({m, d}, rng);
        auto vf = randn<float>({m, d}, rng);
        worst32 = std::max(worst32,
                           max_abs_diff(attention(qf, kf, vf), brute_force_attention(qf, kf, vf)));
        auto qd = randn<double>({n, d}, rng);
        auto kd = randn<double>({m, d}, rng);
        auto vd = randn<double>({m, d}, rng);
        worst64 = std::max(worst64,
                           max_abs_diff(attention(qd, kd, vd), brute_force_attention(qd, kd, vd)));
    }
    CheckResult r;
    r.name = "attention-brute-force";
    r.ok = worst32 <= 1e-6 && worst64 <= 1e-12;
    r.detail = "max abs err f32 " + std::to_string(worst32) + ", f64 " + std::to_string(worst64);
    return r;
}

inline CheckResult check_masked_loss_oracle() {
    Rng rng(102);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto eps = randn<float>({5, 6, 3}, rng);
        auto eps_hat = randn<float>({5, 6, 3}, rng);
        Tensor<float> m({5, 6});
        for (int64_t i = 0; i < 30; ++i) m.data[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
        double acc = 0;
        int64_t cnt = 0;
        for (int64_t y = 0; y < 5; ++y)
            for (int64_t x = 0; x < 6; ++x) {
                if (m.at(y, x) == 0.0f) continue;
                for (int64_t c = 0; c < 3; ++c) {
                    const double d = static_cast<double>(eps.at(y, x, c)) -
                                     static_cast<double>(eps_hat.at(y, x, c));
                    acc += d * d;
                    ++cnt;
                }
            }
        const double oracle = cnt ? acc / static_cast<double>(cnt) : 0.0;
        worst = std::max(worst, std::abs(loss_face(eps, eps_hat, m) - oracle));
        worst = std::max(worst, std::abs(loss_overall(eps, eps_hat, m) -
                                         (loss_mse(eps, eps_hat) + oracle)));
    }
    CheckResult r;
    r.name = "masked-loss-loop-oracle";
    r.ok = worst <= 1e-9;
    r.detail = "max abs err " + std::to_string(worst);
    return r;
}

inline CheckResult check_blend_oracle() {
    RunConfig cfg = preset_config("tiny");
    cfg.seed = 104;
    auto models = init_models<float>(cfg);
    auto [src, s2] = sample_pair(500, PairOptions{32, 10, 8});
    auto [refs, r2] = sample_pair(501, PairOptions{32, 10, 8});
    auto pose = s2.dpmap;
    auto cond_s = build_conditions(models, src);
    auto cond_r = build_conditions(models, refs);
    Tensor<float> m({models.latent_h(), models.latent_w()});
    for (int64_t y = 0; y < m.dim(0); ++y)
        for (int64_t x = 0; x < m.dim(1); ++x) m.at(y, x) = static_cast<float>((x + y) % 2);
    SampleOptions opt;
    opt.steps = 1;
    opt.seed = 7;
    auto pose_feat = pose_guide(models.pose_guider, pose);
    auto pred_s = make_cfg_predictor(models, cond_s, pose_feat, opt.cfg_scale,
                                     routing_for(models.ablation));
    auto pred_r = make_cfg_predictor(models, cond_r, pose_feat, opt.cfg_scale,
                                     routing_for(models.ablation));
    NoiseSchedule sched = make_schedule(models.cfg);
    Rng rng(hash_u64(opt.seed, fnv1a64("ddim")));
    Tensor<float> z = randn<float>({models.latent_h(), models.latent_w(),
                                    static_cast<int64_t>(models.cfg.latent_channels)},
                                   rng);
    Tensor<float> eps_obs;
    DdimObserver<float> obs = [&](int, int, const Tensor<float>& eps, const Tensor<float>&) {
        eps_obs = eps;
    };
    blended_edit_sample(models, cond_s, cond_r, m, pose, opt, obs);
    const int t = ddim_timesteps(sched.T, opt.steps)[0];
    auto es = pred_s(z, t);
    auto er = pred_r(z, t);
    double worst = 0;
    for (int64_t y = 0; y < es.dim(0); ++y)
        for (int64_t x = 0; x < es.dim(1); ++x)
            for (int64_t c = 0; c < es.dim(2); ++c) {
                const double manual = m.at(y, x) * es.at(y, x, c) +
                                      (1.0f - m.at(y, x)) * er.at(y, x, c);
                worst = std::max(worst, std::abs(manual - eps_obs.at(y, x, c)));
            }
    CheckResult r;
    r.name = "blend-loop-oracle";
    r.ok = worst <= 1e-7;
    r.detail = "max abs err " + std::to_string(worst);
    return r;
}

inline CheckResult check_archive_roundtrip() {
    Rng rng(103);
    TensorArchive a;
    a.metadata = "{\"selfcheck\":true}";
    a.add("f32", randn<float>({3, 7}, rng));
    a.add("f64", randn<double>({2, 2, 2}, rng));
    Tensor<uint8_t> u({9});
    for (int64_t i = 0; i < 9; ++i) u.data[i] = static_cast<uint8_t>(rng.u64() & 0xff);
    a.add("u8", u);
    const auto path =
        (std::filesystem::temp_directory_path() / "mcld_selfcheck_archive.bin").string();
    write_archive(path, a);
    auto b = read_archive(path);
    CheckResult r;
    r.name = "archive-round-trip";
    r.ok = b.metadata == a.metadata && bit_equal(b.get<float>("f32"), a.get<float>("f32")) &&
           bit_equal(b.get<double>("f64"), a.get<double>("f64")) &&
           bit_equal(b.get<uint8_t>("u8"), a.get<uint8_t>("u8"));
    r.detail = r.ok ? "bit-exact" : "mismatch after round trip";
    std::filesystem::remove(path);
    return r;
}

inline CheckResult check_micro_gradients(int probes) {
    auto rep = micro_pipeline_gradcheck(probes, 105);
    CheckResult r;
    r.name = "gradient-micro-checks";
    r.ok = rep.ok();
    r.detail = "max rel err " + std::to_string(rep.max_rel_err) + " over " +
               std::to_string(rep.checked) + " probes";
    return r;
}

}  // namespace selfcheck_detail

inline std::vector<CheckResult> run_selfcheck(int attention_trials = 40, int grad_probes = 25) {
    std::vector<CheckResult> out;
    out.push_back(selfcheck_detail::check_attention_oracle(attention_trials));
    out.push_back(selfcheck_detail::check_masked_loss_oracle());
    out.push_back(selfcheck_detail::check_blend_oracle());
    out.push_back(selfcheck_detail::check_archive_roundtrip());
    out.push_back(selfcheck_detail::check_micro_gradients(grad_probes));
    return out;
}

inline int selfcheck_main() {
    int failures = 0;
    for (const auto& r : run_selfcheck()) {
        std::printf("%s %-26s %s\n", r.ok ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        failures += r.ok ? 0 : 1;
    }
    return failures == 0 ? 0 : 3;
}

}  // namespace mcld
