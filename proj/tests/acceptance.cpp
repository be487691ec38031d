// Acceptance suite: one pass/fail line per criterion. Criteria 7-9 include
// real training runs and dominate the runtime.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>

#include "mcld/metrics.hpp"
#include "mcld/selfcheck.hpp"

using namespace mcld;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    bool pass;
    std::string detail;
    double seconds;
};

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string tmp_dir(const std::string& name) {
    auto d = (fs::temp_directory_path() / "mcld_acceptance" / name).string();
    fs::create_directories(d);
    return d;
}

// ---------------------------------------------------------------------------
// 1. attention brute-force oracle
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> brute_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
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

Criterion criterion_1() {
    const double t0 = now_s();
    Rng rng(11);
    double worst32 = 0, worst64 = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t n = rng.uniform_int(1, 12), m = rng.uniform_int(1, 12),
                      d = rng.uniform_int(1, 16);
        auto qf = randn<float>({n, d}, rng);
        auto kf = randn<float>({m, d}, rng);
        auto vf = randn<float>({m, d}, rng);
        worst32 = std::max(worst32, max_abs_diff(attention(qf, kf, vf),
                                                 brute_attention(qf, kf, vf)));
        auto qd = randn<double>({n, d}, rng);
        auto kd = randn<double>({m, d}, rng);
        auto vd = randn<double>({m, d}, rng);
        worst64 = std::max(worst64, max_abs_diff(attention(qd, kd, vd),
                                                 brute_attention(qd, kd, vd)));
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "100 shapes: max abs err f32 %.2e (<=1e-6), f64 %.2e (<=1e-12)",
                  worst32, worst64);
    return {1, worst32 <= 1e-6 && worst64 <= 1e-12, buf, now_s() - t0};
}

// ---------------------------------------------------------------------------
// 2. routing exactness (switcher equation)
// ---------------------------------------------------------------------------

Criterion criterion_2() {
    const double t0 = now_s();
    RunConfig cfg = preset_config("micro");
    cfg.seed = 21;
    auto models = init_models<double>(cfg);
    Rng rng(22);
    bool ok = true;
    auto emb = EmbeddingSet<double>{randn<double>({1, 8}, rng), randn<double>({1, 8}, rng),
                                    randn<double>({1, 8}, rng)};
    auto pert_a = emb;
    pert_a.a_emb = randn<double>({1, 8}, rng);
    auto pert_i = emb;
    pert_i.i_emb = randn<double>({1, 8}, rng);
    auto pert_f = emb;
    pert_f.f_emb = randn<double>({1, 8}, rng);

    struct Block {
        StageId stage;
        const MfcaParams<double>* params;
        int64_t width;
    };
    const std::vector<Block> blocks{{StageId::Encoder, &models.unet.enc_tb.mfca, 8},
                                    {StageId::Mid, &models.unet.mid_tb.mfca, 12},
                                    {StageId::Decoder, &models.unet.dec_tb.mfca, 12}};
    for (const auto& b : blocks) {
        auto z = randn<double>({6, b.width}, rng);
        auto base = mfca_forward(z, b.stage, emb, *b.params);
        if (b.stage == StageId::Encoder)
            ok = ok && bit_equal(base, mfca_forward(z, b.stage, pert_a, *b.params));
        if (b.stage == StageId::Decoder)
            ok = ok && bit_equal(base, mfca_forward(z, b.stage, pert_i, *b.params));
        ok = ok && !bit_equal(base, mfca_forward(z, b.stage, pert_f, *b.params));
    }
    return {2, ok,
            ok ? "encoder ignores A_emb, decoder ignores I_emb (bit-exact); F_emb active at all "
                 "stages"
               : "routing leak detected",
            now_s() - t0};
}

// ---------------------------------------------------------------------------
// 3. full-pipeline gradient check (micro, 64-bit, 200 parameters)
// ---------------------------------------------------------------------------

Criterion criterion_3() {
    const double t0 = now_s();
    auto rep = micro_pipeline_gradcheck(200, 31, 1e-4, 1e-4);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "200 params, 8x8/f=2/d=8 (f64): max rel err %.2e (<=1e-4)",
                  rep.max_rel_err);
    return {3, rep.ok(), buf, now_s() - t0};
}

// ---------------------------------------------------------------------------
// 4. diffusion algebra
// ---------------------------------------------------------------------------

Criterion criterion_4() {
    const double t0 = now_s();
    std::string detail;
    bool ok = true;

    // q_sample Monte-Carlo moments
    auto sched = make_schedule(1000, 8.5e-4, 1.2e-2);
    const int t = 450;
    const double ab = sched.alpha_bar(t);
    Tensor<double> z0({1});
    z0.data[0] = 0.6;
    Rng rng(41);
    const int n = 10000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        Tensor<double> noise({1});
        noise.data[0] = rng.normal();
        const double v = q_sample(sched, z0, t, noise).data[0];
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    const double se_mean = std::sqrt((1.0 - ab) / n);
    const double se_var = (1.0 - ab) * std::sqrt(2.0 / (n - 1));
    const bool moments_ok = std::abs(mean - std::sqrt(ab) * 0.6) <= 3 * se_mean &&
                            std::abs(var - (1.0 - ab)) <= 3 * se_var;
    ok = ok && moments_ok;
    detail += moments_ok ? "moments within 3 sigma; " : "MOMENTS OUT OF RANGE; ";

    // CFG w=1 equals the conditional prediction exactly; DDIM eta=0 determinism
    RunConfig cfg = preset_config("tiny");
    cfg.seed = 42;
    auto models = init_models<float>(cfg);
    auto [src, tgt] = sample_pair(400, PairOptions{32, 10, 8});
    auto cond = build_conditions(models, src);
    SampleOptions opt;
    opt.steps = 5;
    opt.cfg_scale = 1.0;
    opt.seed = 7;
    std::vector<Tensor<float>> eps_seen, z_seen;
    DdimObserver<float> obs = [&](int, int, const Tensor<float>& e, const Tensor<float>& z) {
        eps_seen.push_back(e);
        z_seen.push_back(z);
    };
    auto img1 = ddim_sample(models, cond, tgt.dpmap, opt, obs);
    auto img2 = ddim_sample(models, cond, tgt.dpmap, opt);
    const bool det_ok = bit_equal(img1, img2);
    ok = ok && det_ok;
    detail += det_ok ? "eta=0 bit-deterministic; " : "ETA=0 NONDETERMINISTIC; ";

    auto pose_feat = pose_guide(models.pose_guider, tgt.dpmap);
    Rng zr(hash_u64(opt.seed, fnv1a64("ddim")));
    Tensor<float> z = randn<float>({models.latent_h(), models.latent_w(),
                                    static_cast<int64_t>(cfg.latent_channels)},
                                   zr);
    auto ts = ddim_timesteps(sched.T, opt.steps);
    bool cfg1_ok = true;
    size_t idx = 0;
    for (int j = opt.steps - 1; j >= 0; --j, ++idx) {
        auto eps_c = unet_forward(models.unet, z, ts[static_cast<size_t>(j)], pose_feat,
                                  cond.c_ref, cond.emb, routing_for(models.ablation));
        cfg1_ok = cfg1_ok && bit_equal(eps_c, eps_seen[idx]);
        z = z_seen[idx];
    }
    ok = ok && cfg1_ok;
    detail += cfg1_ok ? "cfg=1 == conditional exactly; " : "CFG=1 MISMATCH; ";

    // Eq. (6) additivity, exact
    Rng lr_rng(43);
    auto e1 = randn<float>({8, 8, 4}, lr_rng);
    auto e2 = randn<float>({8, 8, 4}, lr_rng);
    Tensor<float> m({8, 8});
    for (int64_t i = 0; i < 64; ++i) m.data[i] = lr_rng.uniform() < 0.5 ? 1.0f : 0.0f;
    const bool add_ok =
        loss_overall(e1, e2, m) == loss_mse(e1, e2) + loss_face(e1, e2, m);
    ok = ok && add_ok;
    detail += add_ok ? "additivity exact" : "ADDITIVITY BROKEN";
    return {4, ok, detail, now_s() - t0};
}

// ---------------------------------------------------------------------------
// 5. blended-editing limits
// ---------------------------------------------------------------------------

Criterion criterion_5() {
    const double t0 = now_s();
    RunConfig cfg = preset_config("tiny");
    cfg.seed = 51;
    auto models = init_models<float>(cfg);
    auto [src, s2] = sample_pair(500, PairOptions{32, 10, 8});
    auto [ref, r2] = sample_pair(501, PairOptions{32, 10, 8});
    auto pose = s2.dpmap;
    auto cond_s = build_conditions(models, src);
    auto cond_r = build_conditions(models, ref);
    SampleOptions opt;
    opt.steps = 5;
    opt.cfg_scale = 3.5;
    opt.seed = 13;

    auto capture = [&](std::vector<Tensor<float>>& traj) {
        return DdimObserver<float>(
            [&traj](int, int, const Tensor<float>& e, const Tensor<float>& z) {
                traj.push_back(e);
                traj.push_back(z);
            });
    };
    std::vector<Tensor<float>> tr_src, tr_ref, tr_m1, tr_m0;
    auto g_src = ddim_sample(models, cond_s, pose, opt, capture(tr_src));
    auto g_ref = ddim_sample(models, cond_r, pose, opt, capture(tr_ref));
    Tensor<float> ones = full<float>({models.latent_h(), models.latent_w()}, 1.0f);
    Tensor<float> zeros_m({models.latent_h(), models.latent_w()});
    auto b1 = blended_edit_sample(models, cond_s, cond_r, ones, pose, opt, capture(tr_m1));
    auto b0 = blended_edit_sample(models, cond_s, cond_r, zeros_m, pose, opt, capture(tr_m0));

    bool ok = tr_src.size() == tr_m1.size() && tr_ref.size() == tr_m0.size();
    for (size_t i = 0; ok && i < tr_src.size(); ++i) ok = bit_equal(tr_src[i], tr_m1[i]);
    for (size_t i = 0; ok && i < tr_ref.size(); ++i) ok = bit_equal(tr_ref[i], tr_m0[i]);
    ok = ok && bit_equal(g_src, b1) && bit_equal(g_ref, b0);
    return {5, ok,
            ok ? "m=1 and m=0 reproduce the single-condition trajectories bit-exactly"
               : "blend limit trajectories diverge",
            now_s() - t0};
}

// ---------------------------------------------------------------------------
// 6. UV bijection at default tile 32
// ---------------------------------------------------------------------------

Criterion criterion_6() {
    const double t0 = now_s();
    AtlasLayout lay{10, 32};
    int64_t writes = 0, collisions = 0;
    bool roundtrip_ok = true;
    double cross_err = 0;
    int64_t cross_px = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto [src, tgt] = sample_pair(6000 + seed);  // default 64x64 canvas, tile 32 patterns
        WarpStats st;
        auto atlas = warp_to_atlas(src.image, src.dpmap, lay, &st);
        writes += st.writes;
        collisions += st.collisions;
        auto [back, covered] = warp_from_atlas(atlas, src.dpmap);
        std::map<std::pair<int64_t, int64_t>, int> owners;
        for (int64_t y = 0; y < src.dpmap.height(); ++y)
            for (int64_t x = 0; x < src.dpmap.width(); ++x) {
                const int k = src.dpmap.part_at(y, x);
                if (k == 0) continue;
                owners[atlas_coords(k, src.dpmap.uv.at(y, x, 0), src.dpmap.uv.at(y, x, 1),
                                    lay)]++;
            }
        for (int64_t y = 0; y < src.dpmap.height() && roundtrip_ok; ++y)
            for (int64_t x = 0; x < src.dpmap.width() && roundtrip_ok; ++x) {
                const int k = src.dpmap.part_at(y, x);
                if (k == 0) continue;
                auto key = atlas_coords(k, src.dpmap.uv.at(y, x, 0), src.dpmap.uv.at(y, x, 1),
                                        lay);
                if (owners[key] != 1) continue;
                for (int c = 0; c < 3; ++c)
                    if (back.at(y, x, c) != src.image.at(y, x, c)) roundtrip_ok = false;
            }
        // cross-pose warp of the source atlas through the target pose
        auto [gen, cov2] = warp_from_atlas(atlas, tgt.dpmap);
        for (int64_t y = 0; y < tgt.dpmap.height(); ++y)
            for (int64_t x = 0; x < tgt.dpmap.width(); ++x) {
                if (!cov2.at(y, x)) continue;
                for (int c = 0; c < 3; ++c)
                    cross_err += std::abs(static_cast<double>(gen.at(y, x, c)) -
                                          static_cast<double>(tgt.image.at(y, x, c)));
                cross_px += 3;
            }
    }
    const double rate = static_cast<double>(collisions) / static_cast<double>(writes);
    const double mae = cross_px ? cross_err / static_cast<double>(cross_px) : 1.0;
    const bool ok = roundtrip_ok && rate < 0.05 && mae <= 0.05 && cross_px > 0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "100 samples: round trip %s, collision rate %.4f (<0.05), cross-pose MAE %.4f "
                  "(<=0.05)",
                  roundtrip_ok ? "exact" : "BROKEN", rate, mae);
    return {6, ok, buf, now_s() - t0};
}

// ---------------------------------------------------------------------------
// 7. latent deterioration diagnostic on a trained toy autoencoder
// ---------------------------------------------------------------------------

Criterion criterion_7() {
    const double t0 = now_s();
    // train
    std::vector<Tensor<float>> images;
    for (uint64_t i = 0; i < 48; ++i) {
        auto [src, tgt] = sample_pair(7000 + i, PairOptions{32, 10, 8});
        images.push_back(src.image);
        images.push_back(tgt.image);
    }
    AutoencTrainConfig ac;
    ac.steps = 2000;
    ac.batch = 8;
    ac.lr = 2e-3;
    ac.seed = 70;
    ac.width = 24;
    auto res = train_autoencoder(images, ac);
    // 200 fresh test images
    std::vector<Sample> test;
    for (uint64_t i = 0; i < 100; ++i) {
        auto [src, tgt] = sample_pair(7900 + i, PairOptions{32, 10, 8});
        test.push_back(src);
        test.push_back(tgt);
    }
    auto rep = deterioration_report(res.params, test, {0.0, 0.1, 0.2}, 10, 71);
    auto row = [&](double eps, const std::string& region) -> const DeteriorationRow& {
        for (const auto& r : rep.rows)
            if (r.eps == eps && r.region == region) return r;
        throw std::runtime_error("missing deterioration row");
    };
    const double face0 = row(0.0, "face").mse;
    const double whole0 = row(0.0, "whole").mse;
    const double w1 = row(0.1, "whole").mse;
    const double w2 = row(0.2, "whole").mse;
    const bool face_ok = face0 >= whole0;
    const bool mono_ok = whole0 <= w1 && w1 <= w2;
    char buf[220];
    std::snprintf(buf, sizeof(buf),
                  "face mse %.4f >= whole %.4f: %s; whole mse over eps {0,.1,.2} = "
                  "{%.4f,%.4f,%.4f} monotone: %s",
                  face0, whole0, face_ok ? "yes" : "NO", whole0, w1, w2, mono_ok ? "yes" : "NO");
    return {7, face_ok && mono_ok, buf, now_s() - t0};
}

// ---------------------------------------------------------------------------
// 8 + 9. directional ablation and editing locality
// ---------------------------------------------------------------------------

struct TrainedRun {
    Models<float> models;
    double fs_tgt = 0;
    double tex_err = 0;
};

struct AblationState {
    std::optional<Models<float>> full_seed0;
    Dataset eval_ds;
    std::string detail8;
    bool pass8 = false;
    bool ran = false;
};

AblationState g_ablation;

TrainedRun train_variant(const RunConfig& base_cfg, Ablation ab, const Dataset& train_ds,
                         const Dataset& eval_ds, const AutoencoderParams<float>& ae,
                         const FaceEncoderParams<float>& fe) {
    TrainedRun run{init_models<float>(base_cfg, ab)};
    run.models.autoenc = ae;
    run.models.face = fe;
    run.models.stages.insert("autoenc");
    run.models.stages.insert("face");
    TrainConfig tc = train_config_from(base_cfg, run.models.dims);
    auto log = train_diffusion(run.models, train_ds, tc);
    check(!log.diverged_at.has_value(), "acceptance: training diverged");
    SampleOptions opt;
    opt.steps = 20;
    opt.cfg_scale = 3.5;
    auto report = evaluate(run.models, eval_ds, eval_ds.size(), 123, opt);
    run.fs_tgt = report.aggregate.fs_tgt;
    run.tex_err = report.aggregate.tex_err;
    return run;
}

void run_ablation_study() {
    if (g_ablation.ran) return;
    g_ablation.ran = true;
    RunConfig cfg = preset_config("tiny");
    cfg.steps = 2000;
    cfg.lr = 1e-3;

    auto eval_dir = tmp_dir("eval_ds");
    fs::remove_all(eval_dir);
    make_dataset(dataset_config_from(cfg, 88000), 24, eval_dir);
    g_ablation.eval_ds = load_dataset(eval_dir);

    int wins = 0;
    std::string detail;
    for (uint64_t seed = 0; seed < 3; ++seed) {
        RunConfig scfg = cfg;
        scfg.seed = seed;
        auto train_dir = tmp_dir("train_ds_" + std::to_string(seed));
        fs::remove_all(train_dir);
        make_dataset(dataset_config_from(scfg, 81000 + seed), 48, train_dir);
        Dataset train_ds = load_dataset(train_dir);

        // shared stage-1 models per seed
        std::vector<Tensor<float>> images;
        for (const auto& p : train_ds.pairs) {
            images.push_back(p.source.image);
            images.push_back(p.target.image);
        }
        ModelDims dims = dims_for(scfg);
        AutoencTrainConfig ac;
        ac.steps = 1500;
        ac.batch = 8;
        ac.lr = 2e-3;
        ac.seed = seed;
        ac.width = dims.autoenc_width;
        ac.f = scfg.f;
        ac.latent_channels = scfg.latent_channels;
        auto ae = train_autoencoder(images, ac);
        FaceTrainConfig fc;
        fc.steps = 1200;
        fc.batch = 16;
        fc.seed = seed;
        fc.width = dims.face_width;
        fc.embed_dim = scfg.embed_dim;
        fc.face_size = dims.face_size;
        auto fe = train_face_encoder(train_ds, fc);

        auto b1 = train_variant(scfg, Ablation::B1, train_ds, g_ablation.eval_ds, ae.params,
                                fe.params);
        auto full = train_variant(scfg, Ablation::Full, train_ds, g_ablation.eval_ds, ae.params,
                                  fe.params);
        const bool win = full.fs_tgt > b1.fs_tgt && full.tex_err < b1.tex_err;
        wins += win ? 1 : 0;
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "[seed %llu] FS_tgt full %.4f vs B1 %.4f; tex_err full %.4f vs B1 %.4f -> "
                      "%s  ",
                      static_cast<unsigned long long>(seed), full.fs_tgt, b1.fs_tgt, full.tex_err,
                      b1.tex_err, win ? "win" : "loss");
        detail += buf;
        if (seed == 0) g_ablation.full_seed0 = full.models;
    }
    g_ablation.pass8 = wins >= 2;
    g_ablation.detail8 = detail + "(need wins >= 2 of 3, got " + std::to_string(wins) + ")";
}

Criterion criterion_8() {
    const double t0 = now_s();
    run_ablation_study();
    return {8, g_ablation.pass8, g_ablation.detail8, now_s() - t0};
}

Criterion criterion_9() {
    const double t0 = now_s();
    run_ablation_study();
    auto& models = *g_ablation.full_seed0;
    const auto& pair0 = g_ablation.eval_ds.pairs[0];
    const auto& donor = g_ablation.eval_ds.pairs[1].source;
    SampleOptions opt;
    opt.steps = 20;
    opt.cfg_scale = 3.5;
    opt.seed = 99;
    auto baseline = ddim_sample(models, build_conditions(models, pair0.source),
                                pair0.target.dpmap, opt);
    Edits e;
    e.atlas_donor = &donor;
    e.swap_parts = {kPartTorso};
    auto edited = edit_sample(models, pair0.source, e, pair0.target.dpmap, opt);
    double in_acc = 0, out_acc = 0;
    int64_t in_n = 0, out_n = 0;
    for (int64_t y = 0; y < baseline.dim(0); ++y)
        for (int64_t x = 0; x < baseline.dim(1); ++x) {
            double d = 0;
            for (int c = 0; c < 3; ++c)
                d += std::abs(static_cast<double>(baseline.at(y, x, c)) - edited.at(y, x, c));
            if (pair0.target.dpmap.part_at(y, x) == kPartTorso) {
                in_acc += d;
                in_n += 3;
            } else {
                out_acc += d;
                out_n += 3;
            }
        }
    const double inside = in_acc / static_cast<double>(in_n);
    const double outside = out_acc / static_cast<double>(out_n);
    const double ratio = outside > 0 ? inside / outside : 0.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "torso swap: inside mean change %.5f, outside %.5f, ratio %.2f (>2)", inside,
                  outside, ratio);
    return {9, ratio > 2.0, buf, now_s() - t0};
}

// ---------------------------------------------------------------------------
// 10. metric correctness
// ---------------------------------------------------------------------------

double ssim_brute(const Tensor<float>& x, const Tensor<float>& y) {
    const int window = 11;
    const double sigma = 1.5;
    const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    std::vector<double> win(static_cast<size_t>(window * window));
    const double ctr = (window - 1) / 2.0;
    double wsum = 0;
    for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
            const double g =
                std::exp(-((i - ctr) * (i - ctr) + (j - ctr) * (j - ctr)) / (2 * sigma * sigma));
            win[static_cast<size_t>(i * window + j)] = g;
            wsum += g;
        }
    for (auto& v : win) v /= wsum;
    double total = 0;
    int64_t count = 0;
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y0 = 0; y0 + window <= h; ++y0)
            for (int64_t x0 = 0; x0 + window <= w; ++x0) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int i = 0; i < window; ++i)
                    for (int j = 0; j < window; ++j) {
                        const double wv = win[static_cast<size_t>(i * window + j)];
                        const double xv = x.at(y0 + i, x0 + j, ch);
                        const double yv = y.at(y0 + i, x0 + j, ch);
                        mx += wv * xv;
                        my += wv * yv;
                        mxx += wv * xv * xv;
                        myy += wv * yv * yv;
                        mxy += wv * xv * yv;
                    }
                total += ((2 * mx * my + 1e-4) * (2 * (mxy - mx * my) + 9e-4)) /
                         ((mx * mx + my * my + 1e-4) *
                          ((mxx - mx * mx) + (myy - my * my) + 9e-4));
                ++count;
            }
    return total / static_cast<double>(count);
}

Criterion criterion_10() {
    const double t0 = now_s();
    Rng rng(101);
    bool ok = true;
    std::string detail;

    auto x = rand_uniform<float>({16, 16, 3}, rng);
    const bool self_ok = std::abs(ssim(x, x) - 1.0) <= 1e-8;
    ok = ok && self_ok;
    detail += self_ok ? "ssim(x,x)=1; " : "SSIM SELF-SIM BROKEN; ";

    Tensor<double> a({8, 8, 3});
    for (int64_t i = 0; i < a.numel(); ++i)
        a.data[i] = 0.2 + 0.5 * static_cast<double>(i) / static_cast<double>(a.numel());
    Tensor<double> b(a.shape);
    b.data = a.data + 0.1;
    const bool psnr_ok = std::abs(psnr(a, b) - 20.0) <= 1e-9;
    ok = ok && psnr_ok;
    detail += psnr_ok ? "psnr 20dB exact; " : "PSNR HAND CASE BROKEN; ";

    double worst = 0;
    for (int trial = 0; trial < 3; ++trial) {
        auto u = rand_uniform<float>({16, 16, 3}, rng);
        auto v = rand_uniform<float>({16, 16, 3}, rng);
        worst = std::max(worst, std::abs(ssim(u, v) - ssim_brute(u, v)));
    }
    ok = ok && worst <= 1e-6;
    char buf[80];
    std::snprintf(buf, sizeof(buf), "ssim oracle err %.2e; ", worst);
    detail += buf;

    TensorArchive arch;
    arch.metadata = "{\"criterion\":10}";
    arch.add("t", randn<float>({5, 5}, rng));
    arch.add("d", randn<double>({3}, rng));
    const auto path = tmp_dir("c10") + "/arch.bin";
    write_archive(path, arch);
    auto rt = read_archive(path);
    const bool arch_ok = rt.metadata == arch.metadata &&
                         bit_equal(rt.get<float>("t"), arch.get<float>("t")) &&
                         bit_equal(rt.get<double>("d"), arch.get<double>("d"));
    ok = ok && arch_ok;
    detail += arch_ok ? "archive round-trip bit-exact" : "ARCHIVE ROUND-TRIP BROKEN";
    return {10, ok, detail, now_s() - t0};
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> which;
    for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
    auto wanted = [&](int id) {
        return which.empty() || std::find(which.begin(), which.end(), id) != which.end();
    };
    using Fn = Criterion (*)();
    const Fn fns[] = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                      criterion_6, criterion_7, criterion_8, criterion_9, criterion_10};
    int failures = 0;
    for (int id = 1; id <= 10; ++id) {
        if (!wanted(id)) continue;
        Criterion c = fns[id - 1]();
        std::printf("%s criterion %2d (%6.1fs): %s\n", c.pass ? "PASS" : "FAIL", c.id, c.seconds,
                    c.detail.c_str());
        std::fflush(stdout);
        failures += c.pass ? 0 : 1;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
