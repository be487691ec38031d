#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mcld/diffusion.hpp"
#include "mcld/metrics.hpp"

using namespace mcld;

namespace {

struct TrainFixture {
    Dataset ds;
    Models<float> models;

    explicit TrainFixture(uint64_t seed, int n_pairs = 8, int face_steps = 200,
                          int autoenc_steps = 200) {
        RunConfig cfg = preset_config("tiny");
        cfg.seed = seed;
        auto dir = (std::filesystem::temp_directory_path() /
                    ("mcld_train_fx_" + std::to_string(seed)))
                       .string();
        std::filesystem::remove_all(dir);
        make_dataset(dataset_config_from(cfg, seed + 1000), n_pairs, dir);
        ds = load_dataset(dir);
        models = init_models<float>(cfg);

        std::vector<Tensor<float>> images;
        for (const auto& p : ds.pairs) {
            images.push_back(p.source.image);
            images.push_back(p.target.image);
        }
        AutoencTrainConfig ac;
        ac.steps = autoenc_steps;
        ac.batch = 4;
        ac.seed = seed;
        ac.width = models.dims.autoenc_width;
        ac.f = cfg.f;
        ac.latent_channels = cfg.latent_channels;
        models.autoenc = train_autoencoder(images, ac).params;
        models.stages.insert("autoenc");

        FaceTrainConfig fc;
        fc.steps = face_steps;
        fc.batch = 8;
        fc.seed = seed;
        fc.width = models.dims.face_width;
        fc.embed_dim = cfg.embed_dim;
        fc.face_size = models.dims.face_size;
        models.face = train_face_encoder(ds, fc).params;
        models.stages.insert("face");
    }
};

template <class M>
std::vector<Tensor<float>> snapshot_of(M& model) {
    std::vector<Tensor<float>> out;
    model.visit("", [&](const std::string&, Tensor<float>& t) { out.push_back(t); });
    return out;
}

template <class M>
bool equals_snapshot(M& model, const std::vector<Tensor<float>>& snap) {
    size_t i = 0;
    bool ok = true;
    model.visit("", [&](const std::string&, Tensor<float>& t) {
        ok = ok && i < snap.size() && bit_equal(t, snap[i]);
        ++i;
    });
    return ok && i == snap.size();
}

}  // namespace

TEST_CASE("diffusion training: zero steps leaves the checkpoint at initialization") {
    TrainFixture fx(1, 4, 30, 30);
    auto snap = snapshot_of(fx.models.unet);
    TrainConfig tc;
    tc.steps = 0;
    auto log = train_diffusion(fx.models, fx.ds, tc);
    CHECK(log.steps.empty());
    CHECK(equals_snapshot(fx.models.unet, snap));
}

TEST_CASE("diffusion training requires the stage-1 checkpoints") {
    TrainFixture fx(2, 2, 10, 10);
    auto models = init_models<float>(fx.models.cfg);  // no stages set
    TrainConfig tc;
    tc.steps = 1;
    CHECK_THROWS_WITH_AS(train_diffusion(models, fx.ds, tc), doctest::Contains("autoenc"),
                         std::runtime_error);
    models.stages.insert("autoenc");
    CHECK_THROWS_WITH_AS(train_diffusion(models, fx.ds, tc), doctest::Contains("face"),
                         std::runtime_error);
}

TEST_CASE("diffusion training: seed determinism and frozen stage-1 weights") {
    TrainFixture fx1(3, 4, 40, 60);
    TrainFixture fx2(3, 4, 40, 60);
    auto frozen_face = snapshot_of(fx1.models.face);
    auto frozen_autoenc = snapshot_of(fx1.models.autoenc);
    TrainConfig tc;
    tc.steps = 8;
    tc.batch = 2;
    tc.seed = 9;
    tc.cond_drop_prob = 0.2;
    auto log1 = train_diffusion(fx1.models, fx1.ds, tc);
    auto log2 = train_diffusion(fx2.models, fx2.ds, tc);
    REQUIRE(log1.steps.size() == 8);
    for (size_t i = 0; i < 8; ++i)
        CHECK(log1.steps[i].loss_overall == log2.steps[i].loss_overall);
    std::vector<Tensor<float>*> a, b;
    fx1.models.visit_diffusion_trainable(
        [&](const std::string&, Tensor<float>& t) { a.push_back(&t); });
    fx2.models.visit_diffusion_trainable(
        [&](const std::string&, Tensor<float>& t) { b.push_back(&t); });
    for (size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(*a[i], *b[i]));
    // the frozen models are bit-identical after diffusion training
    CHECK(equals_snapshot(fx1.models.face, frozen_face));
    CHECK(equals_snapshot(fx1.models.autoenc, frozen_autoenc));
    // loss decomposition holds per logged step
    for (const auto& s : log1.steps)
        CHECK(s.loss_overall == doctest::Approx(s.loss_mse + s.loss_face).epsilon(1e-6));
}

TEST_CASE("condition dropout instrumentation in the training loop") {
    TrainFixture fx(4, 2, 10, 10);
    TrainConfig tc;
    tc.steps = 30;
    tc.batch = 2;
    tc.cond_drop_prob = 0.0;
    auto log = train_diffusion(fx.models, fx.ds, tc);
    CHECK(log.uncond_samples == 0);
    CHECK(log.total_samples == 60);
}

TEST_CASE("diffusion loss decreases over a short run") {
    TrainFixture fx(5, 8, 150, 150);
    TrainConfig tc;
    tc.steps = 220;
    tc.batch = 4;
    tc.seed = 7;
    tc.lr = 2e-3;
    auto log = train_diffusion(fx.models, fx.ds, tc);
    REQUIRE(log.steps.size() == 220);
    CHECK_FALSE(log.diverged_at.has_value());
    double early = 0, late = 0;
    for (int i = 0; i < 20; ++i) {
        early += log.steps[static_cast<size_t>(i)].loss_overall;
        late += log.steps[log.steps.size() - 1 - static_cast<size_t>(i)].loss_overall;
    }
    CHECK(late < early);

    // trained embedders separate different inputs
    auto [x, x2] = sample_pair(900, PairOptions{32, 10, 8});
    auto [y, y2] = sample_pair(901, PairOptions{32, 10, 8});
    CHECK(cosine(image_embed(fx.models.image_enc, x.image),
                 image_embed(fx.models.image_enc, y.image)) < 0.999);
    auto ax = warp_to_atlas(x.image, x.dpmap, fx.models.atlas_layout());
    auto ay = warp_to_atlas(y.image, y.dpmap, fx.models.atlas_layout());
    CHECK(cosine(atlas_embed(fx.models.atlas_enc, cast<float>(ax.texels)),
                 atlas_embed(fx.models.atlas_enc, cast<float>(ay.texels))) < 0.999);

    // reference features respond to input perturbations on trained weights
    auto cond = build_conditions(fx.models, fx.ds.pairs[0].source);
    auto ci = build_cond_inputs(fx.models, fx.ds.pairs[0].source);
    auto zeroed = reference_forward(fx.models.ref, zeros<float>(ci.a_ref_latent.shape));
    for (int i = 0; i < 3; ++i)
        CHECK_FALSE(bit_equal(cond.c_ref[static_cast<size_t>(i)], zeroed[static_cast<size_t>(i)]));

    // sampling from the trained model is reproducible
    SampleOptions opt;
    opt.steps = 10;
    opt.seed = 5;
    auto img1 = ddim_sample(fx.models, cond, fx.ds.pairs[0].target.dpmap, opt);
    auto img2 = ddim_sample(fx.models, cond, fx.ds.pairs[0].target.dpmap, opt);
    CHECK(bit_equal(img1, img2));
}
