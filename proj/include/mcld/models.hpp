#pragma once

#include <set>
#include <sstream>
#include <string>

#include "mcld/archive.hpp"
#include "mcld/autoenc.hpp"
#include "mcld/config.hpp"
#include "mcld/denoiser.hpp"
#include "mcld/embedders.hpp"

namespace mcld {

// Everything a run needs: frozen stage-1 models (autoencoder, face encoder)
// plus the diffusion-side trainables (UNet+MFCA, ReferenceNet, pose guider,
// image/atlas encoders).
template <class S>
struct Models {
    RunConfig cfg;
    ModelDims dims;
    Ablation ablation = Ablation::Full;
    std::set<std::string> stages;  // which training stages produced this state

    AutoencoderParams<S> autoenc;
    FaceEncoderParams<S> face;
    ImageEncoderParams<S> image_enc;
    ImageEncoderParams<S> atlas_enc;
    UNetParams<S> unet;
    ReferenceNetParams<S> ref;
    PoseGuiderParams<S> pose_guider;

    int64_t latent_h() const { return cfg.canvas / cfg.f; }
    int64_t latent_w() const { return cfg.canvas / cfg.f; }
    AtlasLayout atlas_layout() const { return AtlasLayout{cfg.parts, cfg.tile}; }

    template <class F>
    void visit_diffusion_trainable(F&& fn) {
        unet.visit("", fn);
        ref.visit("", fn);
        pose_guider.visit("", fn);
        image_enc.visit("img_enc", fn);
        atlas_enc.visit("atlas_enc", fn);
    }

    template <class F>
    void visit_all(F&& fn) {
        autoenc.visit("", fn);
        face.visit("", fn);
        visit_diffusion_trainable(fn);
    }
};

template <class S>
Models<S> init_models(const RunConfig& cfg, Ablation ablation = Ablation::Full) {
    validate_config(cfg);
    Models<S> m;
    m.cfg = cfg;
    m.dims = dims_for(cfg);
    m.ablation = ablation;
    const ModelDims& d = m.dims;
    {
        Rng rng(hash_u64(cfg.seed, fnv1a64("init.autoenc")));
        m.autoenc.init(rng, cfg.f, cfg.latent_channels, d.autoenc_width);
    }
    {
        Rng rng(hash_u64(cfg.seed, fnv1a64("init.face")));
        m.face.init(rng, d.face_width, cfg.embed_dim, d.face_size);
    }
    {
        Rng rng(hash_u64(cfg.seed, fnv1a64("init.image_enc")));
        m.image_enc.init(rng, d.embedder_width, cfg.embed_dim, cfg.embed_tokens);
    }
    {
        Rng rng(hash_u64(cfg.seed, fnv1a64("init.atlas_enc")));
        m.atlas_enc.init(rng, d.embedder_width, cfg.embed_dim, cfg.embed_tokens);
    }
    {
        Rng rng(hash_u64(cfg.seed, fnv1a64("init.unet")));
        m.unet.init(rng, cfg.latent_channels, d.unet_w1, d.unet_w2, cfg.embed_dim, d.attn_dim,
                    d.sin_dim, d.temb_dim, cfg.lambda_s, cfg.lambda_f);
    }
    {
        Rng rng(hash_u64(cfg.seed, fnv1a64("init.ref")));
        m.ref.init(rng, cfg.latent_channels, d.unet_w1, d.unet_w2);
    }
    {
        Rng rng(hash_u64(cfg.seed, fnv1a64("init.pose_guider")));
        m.pose_guider.init(rng, cfg.f, cfg.parts, d.pose_hidden, cfg.latent_channels);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, Models<float>& models) {
    TensorArchive a;
    models.visit_all([&](const std::string& name, Tensor<float>& t) { a.add(name, t); });
    nlohmann::json meta{{"format", "mcld-checkpoint"},
                        {"ablation", ablation_to_string(models.ablation)},
                        {"stages", std::vector<std::string>(models.stages.begin(),
                                                            models.stages.end())},
                        {"config", config_to_map(models.cfg)}};
    a.metadata = meta.dump();
    write_archive(path, a);
}

inline Models<float> load_checkpoint(const std::string& path) {
    TensorArchive a = read_archive(path);
    nlohmann::json meta = nlohmann::json::parse(a.metadata);
    check(meta.value("format", "") == "mcld-checkpoint",
          "checkpoint: not an mcld checkpoint: " + path);
    std::map<std::string, std::string> cfg_map =
        meta.at("config").get<std::map<std::string, std::string>>();
    RunConfig cfg = config_from_map(cfg_map);
    Models<float> m = init_models<float>(cfg, ablation_from_string(meta.at("ablation")));
    for (const auto& s : meta.at("stages").get<std::vector<std::string>>()) m.stages.insert(s);
    m.visit_all([&](const std::string& name, Tensor<float>& t) {
        if (!a.has(name)) throw std::runtime_error("checkpoint: missing tensor: " + name);
        const auto& src = a.get<float>(name);
        check(src.shape == t.shape, "checkpoint: shape mismatch for " + name);
        t = src;
    });
    return m;
}

template <class S>
std::string describe(Models<S>& models) {
    std::ostringstream out;
    auto group = [&](const std::string& title, int64_t n) {
        out << "  " << title << ": " << n << " parameters\n";
    };
    int64_t total = 0;
    auto count = [&](auto&& visit_fn) {
        int64_t n = 0;
        visit_fn([&](const std::string&, Tensor<S>& t) { n += t.numel(); });
        return n;
    };
    const int64_t n_ae = count([&](auto f) { models.autoenc.visit("", f); });
    const int64_t n_face = count([&](auto f) { models.face.visit("", f); });
    const int64_t n_unet = count([&](auto f) { models.unet.visit("", f); });
    const int64_t n_ref = count([&](auto f) { models.ref.visit("", f); });
    const int64_t n_pg = count([&](auto f) { models.pose_guider.visit("", f); });
    const int64_t n_ie = count([&](auto f) { models.image_enc.visit("i", f); });
    const int64_t n_aemb = count([&](auto f) { models.atlas_enc.visit("a", f); });
    out << "model parameters (preset " << models.cfg.preset << "):\n";
    group("autoencoder (frozen after stage 1)", n_ae);
    group("face encoder (frozen after stage 1)", n_face);
    group("unet + mfca", n_unet);
    group("reference net", n_ref);
    group("pose guider", n_pg);
    group("image encoder", n_ie);
    group("atlas encoder", n_aemb);
    total = n_ae + n_face + n_unet + n_ref + n_pg + n_ie + n_aemb;
    out << "  denoiser-side trainables: " << (n_unet + n_ref + n_pg + n_ie + n_aemb) << "\n";
    out << "  total: " << total << "\n";
    return out.str();
}

template <class S>
int64_t denoiser_param_count(Models<S>& models) {
    int64_t n = 0;
    models.visit_diffusion_trainable([&](const std::string&, Tensor<S>& t) { n += t.numel(); });
    return n;
}

inline DatasetConfig dataset_config_from(const RunConfig& cfg, uint64_t base_seed) {
    DatasetConfig dc;
    dc.base_seed = base_seed;
    dc.canvas = cfg.canvas;
    dc.parts = cfg.parts;
    dc.tile = cfg.tile;
    return dc;
}

}  // namespace mcld
