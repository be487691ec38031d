#pragma once

#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcld/nn.hpp"
#include "mcld/synthdata.hpp"

namespace mcld {

inline double psnr_from_mse(double m) {
    if (m <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

// Convolutional autoencoder: log2(f) stride-2 conv+SiLU blocks plus a final
// stride-1 conv to the latent, mirrored decoder with nearest upsampling.
// No normalization layers; decode() clamps to [0,1], the raw path is used
// for training.
template <class S>
struct AutoencoderParams {
    int f = 4;
    int latent_channels = 4;
    int width = 16;

    Conv<S> e1, e2, e3;
    Conv<S> d1, d2, d3;

    bool deep() const { return f == 4; }

    void init(Rng& rng, int f_, int latent_channels_, int width_) {
        check(f_ == 2 || f_ == 4, "autoenc: f must be 2 or 4");
        f = f_;
        latent_channels = latent_channels_;
        width = width_;
        const int w = width, cz = latent_channels;
        if (deep()) {
            e1.init(rng, 3, 3, 3, w, 2, 1);
            e2.init(rng, 3, 3, w, 2 * w, 2, 1);
            e3.init(rng, 3, 3, 2 * w, cz, 1, 1);
            d1.init(rng, 3, 3, cz, 2 * w, 1, 1);
            d2.init(rng, 3, 3, 2 * w, w, 1, 1);
            d3.init(rng, 3, 3, w, 3, 1, 1);
        } else {
            e1.init(rng, 3, 3, 3, w, 2, 1);
            e3.init(rng, 3, 3, w, cz, 1, 1);
            d1.init(rng, 3, 3, cz, w, 1, 1);
            d3.init(rng, 3, 3, w, 3, 1, 1);
        }
    }

    template <class F>
    void visit(const std::string& p, F&& fn) {
        const std::string q = p.empty() ? "autoenc" : p;
        e1.visit(q + ".e1", fn);
        if (deep()) e2.visit(q + ".e2", fn);
        e3.visit(q + ".e3", fn);
        d1.visit(q + ".d1", fn);
        if (deep()) d2.visit(q + ".d2", fn);
        d3.visit(q + ".d3", fn);
    }

    typename Tape<S>::Var encode_t(Tape<S>& tp, const VarMap<S>& vm,
                                   typename Tape<S>::Var img) const {
        const auto& shp = tp.val(img).shape;
        check(shp.size() == 3 && shp[2] == 3, "encode: expected H×W×3");
        check(shp[0] % f == 0 && shp[1] % f == 0, "encode: dims must be divisible by f");
        auto h = tp.silu(e1.fwd(tp, vm, img));
        if (deep()) h = tp.silu(e2.fwd(tp, vm, h));
        return e3.fwd(tp, vm, h);
    }

    // Raw decode without the output clamp (training path).
    typename Tape<S>::Var decode_raw_t(Tape<S>& tp, const VarMap<S>& vm,
                                       typename Tape<S>::Var z) const {
        const auto& shp = tp.val(z).shape;
        check(shp.size() == 3 && shp[2] == latent_channels, "decode: bad latent shape");
        auto h = tp.silu(d1.fwd(tp, vm, z));
        h = tp.upsample2(h);
        if (deep()) {
            h = tp.silu(d2.fwd(tp, vm, h));
            h = tp.upsample2(h);
        }
        return d3.fwd(tp, vm, h);
    }

    Tensor<S> encode(const Tensor<S>& image) const {
        Tape<S> tp;
        VarMap<S> vm;
        bind_params(tp, const_cast<AutoencoderParams&>(*this), false, vm);
        return tp.val(encode_t(tp, vm, tp.constant(image)));
    }

    Tensor<S> decode(const Tensor<S>& z) const {
        Tape<S> tp;
        VarMap<S> vm;
        bind_params(tp, const_cast<AutoencoderParams&>(*this), false, vm);
        return clamp01(tp.val(decode_raw_t(tp, vm, tp.constant(z))));
    }
};

struct AutoencTrainConfig {
    double lr = 2e-3;
    int steps = 3000;
    int batch = 8;
    uint64_t seed = 0;
    int f = 4;
    int latent_channels = 4;
    int width = 16;
};

struct AutoencTrainResult {
    AutoencoderParams<float> params;
    std::vector<double> loss_curve;
};

// Plain reconstruction-MSE training, single-threaded and seeded. NaN loss
// aborts with a diagnostic.
inline AutoencTrainResult train_autoencoder(const std::vector<Tensor<float>>& images,
                                            const AutoencTrainConfig& cfg) {
    check(!images.empty(), "train_autoencoder: empty dataset");
    AutoencTrainResult res;
    Rng init_rng(hash_u64(cfg.seed, fnv1a64("autoenc_init")));
    res.params.init(init_rng, cfg.f, cfg.latent_channels, cfg.width);

    std::vector<Tensor<float>*> params;
    res.params.visit("", [&](const std::string&, Tensor<float>& t) { params.push_back(&t); });
    Adam<float> opt(cfg.lr);

    for (int step = 0; step < cfg.steps; ++step) {
        Rng step_rng(hash_u64(cfg.seed, 0xae000000ull + static_cast<uint64_t>(step)));
        Tape<float> tp;
        VarMap<float> vm;
        bind_params(tp, res.params, true, vm);
        typename Tape<float>::Var loss = -1;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& img = images[static_cast<size_t>(
                step_rng.uniform_int(0, static_cast<int64_t>(images.size())))];
            auto x = tp.constant(img);
            auto z = res.params.encode_t(tp, vm, x);
            auto y = res.params.decode_raw_t(tp, vm, z);
            auto d = tp.sub(y, x);
            auto l = tp.mean_all(tp.mul(d, d));
            loss = (loss < 0) ? l : tp.add(loss, l);
        }
        loss = tp.scale(loss, 1.0f / static_cast<float>(cfg.batch));
        const double lv = static_cast<double>(tp.val(loss).data[0]);
        if (!std::isfinite(lv))
            throw std::runtime_error("autoenc training diverged (non-finite loss) at step " +
                                     std::to_string(step));
        res.loss_curve.push_back(lv);
        tp.backward(loss);
        std::vector<const Tensor<float>*> grads;
        for (auto* p : params) grads.push_back(&tp.grad(vm.at(*p)));
        opt.step(params, grads);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Latent deterioration diagnostic: decode(z + ε·N(0,I)) error per region.
// ---------------------------------------------------------------------------

struct DeteriorationRow {
    double eps = 0;
    std::string region;  // whole | face | torso
    double mse = 0;
    double psnr = 0;
};

struct DeteriorationReport {
    std::vector<DeteriorationRow> rows;
};

inline nlohmann::json deterioration_to_json(const DeteriorationReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json jr{{"eps", row.eps}, {"region", row.region}, {"mse", row.mse}};
        if (std::isinf(row.psnr))
            jr["psnr"] = "inf";
        else
            jr["psnr"] = row.psnr;
        rows.push_back(jr);
    }
    return rows;
}

// Per-eps rows ordered as given; regions are whole image, face box and
// torso raster. For ε>0 the error is averaged over `draws` noise draws.
inline DeteriorationReport deterioration_report(const AutoencoderParams<float>& params,
                                                const std::vector<Sample>& samples,
                                                const std::vector<double>& eps_list,
                                                int draws = 10, uint64_t seed = 0) {
    check(!samples.empty(), "deterioration_report: empty dataset");
    DeteriorationReport rep;
    for (double eps : eps_list) {
        double acc_whole = 0, acc_face = 0, acc_torso = 0;
        int64_t n_whole = 0, n_face = 0, n_torso = 0;
        const int ndraws = eps == 0.0 ? 1 : draws;
        for (size_t si = 0; si < samples.size(); ++si) {
            const Sample& s = samples[si];
            auto z = params.encode(s.image);
            for (int dr = 0; dr < ndraws; ++dr) {
                Tensor<float> zp = z;
                if (eps != 0.0) {
                    Rng rng(hash_u64(seed, hash_u64(si, static_cast<uint64_t>(dr) * 1000 +
                                                            static_cast<uint64_t>(eps * 1e6))));
                    for (int64_t i = 0; i < zp.numel(); ++i)
                        zp.data[i] += static_cast<float>(eps * rng.normal());
                }
                auto rec = params.decode(zp);
                for (int64_t y = 0; y < s.image.dim(0); ++y)
                    for (int64_t x = 0; x < s.image.dim(1); ++x) {
                        double px_err = 0;
                        for (int c = 0; c < 3; ++c) {
                            double d = static_cast<double>(rec.at(y, x, c)) -
                                       static_cast<double>(s.image.at(y, x, c));
                            px_err += d * d;
                        }
                        acc_whole += px_err;
                        n_whole += 3;
                        if (x >= s.face_box[0] && x < s.face_box[2] && y >= s.face_box[1] &&
                            y < s.face_box[3]) {
                            acc_face += px_err;
                            n_face += 3;
                        }
                        if (s.dpmap.part_at(y, x) == kPartTorso) {
                            acc_torso += px_err;
                            n_torso += 3;
                        }
                    }
            }
        }
        auto push = [&](const std::string& region, double acc, int64_t n) {
            DeteriorationRow row;
            row.eps = eps;
            row.region = region;
            row.mse = n ? acc / static_cast<double>(n) : 0.0;
            row.psnr = psnr_from_mse(row.mse);
            rep.rows.push_back(row);
        };
        push("whole", acc_whole, n_whole);
        push("face", acc_face, n_face);
        push("torso", acc_torso, n_torso);
    }
    return rep;
}

}  // namespace mcld
