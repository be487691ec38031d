#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcld/diffusion.hpp"

namespace mcld {

// ---------------------------------------------------------------------------
// Pixel metrics
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    const double c = (size - 1) / 2.0;
    double sum = 0;
    for (int i = 0; i < size; ++i) {
        w[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable valid-mode Gaussian filtering of one channel plane.
inline std::vector<double> filter_plane(const std::vector<double>& plane, int64_t h, int64_t w,
                                        const std::vector<double>& win) {
    const int64_t k = static_cast<int64_t>(win.size());
    const int64_t wo = w - k + 1, ho = h - k + 1;
    std::vector<double> tmp(static_cast<size_t>(h * wo));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < wo; ++x) {
            double acc = 0;
            for (int64_t i = 0; i < k; ++i)
                acc += win[static_cast<size_t>(i)] * plane[static_cast<size_t>(y * w + x + i)];
            tmp[static_cast<size_t>(y * wo + x)] = acc;
        }
    std::vector<double> out(static_cast<size_t>(ho * wo));
    for (int64_t y = 0; y < ho; ++y)
        for (int64_t x = 0; x < wo; ++x) {
            double acc = 0;
            for (int64_t i = 0; i < k; ++i)
                acc += win[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * wo + x)];
            out[static_cast<size_t>(y * wo + x)] = acc;
        }
    return out;
}

}  // namespace detail

// Windowed SSIM: 11×11 Gaussian window (σ=1.5), K1=0.01, K2=0.03, L=1,
// averaged over valid window positions and channels.
template <class S>
double ssim(const Tensor<S>& x, const Tensor<S>& y, int window = 11, double sigma = 1.5) {
    check(x.same_shape(y), "ssim: shape mismatch");
    check(x.ndim() == 3, "ssim: expected H×W×C");
    const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    check(h >= window && w >= window, "ssim: image smaller than the window");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;  // L = 1
    const auto win = detail::gaussian_window(window, sigma);
    double total = 0;
    int64_t count = 0;
    std::vector<double> px(static_cast<size_t>(h * w)), py(static_cast<size_t>(h * w)),
        pxx(static_cast<size_t>(h * w)), pyy(static_cast<size_t>(h * w)),
        pxy(static_cast<size_t>(h * w));
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t i = 0; i < h * w; ++i) {
            const double xv = static_cast<double>(x.data[i * c + ch]);
            const double yv = static_cast<double>(y.data[i * c + ch]);
            px[static_cast<size_t>(i)] = xv;
            py[static_cast<size_t>(i)] = yv;
            pxx[static_cast<size_t>(i)] = xv * xv;
            pyy[static_cast<size_t>(i)] = yv * yv;
            pxy[static_cast<size_t>(i)] = xv * yv;
        }
        auto mx = detail::filter_plane(px, h, w, win);
        auto my = detail::filter_plane(py, h, w, win);
        auto mxx = detail::filter_plane(pxx, h, w, win);
        auto myy = detail::filter_plane(pyy, h, w, win);
        auto mxy = detail::filter_plane(pxy, h, w, win);
        for (size_t i = 0; i < mx.size(); ++i) {
            const double mu_x = mx[i], mu_y = my[i];
            const double var_x = mxx[i] - mu_x * mu_x;
            const double var_y = myy[i] - mu_y * mu_y;
            const double cov = mxy[i] - mu_x * mu_y;
            const double num = (2 * mu_x * mu_y + C1) * (2 * cov + C2);
            const double den = (mu_x * mu_x + mu_y * mu_y + C1) * (var_x + var_y + C2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// 10·log10(1/MSE) for unit range; identical images report +inf.
template <class S>
double psnr(const Tensor<S>& x, const Tensor<S>& y) {
    check(x.same_shape(y), "psnr: shape mismatch");
    return psnr_from_mse(mse(x, y));
}

// Cosine on normalized embeddings, euclidean distance on the raw
// pre-normalization features of the frozen face encoder.
template <class S>
std::pair<double, double> face_similarity(const FaceEncoderParams<S>& enc, const Tensor<S>& img_a,
                                          const std::array<int64_t, 4>& box_a,
                                          const Tensor<S>& img_b,
                                          const std::array<int64_t, 4>& box_b) {
    auto crop_a = face_crop_resized(img_a, box_a, enc.face_size);
    auto crop_b = face_crop_resized(img_b, box_b, enc.face_size);
    auto [raw_a, emb_a] = enc.features(crop_a);
    auto [raw_b, emb_b] = enc.features(crop_b);
    double fs = cosine(emb_a, emb_b);
    double dist = 0;
    for (int64_t i = 0; i < raw_a.numel(); ++i) {
        const double d = static_cast<double>(raw_a.data[i]) - static_cast<double>(raw_b.data[i]);
        dist += d * d;
    }
    return {fs, std::sqrt(dist)};
}

// Synthetic-only appearance oracle: warp the generated image into atlas
// space through the target pose and compare against the source atlas over
// texels valid in both.
inline double texture_error(const Tensor<float>& gen_image, const DensePoseMap& tgt_dpmap,
                            const TextureAtlas& src_atlas) {
    auto gen_atlas = warp_to_atlas(gen_image, tgt_dpmap, src_atlas.layout);
    double acc = 0;
    int64_t n = 0;
    for (int64_t y = 0; y < src_atlas.valid.dim(0); ++y)
        for (int64_t x = 0; x < src_atlas.valid.dim(1); ++x) {
            if (!src_atlas.valid.at(y, x) || !gen_atlas.valid.at(y, x)) continue;
            for (int c = 0; c < 3; ++c)
                acc += std::abs(static_cast<double>(gen_atlas.texels.at(y, x, c)) -
                                static_cast<double>(src_atlas.texels.at(y, x, c)));
            n += 3;
        }
    check(n > 0, "texture_error: no overlapping valid texels");
    return acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

struct EvalRow {
    int64_t id = 0;
    double ssim = 0, psnr = 0;
    double fs_ref = 0, dist_ref = 0;
    double fs_tgt = 0, dist_tgt = 0;
    double tex_err = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalRow aggregate;  // arithmetic means (id unused)

    void finalize() {
        aggregate = EvalRow{};
        if (rows.empty()) return;
        for (const auto& r : rows) {
            aggregate.ssim += r.ssim;
            aggregate.psnr += r.psnr;
            aggregate.fs_ref += r.fs_ref;
            aggregate.dist_ref += r.dist_ref;
            aggregate.fs_tgt += r.fs_tgt;
            aggregate.dist_tgt += r.dist_tgt;
            aggregate.tex_err += r.tex_err;
        }
        const double n = static_cast<double>(rows.size());
        aggregate.ssim /= n;
        aggregate.psnr /= n;
        aggregate.fs_ref /= n;
        aggregate.dist_ref /= n;
        aggregate.fs_tgt /= n;
        aggregate.dist_tgt /= n;
        aggregate.tex_err /= n;
    }
};

inline nlohmann::json eval_row_json(const EvalRow& r, bool with_id) {
    nlohmann::json j{{"ssim", r.ssim},     {"fs_ref", r.fs_ref},   {"dist_ref", r.dist_ref},
                     {"fs_tgt", r.fs_tgt}, {"dist_tgt", r.dist_tgt}, {"tex_err", r.tex_err},
                     {"fid", nullptr},     {"lpips", nullptr}};
    if (std::isinf(r.psnr))
        j["psnr"] = "inf";
    else
        j["psnr"] = r.psnr;
    if (with_id) j["id"] = r.id;
    return j;
}

inline nlohmann::json eval_report_json(const EvalReport& rep) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) rows.push_back(eval_row_json(r, true));
    return nlohmann::json{{"rows", rows}, {"aggregate", eval_row_json(rep.aggregate, false)}};
}

inline std::string eval_report_csv(const EvalReport& rep) {
    std::ostringstream out;
    out.precision(12);
    out << "id,ssim,psnr,fs_ref,dist_ref,fs_tgt,dist_tgt,tex_err\n";
    auto line = [&](const std::string& id, const EvalRow& r) {
        out << id << "," << r.ssim << ",";
        if (std::isinf(r.psnr))
            out << "inf";
        else
            out << r.psnr;
        out << "," << r.fs_ref << "," << r.dist_ref << "," << r.fs_tgt << "," << r.dist_tgt << ","
            << r.tex_err << "\n";
    };
    for (const auto& r : rep.rows) line(std::to_string(r.id), r);
    line("mean", rep.aggregate);
    return out.str();
}

// Generates against the target pose with per-pair seeds and scores against
// both the source ("ref") and the ground-truth target ("tgt").
inline EvalReport evaluate(const Models<float>& models, const Dataset& split, int64_t n_pairs,
                           uint64_t seed, const SampleOptions& base_opt = {}) {
    check(n_pairs <= split.size(), "evaluate: n_pairs exceeds the dataset");
    EvalReport rep;
    for (int64_t i = 0; i < n_pairs; ++i) {
        const PairSample& pair = split.pairs[static_cast<size_t>(i)];
        SampleOptions opt = base_opt;
        opt.seed = hash_u64(seed, static_cast<uint64_t>(i));
        auto cond = build_conditions(models, pair.source);
        Tensor<float> gen = ddim_sample(models, cond, pair.target.dpmap, opt);
        EvalRow row;
        row.id = i;
        row.ssim = ssim(gen, pair.target.image);
        row.psnr = psnr(gen, pair.target.image);
        auto [fs_r, dist_r] = face_similarity(models.face, gen, pair.target.face_box,
                                              pair.source.image, pair.source.face_box);
        auto [fs_t, dist_t] = face_similarity(models.face, gen, pair.target.face_box,
                                              pair.target.image, pair.target.face_box);
        row.fs_ref = fs_r;
        row.dist_ref = dist_r;
        row.fs_tgt = fs_t;
        row.dist_tgt = dist_t;
        auto src_atlas = warp_to_atlas(pair.source.image, pair.source.dpmap,
                                       models.atlas_layout());
        row.tex_err = texture_error(gen, pair.target.dpmap, src_atlas);
        rep.rows.push_back(row);
    }
    rep.finalize();
    return rep;
}

}  // namespace mcld
