#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcld/archive.hpp"
#include "mcld/ppm.hpp"
#include "mcld/rng.hpp"
#include "mcld/uvmap.hpp"

namespace mcld {

// 8 articulations: L/R shoulder, L/R elbow, L/R hip, L/R knee.
constexpr int kNumJoints = 8;
constexpr std::array<double, kNumJoints> kJointLimits = {1.6, 1.6, 2.2, 2.2, 1.2, 1.2, 2.2, 2.2};

struct PoseParams {
    std::vector<double> joint_angles = std::vector<double>(kNumJoints, 0.0);  // radians
    double root_x = 0.0;  // torso center, px
    double root_y = 0.0;
    double scale = 1.0;   // figure size relative to min(H, W)
};

struct PersonSpec {
    uint64_t identity_seed = 0;
    uint64_t texture_seed = 0;
    PoseParams pose;
    int canvas_h = 64;
    int canvas_w = 64;
};

struct Sample {
    Tensor<float> image;          // H×W×3 in [0,1]
    DensePoseMap dpmap;
    std::array<int64_t, 4> face_box = {0, 0, 0, 0};  // x0, y0, x1, y1 (half-open)
    PersonSpec spec;
    bool clipped = false;
};

struct RenderOptions {
    int parts = 10;
    int tile = 32;  // texel grid resolution the body patterns are defined on
};

// Part ids. Head must stay 1 (kHeadPart) and is drawn last so its raster
// equals its rectangle.
enum BodyPart : int {
    kPartHead = 1,
    kPartTorso = 2,
    kPartLUpperArm = 3,
    kPartRUpperArm = 4,
    kPartLForearm = 5,
    kPartRForearm = 6,
    kPartLThigh = 7,
    kPartRThigh = 8,
    kPartLShin = 9,
    kPartRShin = 10,
};

inline const std::array<const char*, 10>& part_names() {
    static const std::array<const char*, 10> names = {"head", "torso",   "l_upper_arm",
                                                      "r_upper_arm", "l_forearm", "r_forearm",
                                                      "l_thigh",     "r_thigh",   "l_shin",
                                                      "r_shin"};
    return names;
}

namespace detail {

// Oriented rectangle; u runs along dir over len, v across over thick.
struct PartRect {
    int id = 0;
    double px = 0, py = 0;  // pivot
    double dx = 0, dy = 1;  // unit direction
    double len = 1, thick = 1;

    bool locate(double x, double y, double& u, double& v) const {
        const double rx = x - px, ry = y - py;
        const double a = rx * dx + ry * dy;
        const double b = rx * (-dy) + ry * dx;
        if (a < 0 || a > len) return false;
        const double vv = b / thick + 0.5;
        if (vv < 0 || vv > 1) return false;
        u = a / len;
        v = vv;
        return true;
    }
};

inline std::array<double, 3> hash_color(uint64_t seed, uint64_t a, uint64_t b) {
    uint64_t s = hash_u64(seed, hash_u64(a, b));
    std::array<double, 3> c{};
    for (int i = 0; i < 3; ++i) {
        uint64_t r = splitmix64(s);
        c[i] = 0.08 + 0.84 * (static_cast<double>(r >> 11) * 0x1.0p-53);
    }
    return c;
}

// Figure skeleton in canvas coordinates. Head and torso stay axis-aligned;
// limb direction is (sin θ, cos θ) with θ measured from straight down.
inline std::vector<PartRect> build_parts(const PersonSpec& spec) {
    const double L = spec.pose.scale * static_cast<double>(std::min(spec.canvas_h, spec.canvas_w));
    const double rx = spec.pose.root_x, ry = spec.pose.root_y;
    const auto& j = spec.pose.joint_angles;
    auto dir = [](double th) { return std::pair<double, double>(std::sin(th), std::cos(th)); };

    std::vector<PartRect> parts;
    auto add = [&](int id, double px, double py, double th, double len, double thick) {
        auto [dx, dy] = dir(th);
        parts.push_back(PartRect{id, px, py, dx, dy, len, thick});
    };

    const double torso_len = 0.40 * L, torso_thick = 0.30 * L;
    const double head_s = 0.22 * L;
    const double torso_top = ry - torso_len / 2;
    // draw order: legs, arms, torso, head (head last; its raster wins)
    const double hip_off = 0.08 * L;
    const double hip_y = ry + torso_len / 2;
    add(kPartLThigh, rx - hip_off, hip_y, j[4], 0.28 * L, 0.10 * L);
    auto knee = [&](double hx, double th, double thigh_len) {
        auto [dx, dy] = dir(th);
        return std::pair<double, double>(hx + dx * thigh_len, hip_y + dy * thigh_len);
    };
    {
        auto [kx, ky] = knee(rx - hip_off, j[4], 0.28 * L);
        add(kPartLShin, kx, ky, j[4] + j[6], 0.26 * L, 0.08 * L);
    }
    add(kPartRThigh, rx + hip_off, hip_y, j[5], 0.28 * L, 0.10 * L);
    {
        auto [kx, ky] = knee(rx + hip_off, j[5], 0.28 * L);
        add(kPartRShin, kx, ky, j[5] + j[7], 0.26 * L, 0.08 * L);
    }
    const double sh_off = torso_thick / 2;
    const double sh_y = torso_top + 0.02 * L;
    add(kPartLUpperArm, rx - sh_off, sh_y, j[0], 0.24 * L, 0.08 * L);
    {
        auto [dx, dy] = dir(j[0]);
        add(kPartLForearm, rx - sh_off + dx * 0.24 * L, sh_y + dy * 0.24 * L, j[0] + j[2],
            0.22 * L, 0.07 * L);
    }
    add(kPartRUpperArm, rx + sh_off, sh_y, j[1], 0.24 * L, 0.08 * L);
    {
        auto [dx, dy] = dir(j[1]);
        add(kPartRForearm, rx + sh_off + dx * 0.24 * L, sh_y + dy * 0.24 * L, j[1] + j[3],
            0.22 * L, 0.07 * L);
    }
    add(kPartTorso, rx, torso_top, 0.0, torso_len, torso_thick);
    add(kPartHead, rx, torso_top - head_s, 0.0, head_s, head_s);
    return parts;
}

}  // namespace detail

// Pattern color of part k at texel (iu, iv) on a P×P tile. Patterns are
// piecewise constant per texel so warping through the atlas is lossless:
// head carries a 4×4 identity grid, torso a 6×6 checker, arms stripes
// along u, legs stripes along v. Head colors depend only on identity_seed,
// body colors only on texture_seed.
inline std::array<double, 3> pattern_color(uint64_t identity_seed, uint64_t texture_seed, int part,
                                           int64_t iu, int64_t iv, int tile) {
    const int64_t p = tile;
    if (part == kPartHead) {
        const int64_t gi = iu * 4 / p, gj = iv * 4 / p;
        return detail::hash_color(identity_seed, static_cast<uint64_t>(gi),
                                  static_cast<uint64_t>(gj));
    }
    auto c0 = detail::hash_color(texture_seed, static_cast<uint64_t>(part), 0);
    auto c1 = detail::hash_color(texture_seed, static_cast<uint64_t>(part), 1);
    int64_t cell;
    if (part == kPartTorso)
        cell = (iu * 6 / p + iv * 6 / p) & 1;
    else if (part == kPartLUpperArm || part == kPartRUpperArm || part == kPartLForearm ||
             part == kPartRForearm)
        cell = (iu * 5 / p) & 1;
    else
        cell = (iv * 5 / p) & 1;
    return cell ? c1 : c0;
}

inline void validate_spec(const PersonSpec& spec) {
    check(spec.canvas_h >= 32 && spec.canvas_w >= 32,
          "render: canvas too small (minimum 32×32)");
    check(spec.pose.scale > 0, "render: scale must be > 0");
    check(spec.pose.joint_angles.size() == kNumJoints,
          "render: expected " + std::to_string(kNumJoints) + " joint angles");
    for (int i = 0; i < kNumJoints; ++i)
        check(std::abs(spec.pose.joint_angles[i]) <= kJointLimits[i],
              "render: joint angle " + std::to_string(i) + " outside limits");
}

// Deterministic rasterization of the articulated figure. dpmap carries the
// exact (part, u, v) per pixel; colors are the pattern at the texel-
// quantized uv.
inline Sample render(const PersonSpec& spec, const RenderOptions& opt = {}) {
    validate_spec(spec);
    check(opt.parts == 10, "render: the renderer defines exactly 10 parts");
    const int64_t h = spec.canvas_h, w = spec.canvas_w;
    Sample s;
    s.spec = spec;
    s.image = zeros<float>({h, w, 3});
    s.dpmap.part = zeros<float>({h, w});
    s.dpmap.uv = zeros<float>({h, w, 2});
    s.dpmap.parts = opt.parts;

    const auto parts = detail::build_parts(spec);
    for (const auto& pr : parts) {
        // corner check for the clipped flag
        const double ex = std::abs(pr.dx) * pr.len + std::abs(pr.dy) * pr.thick / 2;
        const double ey = std::abs(pr.dy) * pr.len + std::abs(pr.dx) * pr.thick / 2;
        const double x0 = pr.px - ex, x1 = pr.px + ex, y0 = pr.py - ey, y1 = pr.py + ey;
        if (x0 < 0 || y0 < 0 || x1 > static_cast<double>(w) || y1 > static_cast<double>(h))
            s.clipped = true;
    }

    int64_t fb_x0 = w, fb_y0 = h, fb_x1 = 0, fb_y1 = 0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double cx = static_cast<double>(x) + 0.5;
            const double cy = static_cast<double>(y) + 0.5;
            int winner = 0;
            double wu = 0, wv = 0;
            for (const auto& pr : parts) {
                double u, v;
                if (pr.locate(cx, cy, u, v)) {
                    winner = pr.id;
                    wu = u;
                    wv = v;
                }
            }
            if (winner == 0) continue;
            s.dpmap.part.at(y, x) = static_cast<float>(winner);
            s.dpmap.uv.at(y, x, 0) = static_cast<float>(wu);
            s.dpmap.uv.at(y, x, 1) = static_cast<float>(wv);
            const int64_t iu = std::llround(wu * (opt.tile - 1));
            const int64_t iv = std::llround(wv * (opt.tile - 1));
            auto col = pattern_color(spec.identity_seed, spec.texture_seed, winner, iu, iv,
                                     opt.tile);
            for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = static_cast<float>(col[c]);
            if (winner == kPartHead) {
                fb_x0 = std::min(fb_x0, x);
                fb_y0 = std::min(fb_y0, y);
                fb_x1 = std::max(fb_x1, x + 1);
                fb_y1 = std::max(fb_y1, y + 1);
            }
        }
    if (fb_x1 > fb_x0)
        s.face_box = {fb_x0, fb_y0, fb_x1, fb_y1};
    else
        s.face_box = {0, 0, 0, 0};
    return s;
}

// Forward map of (part, u, v) back to canvas coordinates; inverse of the
// per-pixel locate(). Used by the dpmap-consistency checks.
inline std::pair<double, double> body_to_canvas(const PersonSpec& spec, int part, double u,
                                                double v) {
    const auto parts = detail::build_parts(spec);
    for (const auto& pr : parts)
        if (pr.id == part) {
            const double a = u * pr.len;
            const double b = (v - 0.5) * pr.thick;
            return {pr.px + pr.dx * a - pr.dy * b, pr.py + pr.dy * a + pr.dx * b};
        }
    throw std::runtime_error("body_to_canvas: unknown part");
}

// Distinct-texel coverage per part derived from the raster geometry alone
// (independent of the atlas warp implementation).
inline std::vector<double> part_coverage(const DensePoseMap& dpmap, int tile) {
    std::vector<std::set<std::pair<int64_t, int64_t>>> seen(
        static_cast<size_t>(dpmap.parts + 1));
    for (int64_t y = 0; y < dpmap.height(); ++y)
        for (int64_t x = 0; x < dpmap.width(); ++x) {
            const int k = dpmap.part_at(y, x);
            if (k == 0) continue;
            const int64_t iu = std::llround(dpmap.uv.at(y, x, 0) * (tile - 1));
            const int64_t iv = std::llround(dpmap.uv.at(y, x, 1) * (tile - 1));
            seen[static_cast<size_t>(k)].insert({iu, iv});
        }
    std::vector<double> cov(static_cast<size_t>(dpmap.parts + 1), 0.0);
    for (int k = 1; k <= dpmap.parts; ++k)
        cov[static_cast<size_t>(k)] = static_cast<double>(seen[static_cast<size_t>(k)].size()) /
                                      static_cast<double>(tile * tile);
    return cov;
}

struct PairOptions {
    int canvas = 64;
    int parts = 10;
    int tile = 32;
};

inline PoseParams random_pose(Rng& rng, int canvas_h, int canvas_w) {
    PoseParams p;
    p.joint_angles.resize(kNumJoints);
    for (int i = 0; i < kNumJoints; ++i)
        p.joint_angles[i] = rng.uniform(-0.8 * kJointLimits[i], 0.8 * kJointLimits[i]);
    p.root_x = (0.5 + rng.uniform(-0.03, 0.03)) * canvas_w;
    p.root_y = (0.42 + rng.uniform(-0.03, 0.03)) * canvas_h;
    p.scale = rng.uniform(0.52, 0.66);
    return p;
}

// Source and target share identity and texture seeds, differ in pose.
inline std::pair<Sample, Sample> sample_pair(uint64_t rng_seed, const PairOptions& opt = {}) {
    Rng rng(hash_u64(rng_seed, 0x70616972ull));
    PersonSpec spec;
    spec.identity_seed = rng.u64();
    spec.texture_seed = rng.u64();
    spec.canvas_h = opt.canvas;
    spec.canvas_w = opt.canvas;
    RenderOptions ro{opt.parts, opt.tile};
    PersonSpec src = spec, tgt = spec;
    src.pose = random_pose(rng, opt.canvas, opt.canvas);
    tgt.pose = random_pose(rng, opt.canvas, opt.canvas);
    return {render(src, ro), render(tgt, ro)};
}

// ---------------------------------------------------------------------------
// Dataset files and manifest
// ---------------------------------------------------------------------------

struct DatasetConfig {
    uint64_t base_seed = 0;
    int canvas = 64;
    int parts = 10;
    int tile = 32;
};

struct EntryFiles {
    std::string image;
    std::string dpmap;
};

struct ManifestEntry {
    int64_t id = 0;
    EntryFiles source_files, target_files;
    PersonSpec source_spec, target_spec;
    std::array<int64_t, 4> source_face_box{}, target_face_box{};
};

struct Manifest {
    int version = 1;
    uint64_t base_seed = 0;
    int64_t count = 0;
    int canvas = 64, parts = 10, tile = 32;
    std::vector<ManifestEntry> entries;
};

namespace detail {

inline nlohmann::json spec_to_json(const PersonSpec& s) {
    return nlohmann::json{{"identity_seed", s.identity_seed},
                          {"texture_seed", s.texture_seed},
                          {"pose",
                           {{"joint_angles", s.pose.joint_angles},
                            {"root_x", s.pose.root_x},
                            {"root_y", s.pose.root_y},
                            {"scale", s.pose.scale}}},
                          {"canvas_h", s.canvas_h},
                          {"canvas_w", s.canvas_w}};
}

inline PersonSpec spec_from_json(const nlohmann::json& j) {
    PersonSpec s;
    s.identity_seed = j.at("identity_seed").get<uint64_t>();
    s.texture_seed = j.at("texture_seed").get<uint64_t>();
    s.pose.joint_angles = j.at("pose").at("joint_angles").get<std::vector<double>>();
    s.pose.root_x = j.at("pose").at("root_x").get<double>();
    s.pose.root_y = j.at("pose").at("root_y").get<double>();
    s.pose.scale = j.at("pose").at("scale").get<double>();
    s.canvas_h = j.at("canvas_h").get<int>();
    s.canvas_w = j.at("canvas_w").get<int>();
    return s;
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        entries.push_back(
            {{"id", e.id},
             {"source_files", {{"image", e.source_files.image}, {"dpmap", e.source_files.dpmap}}},
             {"target_files", {{"image", e.target_files.image}, {"dpmap", e.target_files.dpmap}}},
             {"specs",
              {{"source", detail::spec_to_json(e.source_spec)},
               {"target", detail::spec_to_json(e.target_spec)},
               {"source_face_box", e.source_face_box},
               {"target_face_box", e.target_face_box}}}});
    }
    return nlohmann::json{{"version", m.version}, {"base_seed", m.base_seed},
                          {"count", m.count},    {"canvas", m.canvas},
                          {"parts", m.parts},    {"tile", m.tile},
                          {"entries", entries}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    Manifest m;
    m.version = j.at("version").get<int>();
    check(m.version == 1, "manifest: unsupported version");
    m.base_seed = j.at("base_seed").get<uint64_t>();
    m.count = j.at("count").get<int64_t>();
    m.canvas = j.at("canvas").get<int>();
    m.parts = j.at("parts").get<int>();
    m.tile = j.at("tile").get<int>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.id = je.at("id").get<int64_t>();
        e.source_files = {je.at("source_files").at("image").get<std::string>(),
                          je.at("source_files").at("dpmap").get<std::string>()};
        e.target_files = {je.at("target_files").at("image").get<std::string>(),
                          je.at("target_files").at("dpmap").get<std::string>()};
        e.source_spec = detail::spec_from_json(je.at("specs").at("source"));
        e.target_spec = detail::spec_from_json(je.at("specs").at("target"));
        auto sb = je.at("specs").at("source_face_box").get<std::vector<int64_t>>();
        auto tb = je.at("specs").at("target_face_box").get<std::vector<int64_t>>();
        check(sb.size() == 4 && tb.size() == 4, "manifest: bad face box");
        std::copy(sb.begin(), sb.end(), e.source_face_box.begin());
        std::copy(tb.begin(), tb.end(), e.target_face_box.begin());
        m.entries.push_back(std::move(e));
    }
    check(static_cast<int64_t>(m.entries.size()) == m.count, "manifest: entry count mismatch");
    return m;
}

inline void write_dpmap(const std::string& path, const DensePoseMap& dp) {
    TensorArchive a;
    a.add("part", dp.part);
    a.add("uv", dp.uv);
    a.metadata = nlohmann::json{{"parts", dp.parts}}.dump();
    write_archive(path, a);
}

inline DensePoseMap read_dpmap(const std::string& path) {
    TensorArchive a = read_archive(path);
    DensePoseMap dp;
    dp.part = a.get<float>("part");
    dp.uv = a.get<float>("uv");
    dp.parts = nlohmann::json::parse(a.metadata).at("parts").get<int>();
    return dp;
}

// Writes n pairs (images, dpmaps, manifest). Entry i is reproducible from
// base_seed + i alone.
inline Manifest make_dataset(const DatasetConfig& cfg, int64_t n, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    check(!ec, "make_dataset: cannot create output directory: " + out_dir);
    Manifest m;
    m.base_seed = cfg.base_seed;
    m.count = n;
    m.canvas = cfg.canvas;
    m.parts = cfg.parts;
    m.tile = cfg.tile;
    PairOptions po{cfg.canvas, cfg.parts, cfg.tile};
    for (int64_t i = 0; i < n; ++i) {
        auto [src, tgt] = sample_pair(cfg.base_seed + static_cast<uint64_t>(i), po);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "%06lld", static_cast<long long>(i));
        ManifestEntry e;
        e.id = i;
        e.source_files = {std::string(stem) + "_source.ppm", std::string(stem) + "_source.dpmap"};
        e.target_files = {std::string(stem) + "_target.ppm", std::string(stem) + "_target.dpmap"};
        write_ppm(out_dir + "/" + e.source_files.image, src.image);
        write_dpmap(out_dir + "/" + e.source_files.dpmap, src.dpmap);
        write_ppm(out_dir + "/" + e.target_files.image, tgt.image);
        write_dpmap(out_dir + "/" + e.target_files.dpmap, tgt.dpmap);
        e.source_spec = src.spec;
        e.target_spec = tgt.spec;
        e.source_face_box = src.face_box;
        e.target_face_box = tgt.face_box;
        m.entries.push_back(std::move(e));
    }
    std::ofstream f(out_dir + "/manifest.json");
    check(static_cast<bool>(f), "make_dataset: cannot write manifest: " + out_dir);
    f << manifest_to_json(m).dump(2) << "\n";
    check(static_cast<bool>(f), "make_dataset: manifest write failed: " + out_dir);
    return m;
}

struct PairSample {
    Sample source, target;
};

struct Dataset {
    Manifest manifest;
    std::vector<PairSample> pairs;

    int64_t size() const { return static_cast<int64_t>(pairs.size()); }
};

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    check(static_cast<bool>(f), "load_dataset: cannot open manifest: " + dir + "/manifest.json");
    nlohmann::json j;
    f >> j;
    Dataset ds;
    ds.manifest = manifest_from_json(j);
    for (const auto& e : ds.manifest.entries) {
        PairSample p;
        p.source.image = read_ppm(dir + "/" + e.source_files.image);
        p.source.dpmap = read_dpmap(dir + "/" + e.source_files.dpmap);
        p.source.face_box = e.source_face_box;
        p.source.spec = e.source_spec;
        p.target.image = read_ppm(dir + "/" + e.target_files.image);
        p.target.dpmap = read_dpmap(dir + "/" + e.target_files.dpmap);
        p.target.face_box = e.target_face_box;
        p.target.spec = e.target_spec;
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

}  // namespace mcld
