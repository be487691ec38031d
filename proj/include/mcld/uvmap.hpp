#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "mcld/tensor.hpp"

namespace mcld {

// Per-pixel body part ids (0 = background) with intra-part UV coordinates.
struct DensePoseMap {
    Tensor<float> part;  // H×W, integer-valued part ids in {0..K}
    Tensor<float> uv;    // H×W×2 in [0,1]
    int parts = 10;      // K

    int64_t height() const { return part.dim(0); }
    int64_t width() const { return part.dim(1); }
    int part_at(int64_t y, int64_t x) const { return static_cast<int>(part.at(y, x)); }
};

// Tile-grid layout: the smallest grid with rows·cols >= K, cols = ceil(sqrt(K)).
struct AtlasLayout {
    int parts = 10;  // K
    int tile = 32;   // P, texels per tile side

    int cols() const { return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(parts)))); }
    int rows() const { return (parts + cols() - 1) / cols(); }
    int64_t width_px() const { return static_cast<int64_t>(cols()) * tile; }
    int64_t height_px() const { return static_cast<int64_t>(rows()) * tile; }

    bool operator==(const AtlasLayout& o) const { return parts == o.parts && tile == o.tile; }
};

// Pose-invariant per-part texture grid with validity mask. Texels never
// written stay zero with valid=false.
struct TextureAtlas {
    Tensor<float> texels;    // (rows·P)×(cols·P)×3
    Tensor<uint8_t> valid;   // (rows·P)×(cols·P)
    AtlasLayout layout;

    static TextureAtlas empty(const AtlasLayout& lay) {
        TextureAtlas a;
        a.layout = lay;
        a.texels = zeros<float>({lay.height_px(), lay.width_px(), 3});
        a.valid = zeros<uint8_t>({lay.height_px(), lay.width_px()});
        return a;
    }
};

// Texel coordinates (x=column, y=row) of (part, u, v) in the tile grid:
// x = tile_x0 + round(u·(P−1)), y = tile_y0 + round(v·(P−1)).
inline std::pair<int64_t, int64_t> atlas_coords(int part, double u, double v,
                                                const AtlasLayout& lay) {
    check(part >= 1 && part <= lay.parts,
          "atlas_coords: part id out of range (background has no texel)");
    const int c = lay.cols();
    const int64_t tx0 = static_cast<int64_t>((part - 1) % c) * lay.tile;
    const int64_t ty0 = static_cast<int64_t>((part - 1) / c) * lay.tile;
    int64_t dx = std::llround(u * (lay.tile - 1));
    int64_t dy = std::llround(v * (lay.tile - 1));
    dx = std::min<int64_t>(std::max<int64_t>(dx, 0), lay.tile - 1);
    dy = std::min<int64_t>(std::max<int64_t>(dy, 0), lay.tile - 1);
    return {tx0 + dx, ty0 + dy};
}

struct WarpStats {
    int64_t writes = 0;      // foreground pixels scattered
    int64_t collisions = 0;  // writes that landed on an already-written texel

    double collision_rate() const {
        return writes == 0 ? 0.0 : static_cast<double>(collisions) / static_cast<double>(writes);
    }
};

// Scatter image colors into atlas texels. Collisions resolve by
// last-writer-wins in row-major pixel order.
inline TextureAtlas warp_to_atlas(const Tensor<float>& image, const DensePoseMap& dpmap,
                                  const AtlasLayout& lay, WarpStats* stats = nullptr) {
    check(image.ndim() == 3 && image.dim(2) == 3, "warp_to_atlas: image must be H×W×3");
    check(image.dim(0) == dpmap.height() && image.dim(1) == dpmap.width(),
          "warp_to_atlas: image/dpmap shape mismatch");
    check(dpmap.parts == lay.parts, "warp_to_atlas: part count mismatch");
    TextureAtlas atlas = TextureAtlas::empty(lay);
    WarpStats st;
    for (int64_t y = 0; y < dpmap.height(); ++y)
        for (int64_t x = 0; x < dpmap.width(); ++x) {
            const int k = dpmap.part_at(y, x);
            if (k == 0) continue;
            auto [tx, ty] = atlas_coords(k, dpmap.uv.at(y, x, 0), dpmap.uv.at(y, x, 1), lay);
            ++st.writes;
            if (atlas.valid.at(ty, tx)) ++st.collisions;
            for (int c = 0; c < 3; ++c) atlas.texels.at(ty, tx, c) = image.at(y, x, c);
            atlas.valid.at(ty, tx) = 1;
        }
    if (stats) *stats = st;
    return atlas;
}

// Gather texel colors back to image pixels; covered marks pixels whose
// texel was valid. Background pixels get 0 and covered=false.
inline std::pair<Tensor<float>, Tensor<uint8_t>> warp_from_atlas(const TextureAtlas& atlas,
                                                                 const DensePoseMap& dpmap) {
    check(dpmap.parts == atlas.layout.parts, "warp_from_atlas: part count mismatch");
    const int64_t h = dpmap.height(), w = dpmap.width();
    Tensor<float> image({h, w, 3});
    Tensor<uint8_t> covered({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int k = dpmap.part_at(y, x);
            if (k == 0) continue;
            auto [tx, ty] = atlas_coords(k, dpmap.uv.at(y, x, 0), dpmap.uv.at(y, x, 1),
                                         atlas.layout);
            if (!atlas.valid.at(ty, tx)) continue;
            for (int c = 0; c < 3; ++c) image.at(y, x, c) = atlas.texels.at(ty, tx, c);
            covered.at(y, x) = 1;
        }
    return {std::move(image), std::move(covered)};
}

// Copy the tiles (texels and validity) of the listed parts from src into dst.
inline TextureAtlas swap_region(const TextureAtlas& dst, const TextureAtlas& src,
                                const std::set<int>& parts) {
    check(dst.layout == src.layout, "swap_region: layout mismatch");
    for (int k : parts)
        check(k >= 1 && k <= dst.layout.parts, "swap_region: unknown part id " + std::to_string(k));
    TextureAtlas out = dst;
    const int c = dst.layout.cols();
    const int p = dst.layout.tile;
    for (int k : parts) {
        const int64_t tx0 = static_cast<int64_t>((k - 1) % c) * p;
        const int64_t ty0 = static_cast<int64_t>((k - 1) / c) * p;
        for (int64_t y = ty0; y < ty0 + p; ++y)
            for (int64_t x = tx0; x < tx0 + p; ++x) {
                for (int ch = 0; ch < 3; ++ch) out.texels.at(y, x, ch) = src.texels.at(y, x, ch);
                out.valid.at(y, x) = src.valid.at(y, x);
            }
    }
    return out;
}

constexpr int kHeadPart = 1;

// Binary head mask at latent resolution: max-pooled from the pixel-level
// head raster (any head pixel in a cell sets the cell).
inline Tensor<float> face_mask(const DensePoseMap& dpmap, int64_t lh, int64_t lw) {
    check(lh > 0 && lw > 0 && dpmap.height() % lh == 0 && dpmap.width() % lw == 0,
          "face_mask: latent dims must divide pixel dims");
    const int64_t fy = dpmap.height() / lh, fx = dpmap.width() / lw;
    Tensor<float> m({lh, lw});
    for (int64_t y = 0; y < dpmap.height(); ++y)
        for (int64_t x = 0; x < dpmap.width(); ++x)
            if (dpmap.part_at(y, x) == kHeadPart) m.at(y / fy, x / fx) = 1.0f;
    return m;
}

// Pixel-level head mask (part == head).
inline Tensor<float> face_mask_pixels(const DensePoseMap& dpmap) {
    Tensor<float> m({dpmap.height(), dpmap.width()});
    for (int64_t y = 0; y < dpmap.height(); ++y)
        for (int64_t x = 0; x < dpmap.width(); ++x)
            if (dpmap.part_at(y, x) == kHeadPart) m.at(y, x) = 1.0f;
    return m;
}

}  // namespace mcld
