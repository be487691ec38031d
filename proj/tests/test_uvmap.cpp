#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "mcld/synthdata.hpp"
#include "mcld/uvmap.hpp"

using namespace mcld;

TEST_CASE("atlas_coords corners and formula cross-check") {
    AtlasLayout lay{10, 32};
    CHECK(lay.cols() == 4);
    CHECK(lay.rows() == 3);
    auto [x0, y0] = atlas_coords(1, 0.0, 0.0, lay);
    CHECK(x0 == 0);
    CHECK(y0 == 0);
    auto [x1, y1] = atlas_coords(1, 1.0, 1.0, lay);
    CHECK(x1 == 31);
    CHECK(y1 == 31);
    // independent evaluation of the formula for a 5-column layout
    AtlasLayout lay5{25, 32};
    REQUIRE(lay5.cols() == 5);
    auto [x, y] = atlas_coords(8, 0.5, 0.25, lay5);
    const int64_t ex = ((8 - 1) % 5) * 32 + std::llround(0.5 * 31);
    const int64_t ey = ((8 - 1) / 5) * 32 + std::llround(0.25 * 31);
    CHECK(x == ex);
    CHECK(y == ey);
    CHECK_THROWS(atlas_coords(0, 0.5, 0.5, lay));   // background has no texel
    CHECK_THROWS(atlas_coords(11, 0.5, 0.5, lay));  // beyond K
}

TEST_CASE("atlas_coords stays inside the part tile") {
    AtlasLayout lay{10, 16};
    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        int part = static_cast<int>(rng.uniform_int(1, 11));
        auto [x, y] = atlas_coords(part, rng.uniform(), rng.uniform(), lay);
        const int64_t tx0 = ((part - 1) % lay.cols()) * lay.tile;
        const int64_t ty0 = ((part - 1) / lay.cols()) * lay.tile;
        CHECK(x >= tx0);
        CHECK(x < tx0 + lay.tile);
        CHECK(y >= ty0);
        CHECK(y < ty0 + lay.tile);
    }
}

TEST_CASE("warp_to_atlas: all-background map yields no valid texels") {
    DensePoseMap dp;
    dp.part = zeros<float>({8, 8});
    dp.uv = zeros<float>({8, 8, 2});
    dp.parts = 10;
    auto atlas = warp_to_atlas(zeros<float>({8, 8, 3}), dp, AtlasLayout{10, 8});
    for (int64_t i = 0; i < atlas.valid.numel(); ++i) CHECK(atlas.valid.data[i] == 0);
    for (int64_t i = 0; i < atlas.texels.numel(); ++i) CHECK(atlas.texels.data[i] == 0.0f);
}

TEST_CASE("warp_to_atlas: single foreground pixel writes exactly one texel") {
    DensePoseMap dp;
    dp.part = zeros<float>({8, 8});
    dp.uv = zeros<float>({8, 8, 2});
    dp.parts = 10;
    dp.part.at(3, 4) = 5;
    dp.uv.at(3, 4, 0) = 0.5f;
    dp.uv.at(3, 4, 1) = 0.75f;
    Tensor<float> img({8, 8, 3});
    img.at(3, 4, 0) = 0.1f;
    img.at(3, 4, 1) = 0.2f;
    img.at(3, 4, 2) = 0.3f;
    AtlasLayout lay{10, 8};
    WarpStats st;
    auto atlas = warp_to_atlas(img, dp, lay, &st);
    CHECK(st.writes == 1);
    CHECK(st.collisions == 0);
    int64_t count = 0;
    for (int64_t i = 0; i < atlas.valid.numel(); ++i) count += atlas.valid.data[i];
    CHECK(count == 1);
    auto [tx, ty] = atlas_coords(5, 0.5, 0.75, lay);
    CHECK(atlas.valid.at(ty, tx) == 1);
    CHECK(atlas.texels.at(ty, tx, 0) == 0.1f);
    CHECK(atlas.texels.at(ty, tx, 2) == 0.3f);
}

TEST_CASE("valid texel fraction matches the raster-derived coverage") {
    auto [src, tgt] = sample_pair(123);
    AtlasLayout lay{10, 32};
    auto atlas = warp_to_atlas(src.image, src.dpmap, lay);
    auto cov = part_coverage(src.dpmap, lay.tile);
    for (int k = 1; k <= 10; ++k) {
        const int64_t tx0 = ((k - 1) % lay.cols()) * lay.tile;
        const int64_t ty0 = ((k - 1) / lay.cols()) * lay.tile;
        int64_t valid = 0;
        for (int64_t y = ty0; y < ty0 + lay.tile; ++y)
            for (int64_t x = tx0; x < tx0 + lay.tile; ++x) valid += atlas.valid.at(y, x);
        double frac = static_cast<double>(valid) / (32.0 * 32.0);
        CHECK(std::abs(frac - cov[static_cast<size_t>(k)]) <= 0.02);
    }
}

TEST_CASE("round trip: gather inverts scatter on uniquely owned texels") {
    auto [src, tgt] = sample_pair(7);
    AtlasLayout lay{10, 32};
    auto atlas = warp_to_atlas(src.image, src.dpmap, lay);
    auto [back, covered] = warp_from_atlas(atlas, src.dpmap);
    // ownership counted independently of the warp implementation
    std::map<std::pair<int64_t, int64_t>, int> owners;
    for (int64_t y = 0; y < src.dpmap.height(); ++y)
        for (int64_t x = 0; x < src.dpmap.width(); ++x) {
            int k = src.dpmap.part_at(y, x);
            if (k == 0) continue;
            owners[atlas_coords(k, src.dpmap.uv.at(y, x, 0), src.dpmap.uv.at(y, x, 1), lay)]++;
        }
    for (int64_t y = 0; y < src.dpmap.height(); ++y)
        for (int64_t x = 0; x < src.dpmap.width(); ++x) {
            int k = src.dpmap.part_at(y, x);
            if (k == 0) {
                CHECK(covered.at(y, x) == 0);
                continue;
            }
            CHECK(covered.at(y, x) == 1);
            auto key = atlas_coords(k, src.dpmap.uv.at(y, x, 0), src.dpmap.uv.at(y, x, 1), lay);
            if (owners[key] == 1)
                for (int c = 0; c < 3; ++c) CHECK(back.at(y, x, c) == src.image.at(y, x, c));
        }
}

TEST_CASE("empty atlas gathers nothing") {
    auto [src, tgt] = sample_pair(8);
    auto atlas = TextureAtlas::empty(AtlasLayout{10, 32});
    auto [img, covered] = warp_from_atlas(atlas, src.dpmap);
    for (int64_t i = 0; i < covered.numel(); ++i) CHECK(covered.data[i] == 0);
}

TEST_CASE("cross-pose warp reproduces the target foreground") {
    double total_err = 0;
    int64_t total_px = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto [src, tgt] = sample_pair(seed);
        AtlasLayout lay{10, 32};
        auto atlas = warp_to_atlas(src.image, src.dpmap, lay);
        auto [img, covered] = warp_from_atlas(atlas, tgt.dpmap);
        for (int64_t y = 0; y < tgt.dpmap.height(); ++y)
            for (int64_t x = 0; x < tgt.dpmap.width(); ++x) {
                if (!covered.at(y, x)) continue;
                for (int c = 0; c < 3; ++c)
                    total_err += std::abs(img.at(y, x, c) - tgt.image.at(y, x, c));
                total_px += 3;
            }
    }
    REQUIRE(total_px > 0);
    CHECK(total_err / static_cast<double>(total_px) <= 0.05);
}

TEST_CASE("swap_region: empty set, full set, tile-bound diff, idempotence") {
    auto [a, b] = sample_pair(40);
    AtlasLayout lay{10, 32};
    auto A = warp_to_atlas(a.image, a.dpmap, lay);
    auto [c, d] = sample_pair(41);
    auto B = warp_to_atlas(c.image, c.dpmap, lay);

    auto none = swap_region(A, B, {});
    CHECK(bit_equal(none.texels, A.texels));
    CHECK(bit_equal(none.valid, A.valid));

    std::set<int> all;
    for (int k = 1; k <= 10; ++k) all.insert(k);
    auto everything = swap_region(A, B, all);
    CHECK(bit_equal(everything.texels, B.texels));
    CHECK(bit_equal(everything.valid, B.valid));

    auto torso = swap_region(A, B, {kPartTorso});
    const int64_t tx0 = ((kPartTorso - 1) % lay.cols()) * lay.tile;
    const int64_t ty0 = ((kPartTorso - 1) / lay.cols()) * lay.tile;
    for (int64_t y = 0; y < A.texels.dim(0); ++y)
        for (int64_t x = 0; x < A.texels.dim(1); ++x) {
            bool in_tile = x >= tx0 && x < tx0 + lay.tile && y >= ty0 && y < ty0 + lay.tile;
            for (int ch = 0; ch < 3; ++ch) {
                if (in_tile)
                    CHECK(torso.texels.at(y, x, ch) == B.texels.at(y, x, ch));
                else
                    CHECK(torso.texels.at(y, x, ch) == A.texels.at(y, x, ch));
            }
        }

    auto twice = swap_region(torso, B, {kPartTorso});
    CHECK(bit_equal(twice.texels, torso.texels));
    CHECK(bit_equal(twice.valid, torso.valid));

    CHECK_THROWS(swap_region(A, B, {0}));
    CHECK_THROWS(swap_region(A, B, {11}));
}

TEST_CASE("face_mask trivial cases and raster equality") {
    DensePoseMap dp;
    dp.part = zeros<float>({8, 8});
    dp.uv = zeros<float>({8, 8, 2});
    dp.parts = 10;
    auto m0 = face_mask(dp, 4, 4);
    for (int64_t i = 0; i < m0.numel(); ++i) CHECK(m0.data[i] == 0.0f);
    dp.part.data.setConstant(static_cast<float>(kHeadPart));
    auto m1 = face_mask(dp, 4, 4);
    for (int64_t i = 0; i < m1.numel(); ++i) CHECK(m1.data[i] == 1.0f);

    auto [src, tgt] = sample_pair(10);
    auto pix = face_mask_pixels(src.dpmap);
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x)
            CHECK((pix.at(y, x) == 1.0f) == (src.dpmap.part_at(y, x) == kHeadPart));
    // monotone under downsampling: pixel mask implies the covering latent cell
    auto lat = face_mask(src.dpmap, 16, 16);
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x)
            if (pix.at(y, x) == 1.0f) CHECK(lat.at(y / 4, x / 4) == 1.0f);
    CHECK_THROWS(face_mask(src.dpmap, 7, 7));
}

TEST_CASE("collision diagnostics on rendered samples stay low at default tile") {
    int64_t writes = 0, collisions = 0;
    for (uint64_t seed = 100; seed < 120; ++seed) {
        auto [src, tgt] = sample_pair(seed);
        WarpStats st;
        warp_to_atlas(src.image, src.dpmap, AtlasLayout{10, 32}, &st);
        writes += st.writes;
        collisions += st.collisions;
    }
    REQUIRE(writes > 0);
    CHECK(static_cast<double>(collisions) / static_cast<double>(writes) < 0.05);
}
