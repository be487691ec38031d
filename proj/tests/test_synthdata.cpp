#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mcld/rng.hpp"
#include "mcld/synthdata.hpp"

using namespace mcld;
namespace fs = std::filesystem;

namespace {
PersonSpec basic_spec(uint64_t id_seed = 11, uint64_t tex_seed = 22) {
    PersonSpec s;
    s.identity_seed = id_seed;
    s.texture_seed = tex_seed;
    s.canvas_h = 64;
    s.canvas_w = 64;
    s.pose.root_x = 32;
    s.pose.root_y = 27;
    s.pose.scale = 0.6;
    return s;
}
}  // namespace

TEST_CASE("render is deterministic") {
    auto a = render(basic_spec());
    auto b = render(basic_spec());
    CHECK(bit_equal(a.image, b.image));
    CHECK(bit_equal(a.dpmap.part, b.dpmap.part));
    CHECK(bit_equal(a.dpmap.uv, b.dpmap.uv));
    CHECK(a.face_box == b.face_box);
}

TEST_CASE("invalid specs are rejected") {
    auto s = basic_spec();
    s.pose.scale = 0.0;
    CHECK_THROWS(render(s));
    s = basic_spec();
    s.canvas_h = 16;
    CHECK_THROWS(render(s));  // canvas too small
    s = basic_spec();
    s.pose.joint_angles[0] = 99.0;
    CHECK_THROWS(render(s));  // joint limit
    s = basic_spec();
    s.pose.joint_angles.resize(3);
    CHECK_THROWS(render(s));
}

TEST_CASE("figure pixels carry nonzero part ids; head pixels sit inside face_box") {
    auto s = render(basic_spec());
    int64_t fg = 0, head = 0;
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x) {
            int k = s.dpmap.part_at(y, x);
            bool painted = s.image.at(y, x, 0) > 0 || s.image.at(y, x, 1) > 0 ||
                           s.image.at(y, x, 2) > 0;
            CHECK((k > 0) == painted);
            if (k > 0) ++fg;
            if (k == kHeadPart) {
                ++head;
                CHECK(x >= s.face_box[0]);
                CHECK(y >= s.face_box[1]);
                CHECK(x < s.face_box[2]);
                CHECK(y < s.face_box[3]);
            }
        }
    CHECK(fg > 200);
    CHECK(head > 20);
    CHECK(s.face_box[0] >= 0);
    CHECK(s.face_box[2] <= 64);
    CHECK_FALSE(s.clipped);
}

TEST_CASE("identity locality: identity seed touches only face_box pixels") {
    auto a = render(basic_spec(1, 5));
    auto b = render(basic_spec(2, 5));
    REQUIRE(a.face_box == b.face_box);
    bool changed_inside = false;
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x) {
            bool diff = false;
            for (int c = 0; c < 3; ++c)
                if (a.image.at(y, x, c) != b.image.at(y, x, c)) diff = true;
            bool inside = x >= a.face_box[0] && x < a.face_box[2] && y >= a.face_box[1] &&
                          y < a.face_box[3];
            if (diff) {
                CHECK(inside);
                changed_inside = true;
            }
        }
    CHECK(changed_inside);
}

TEST_CASE("texture locality: texture seed changes nothing inside face_box") {
    auto a = render(basic_spec(1, 5));
    auto b = render(basic_spec(1, 6));
    REQUIRE(a.face_box == b.face_box);
    bool changed_outside = false;
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x) {
            bool inside = x >= a.face_box[0] && x < a.face_box[2] && y >= a.face_box[1] &&
                          y < a.face_box[3];
            bool diff = false;
            for (int c = 0; c < 3; ++c)
                if (a.image.at(y, x, c) != b.image.at(y, x, c)) diff = true;
            if (inside) CHECK_FALSE(diff);
            if (diff) changed_outside = true;
        }
    CHECK(changed_outside);
}

TEST_CASE("dpmap consistency: analytic inverse returns the pixel center within 0.5 px") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        auto [src, tgt] = sample_pair(rng.u64());
        for (const Sample* s : {&src, &tgt})
            for (int64_t y = 0; y < s->dpmap.height(); ++y)
                for (int64_t x = 0; x < s->dpmap.width(); ++x) {
                    int k = s->dpmap.part_at(y, x);
                    if (k == 0) continue;
                    auto [px, py] = body_to_canvas(s->spec, k, s->dpmap.uv.at(y, x, 0),
                                                   s->dpmap.uv.at(y, x, 1));
                    CHECK(std::abs(px - (x + 0.5)) < 0.5);
                    CHECK(std::abs(py - (y + 0.5)) < 0.5);
                }
    }
}

TEST_CASE("sample_pair shares seeds and differs in pose") {
    auto [s1, t1] = sample_pair(1);
    auto [s2, t2] = sample_pair(1);
    CHECK(bit_equal(s1.image, s2.image));
    CHECK(bit_equal(t1.image, t2.image));
    CHECK(s1.spec.identity_seed == t1.spec.identity_seed);
    CHECK(s1.spec.texture_seed == t1.spec.texture_seed);
    double diff = 0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        auto [s, t] = sample_pair(static_cast<uint64_t>(i), PairOptions{32, 10, 32});
        for (int j = 0; j < kNumJoints; ++j)
            diff += std::abs(s.spec.pose.joint_angles[j] - t.spec.pose.joint_angles[j]);
    }
    CHECK(diff / n > 0.0);
}

TEST_CASE("pattern colors quantize exactly onto atlas texels") {
    // neighbouring pixels with the same texel index must render identically
    auto s = render(basic_spec());
    const int tile = 32;
    for (int64_t y = 0; y + 1 < 64; ++y)
        for (int64_t x = 0; x + 1 < 64; ++x) {
            if (s.dpmap.part_at(y, x) == 0 || s.dpmap.part_at(y, x) != s.dpmap.part_at(y, x + 1))
                continue;
            auto iu = [&](int64_t yy, int64_t xx) {
                return std::llround(s.dpmap.uv.at(yy, xx, 0) * (tile - 1));
            };
            auto iv = [&](int64_t yy, int64_t xx) {
                return std::llround(s.dpmap.uv.at(yy, xx, 1) * (tile - 1));
            };
            if (iu(y, x) == iu(y, x + 1) && iv(y, x) == iv(y, x + 1))
                for (int c = 0; c < 3; ++c)
                    CHECK(s.image.at(y, x, c) == s.image.at(y, x + 1, c));
        }
}

TEST_CASE("make_dataset: n=0 writes an empty manifest and no sample files") {
    auto dir = (fs::temp_directory_path() / "mcld_ds_empty").string();
    fs::remove_all(dir);
    DatasetConfig cfg;
    cfg.base_seed = 9;
    cfg.canvas = 32;
    auto m = make_dataset(cfg, 0, dir);
    CHECK(m.count == 0);
    CHECK(m.entries.empty());
    int files = 0;
    for (auto& e : fs::directory_iterator(dir)) {
        (void)e;
        ++files;
    }
    CHECK(files == 1);  // manifest only
    auto ds = load_dataset(dir);
    CHECK(ds.size() == 0);
}

TEST_CASE("make_dataset determinism: identical file hashes across runs") {
    DatasetConfig cfg;
    cfg.base_seed = 77;
    cfg.canvas = 32;
    auto dir1 = (fs::temp_directory_path() / "mcld_ds_a").string();
    auto dir2 = (fs::temp_directory_path() / "mcld_ds_b").string();
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    make_dataset(cfg, 4, dir1);
    make_dataset(cfg, 4, dir2);
    for (auto& e : fs::directory_iterator(dir1)) {
        auto name = e.path().filename().string();
        std::ifstream f1(e.path(), std::ios::binary);
        std::ifstream f2(fs::path(dir2) / name, std::ios::binary);
        std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(fnv1a64(b1.data(), b1.size()) == fnv1a64(b2.data(), b2.size()));
    }
}

TEST_CASE("dataset round trip preserves manifest count and specs") {
    DatasetConfig cfg;
    cfg.base_seed = 5;
    cfg.canvas = 32;
    auto dir = (fs::temp_directory_path() / "mcld_ds_rt").string();
    fs::remove_all(dir);
    auto m = make_dataset(cfg, 6, dir);
    CHECK(static_cast<int64_t>(m.entries.size()) == 6);
    auto ds = load_dataset(dir);
    CHECK(ds.size() == 6);
    // entry reproducible from base_seed + i alone
    auto [src, tgt] = sample_pair(cfg.base_seed + 3, PairOptions{32, 10, 32});
    CHECK(ds.pairs[3].source.spec.identity_seed == src.spec.identity_seed);
    CHECK(ds.pairs[3].target.spec.pose.scale == doctest::Approx(tgt.spec.pose.scale));
    CHECK(bit_equal(ds.pairs[3].source.dpmap.part, src.dpmap.part));
    // image went through 8-bit quantization
    CHECK(max_abs_diff(ds.pairs[3].source.image, src.image) <= 0.5f / 255.0f + 1e-6);
}
