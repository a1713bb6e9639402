#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "test_support.hpp"
#include "vad/patch_grid.hpp"

using namespace vad;

TEST_CASE("build_grid offsets") {
    SECTION("40x40: offsets {0,10,20} per axis, 9 regions") {
        RegionGrid g = build_grid(40, 40);
        std::set<int> xs, ys;
        for (auto [x, y] : g.offsets) {
            xs.insert(x);
            ys.insert(y);
        }
        CHECK(xs == std::set<int>{0, 10, 20});
        CHECK(ys == std::set<int>{0, 10, 20});
        CHECK(g.region_count() == 9);
    }
    SECTION("20x20: a single region at the origin") {
        RegionGrid g = build_grid(20, 20);
        REQUIRE(g.region_count() == 1);
        CHECK(g.offsets[0] == std::pair<int, int>{0, 0});
    }
    SECTION("238x158 frame matches brute-force offset enumeration") {
        RegionGrid g = build_grid(238, 158);
        auto brute_axis = [](int extent) {
            std::set<int> offs;
            for (int o = 0; o + 20 < extent; o += 10) offs.insert(o);
            offs.insert(extent - 20);
            return offs;
        };
        auto xs = brute_axis(238);
        auto ys = brute_axis(158);
        CHECK(g.region_count() == xs.size() * ys.size());
        CHECK(g.region_count() == 23u * 15u);
        // region ids are dense, row-major
        std::size_t id = 0;
        for (int y : ys)
            for (int x : xs) {
                REQUIRE(g.offsets[id] == std::pair<int, int>{x, y});
                ++id;
            }
    }
    SECTION("frames smaller than a patch are rejected") {
        CHECK_THROWS_AS(build_grid(19, 40), Error);
        CHECK_THROWS_AS(build_grid(40, 12), Error);
    }
}

TEST_CASE("pixel coverage: >= 1 everywhere, exactly 4 away from clamped borders") {
    for (auto [w, h] : std::vector<std::pair<int, int>>{{40, 40}, {64, 64}, {63, 47}}) {
        RegionGrid g = build_grid(w, h);
        std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
        for (auto [ox, oy] : g.offsets)
            for (int y = 0; y < 20; ++y)
                for (int x = 0; x < 20; ++x) cover[static_cast<std::size_t>(oy + y) * w + ox + x]++;
        for (int c : cover) REQUIRE(c >= 1);
        // interior pixels away from the frame edges and the clamped last
        // row/column regions sit in exactly 4 overlapping patches
        int last_regular_x = ((w - 20) / 10) * 10;
        int last_regular_y = ((h - 20) / 10) * 10;
        for (int y = 10; y < last_regular_y; ++y)
            for (int x = 10; x < last_regular_x; ++x)
                REQUIRE(cover[static_cast<std::size_t>(y) * w + x] == 4);
        // exact-tiling frames never exceed 4 anywhere
        if ((w - 20) % 10 == 0 && (h - 20) % 10 == 0)
            for (int c : cover) REQUIRE(c <= 4);
    }
}

namespace {

ChannelStack ramp_stack(int w, int h) {
    ChannelStack stack;
    stack.anchor_frame = 0;
    for (int c = 0; c < 13; ++c) {
        Image img(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<float>(c * 10000 + y * w + x);
        stack.planes[c] = img;
    }
    return stack;
}

} // namespace

TEST_CASE("extract_patch windows the planes") {
    RegionGrid g = build_grid(40, 40);
    ChannelStack stack = ramp_stack(40, 40);
    VideoPatch p = extract_patch(stack, g, 0);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) REQUIRE(p.at(0, y, x) == stack.planes[0].at(x, y));
    // purity: extracting twice gives identical data
    VideoPatch q = extract_patch(stack, g, 0);
    REQUIRE(p.data == q.data);
    CHECK_THROWS_AS(extract_patch(stack, g, static_cast<int>(g.region_count())), Error);
    CHECK_THROWS_AS(extract_patch(stack, g, -1), Error);
}

namespace {

// patch with exactly n_active pixels moving in flow pair 0
VideoPatch gated_fixture(int n_active, float speed = 3.0f) {
    VideoPatch p{};
    int placed = 0;
    for (int y = 0; y < 20 && placed < n_active; ++y)
        for (int x = 0; x < 20 && placed < n_active; ++x) {
            p.at(1, y, x) = speed; // |u| of flow pair 0
            ++placed;
        }
    return p;
}

} // namespace

TEST_CASE("motion gate") {
    MotionGateParams params; // flow 0.5 px, diff 10, fraction 0.20

    SECTION("zero activity skips") {
        VideoPatch p{};
        std::array<float, 400> prev{};
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x) {
                p.at(0, y, x) = 55.0f;
                prev[static_cast<std::size_t>(y) * 20 + x] = 55.0f;
            }
        CHECK(motion_gate(p, params, prev.data()) == GateDecision::Skip);
    }
    SECTION("a 10x10 moving block (25%) keeps") {
        VideoPatch p{};
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) p.at(2, y, x) = 3.0f;
        CHECK(motion_gate(p, params, nullptr) == GateDecision::Keep);
    }
    SECTION("79 active pixels skip, 80 keep") {
        CHECK(motion_gate(gated_fixture(79), params, nullptr) == GateDecision::Skip);
        CHECK(motion_gate(gated_fixture(80), params, nullptr) == GateDecision::Keep);
    }
    SECTION("frame difference alone can activate pixels") {
        VideoPatch p{};
        std::array<float, 400> prev{};
        for (int i = 0; i < 80; ++i) {
            p.at(0, i / 20, i % 20) = 200.0f;
            prev[static_cast<std::size_t>(i)] = 100.0f;
        }
        CHECK(motion_gate(p, params, prev.data()) == GateDecision::Keep);
        CHECK(motion_gate(p, params, nullptr) == GateDecision::Skip);
    }
    SECTION("gate monotonicity: adding motion never flips keep to skip") {
        vad::Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            VideoPatch p{};
            for (int i = 0; i < 400; ++i)
                if (rng.bernoulli(0.3))
                    p.at(1 + 2 * static_cast<int>(rng.below(6)), i / 20, i % 20) =
                        static_cast<float>(rng.uniform(0.6, 4.0));
            GateDecision before = motion_gate(p, params, nullptr);
            // add motion at a random pixel
            p.at(1, static_cast<int>(rng.below(20)), static_cast<int>(rng.below(20))) = 5.0f;
            GateDecision after = motion_gate(p, params, nullptr);
            if (before == GateDecision::Keep) REQUIRE(after == GateDecision::Keep);
        }
    }
}
