#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "vad/optical_flow.hpp"
#include "vad/synthetic.hpp"

using namespace vad;

TEST_CASE("identical frames give zero flow") {
    Image img = test_support::textured_image(48, 40, 21);
    FlowField f = estimate_flow(img, img);
    for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x) {
            REQUIRE(std::fabs(f.u.at(x, y)) < 1e-6f);
            REQUIRE(std::fabs(f.v.at(x, y)) < 1e-6f);
        }
}

TEST_CASE("textureless frames give negligible flow") {
    Image a(40, 40, 100.0f);
    Image b(40, 40, 100.0f);
    FlowField f = estimate_flow(a, b);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x)
            REQUIRE(std::hypot(f.u.at(x, y), f.v.at(x, y)) < 1e-3);
}

TEST_CASE("2-px translation is recovered over the interior") {
    Image a = test_support::textured_image(64, 48, 33);
    Image b = test_support::translate_right(a, 2);
    FlowField f = estimate_flow(a, b);
    double sum_u = 0.0, sum_av = 0.0;
    int n = 0;
    for (int y = 8; y < 40; ++y)
        for (int x = 8; x < 56; ++x) {
            sum_u += f.u.at(x, y);
            sum_av += std::fabs(f.v.at(x, y));
            ++n;
        }
    double mean_u = sum_u / n;
    CHECK(mean_u > 1.5);
    CHECK(mean_u < 2.5);
    CHECK(sum_av / n < 0.5);
    // measurement-level tolerance: mean displacement error < 0.5 px
    CHECK(std::fabs(mean_u - 2.0) < 0.5);
}

TEST_CASE("estimate_flow rejects mismatched dimensions") {
    Image a(32, 32), b(16, 32);
    CHECK_THROWS_AS(estimate_flow(a, b), Error);
}

TEST_CASE("channel stack layout and gating fixtures") {
    SECTION("static window: motion planes are negligible") {
        FrameSequence seq;
        seq.width = 40;
        seq.height = 40;
        seq.sequence_id = "static";
        Image img = test_support::textured_image(40, 40, 4);
        for (int t = 0; t < 7; ++t) seq.frames.push_back(img);
        ChannelStack stack = build_channel_stack(seq, 0);
        for (int c = 1; c < 13; ++c)
            for (int y = 0; y < 40; ++y)
                for (int x = 0; x < 40; ++x) REQUIRE(stack.planes[c].at(x, y) < 1e-3f);
        // plane 0 is the anchor grayscale
        REQUIRE(stack.planes[0] == img);
    }
    SECTION("boundary arithmetic: t = last-6 works, t = last-5 fails") {
        FrameSequence seq;
        seq.width = 24;
        seq.height = 24;
        seq.sequence_id = "b";
        for (int t = 0; t < 10; ++t) seq.frames.push_back(Image(24, 24, 10.0f));
        CHECK_NOTHROW(build_channel_stack(seq, 3));
        CHECK_THROWS_AS(build_channel_stack(seq, 4), Error);
    }
}

TEST_CASE("motion planes are nonnegative and depend only on frames t..t+6") {
    auto spec = test_support::small_scene(2);
    auto [train, test] = generate_synthetic(spec);
    (void)test;
    FrameSequence seq = train.sequences[0];
    ChannelStack s1 = build_channel_stack(seq, 5);
    for (int c = 1; c < 13; ++c)
        for (int y = 0; y < seq.height; ++y)
            for (int x = 0; x < seq.width; ++x) REQUIRE(s1.planes[c].at(x, y) >= 0.0f);
    // perturbing frame t+7 leaves the stack unchanged
    seq.frames[12] = test_support::textured_image(seq.width, seq.height, 99);
    ChannelStack s2 = build_channel_stack(seq, 5);
    for (int c = 0; c < 13; ++c) REQUIRE(s1.planes[c] == s2.planes[c]);
}

TEST_CASE("rightward mover peaks along the sprite path") {
    SyntheticSceneSpec spec;
    spec.width = 64;
    spec.height = 64;
    spec.train_frames = 20;
    spec.test_frames = 8;
    spec.walker_count = 1;
    spec.walker_speed_min = 3.0;
    spec.walker_speed_max = 3.0;
    spec.walker_size = 10;
    spec.lanes = {27};
    spec.seed = 40;
    auto [train, test] = generate_synthetic(spec);
    (void)test;
    const FrameSequence& seq = train.sequences[0];
    ChannelStack stack = build_channel_stack(seq, 2);
    // in each motion-plane pair, the horizontal plane's peak lies in the lane band
    for (int k = 0; k < 6; ++k) {
        const Image& pu = stack.planes[1 + 2 * k];
        float best = 0.0f;
        int best_y = -1;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (pu.at(x, y) > best) {
                    best = pu.at(x, y);
                    best_y = y;
                }
        REQUIRE(best > 0.5f);
        REQUIRE(best_y >= 25);
        REQUIRE(best_y <= 39);
    }
}

TEST_CASE("flow cache round-trip") {
    auto dir = test_support::scratch_dir("flowcache");
    Image a = test_support::textured_image(32, 24, 8);
    Image b = test_support::translate_right(a, 1);
    FlowField f = estimate_flow(a, b);
    auto path = flow_cache_path(dir, "seqX", 12);
    save_flow(path, f);
    FlowField g = load_flow(path);
    REQUIRE(g.u == f.u);
    REQUIRE(g.v == f.v);
    CHECK(path.filename().string() == "flow_000012.bin");
}

TEST_CASE("spatial-gradient motion planes are selectable") {
    FrameSequence seq;
    seq.width = 32;
    seq.height = 32;
    seq.sequence_id = "sg";
    Image base = test_support::textured_image(32, 32, 5);
    for (int t = 0; t < 7; ++t) seq.frames.push_back(test_support::translate_right(base, t));
    FlowParams params;
    params.motion_planes = MotionPlaneMode::SpatialGradients;
    ChannelStack stack = build_channel_stack(seq, 0, params);
    for (int c = 1; c < 13; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) REQUIRE(stack.planes[c].at(x, y) >= 0.0f);
}
