#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "vad/media_ingest.hpp"
#include "vad/sha256.hpp"
#include "vad/synthetic.hpp"

using namespace vad;

namespace {

SyntheticSceneSpec demo_spec(std::uint64_t seed) { return test_support::small_scene(seed); }

} // namespace

TEST_CASE("synthetic generator is a pure function of spec and seed") {
    auto [train_a, test_a] = generate_synthetic(demo_spec(7));
    auto [train_b, test_b] = generate_synthetic(demo_spec(7));
    REQUIRE(train_a.sequences[0].frames.size() == train_b.sequences[0].frames.size());
    for (std::size_t t = 0; t < train_a.sequences[0].frames.size(); ++t)
        REQUIRE(train_a.sequences[0].frames[t] == train_b.sequences[0].frames[t]);
    for (std::size_t t = 0; t < test_a.sequences[0].frames.size(); ++t)
        REQUIRE(test_a.sequences[0].frames[t] == test_b.sequences[0].frames[t]);
    for (std::size_t t = 0; t < test_a.pixel_masks[0].size(); ++t)
        REQUIRE(test_a.pixel_masks[0][t] == test_b.pixel_masks[0][t]);
}

TEST_CASE("synthetic anomalies control the masks") {
    SECTION("no anomalies: all-zero masks, header-only tracks") {
        auto spec = demo_spec(3);
        spec.anomalies.clear();
        auto [train, test] = generate_synthetic(spec);
        (void)train;
        for (const auto& mask : test.pixel_masks[0])
            for (int y = 0; y < mask.height(); ++y)
                for (int x = 0; x < mask.width(); ++x) REQUIRE(mask.at(x, y) == 0.0f);
        CHECK(test.track_boxes[0].empty());
    }
    SECTION("fast mover over frames 10..30 marks exactly 21 frames") {
        auto spec = demo_spec(3);
        auto [train, test] = generate_synthetic(spec);
        (void)train;
        int nonempty = 0;
        for (const auto& mask : test.pixel_masks[0]) {
            bool any = false;
            for (int y = 0; y < mask.height() && !any; ++y)
                for (int x = 0; x < mask.width() && !any; ++x) any = mask.at(x, y) > 0;
            nonempty += any ? 1 : 0;
        }
        CHECK(nonempty == 21);
        CHECK(test.track_boxes[0].size() == 21);
    }
    SECTION("oversized sprite rejected when larger than canvas") {
        auto spec = demo_spec(3);
        spec.anomalies[0].size = 100;
        CHECK_THROWS_AS(generate_synthetic(spec), Error);
    }
}

TEST_CASE("partition save/load round-trip") {
    auto dir = test_support::scratch_dir("ingest_roundtrip");
    auto [train, test] = generate_synthetic(demo_spec(5));
    save_partition(dir, train);
    save_partition(dir, test);

    DatasetPartition train_l = load_partition(dir, PartitionRole::Train);
    DatasetPartition test_l = load_partition(dir, PartitionRole::Test);

    REQUIRE(train_l.sequences.size() == 1);
    REQUIRE(train_l.sequences[0].frame_count() == train.sequences[0].frame_count());
    CHECK(train_l.pixel_masks[0].empty()); // train carries no annotations

    REQUIRE(test_l.sequences.size() == 1);
    REQUIRE(test_l.pixel_masks[0].size() == test_l.sequences[0].frame_count());
    REQUIRE(test_l.track_boxes[0].size() == test.track_boxes[0].size());
    for (std::size_t i = 0; i < test.track_boxes[0].size(); ++i) {
        CHECK(test_l.track_boxes[0][i].track_id == test.track_boxes[0][i].track_id);
        CHECK(test_l.track_boxes[0][i].frame == test.track_boxes[0][i].frame);
        CHECK(test_l.track_boxes[0][i].box.x == test.track_boxes[0][i].box.x);
    }
    // frames round-trip exactly (generator emits integral intensities after PNG quantization)
    for (std::size_t t = 0; t < test.sequences[0].frames.size(); ++t) {
        const Image& a = test.sequences[0].frames[t];
        const Image& b = test_l.sequences[0].frames[t];
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x)
                REQUIRE(b.at(x, y) == Catch::Approx(a.at(x, y)).margin(0.5 + 1e-6));
    }
    // every referenced track frame exists
    for (const auto& tb : test_l.track_boxes[0])
        REQUIRE(static_cast<std::size_t>(tb.frame) < test_l.sequences[0].frame_count());
}

TEST_CASE("load_partition errors") {
    auto dir = test_support::scratch_dir("ingest_errors");
    CHECK_THROWS_AS(load_partition(dir / "nope", PartitionRole::Train), Error);

    SECTION("mask dimension mismatch") {
        auto [train, test] = generate_synthetic(demo_spec(5));
        (void)train;
        save_partition(dir, test);
        // overwrite one mask with wrong dimensions
        png::save_gray(dir / "test" / "seq000" / "mask_000003.png", Image(8, 8, 0.0f));
        CHECK_THROWS_AS(load_partition(dir, PartitionRole::Test), Error);
    }
    SECTION("non-monotone track frames") {
        auto [train, test] = generate_synthetic(demo_spec(5));
        (void)train;
        save_partition(dir, test);
        write_file_text(dir / "test" / "seq000" / "tracks.csv",
                        "track_id,frame,x,y,w,h\n1,5,1,1,4,4\n1,5,2,2,4,4\n");
        CHECK_THROWS_AS(load_partition(dir, PartitionRole::Test), Error);
    }
}

TEST_CASE("tracks csv reconstructs per-track records") {
    std::ostringstream csv;
    csv << "track_id,frame,x,y,w,h\n";
    for (int f = 40; f <= 75; ++f) csv << "3," << f << ",1,2,5,6\n";
    csv << "7,10,0,0,3,3\n";
    std::istringstream in(csv.str());
    auto rows = parse_tracks_csv(in, "fixture");
    int count3 = 0;
    for (const auto& tb : rows) count3 += tb.track_id == 3 ? 1 : 0;
    CHECK(count3 == 36);
}

TEST_CASE("apply_transform") {
    auto [train, test] = generate_synthetic(demo_spec(9));
    (void)test;
    const FrameSequence& seq = train.sequences[0];

    SECTION("identity returns identical frames") {
        FrameSequence out = apply_transform(seq, IngestTransform{1.0, 0.0});
        REQUIRE(out.frames.size() == seq.frames.size());
        for (std::size_t t = 0; t < seq.frames.size(); ++t) REQUIRE(out.frames[t] == seq.frames[t]);
    }
    SECTION("dimension arithmetic") {
        FrameSequence src;
        src.sequence_id = "dims";
        src.width = 100;
        src.height = 80;
        src.frames.push_back(test_support::textured_image(100, 80, 1));
        FrameSequence out = apply_transform(src, IngestTransform{0.5, 0.0});
        CHECK(out.width == 50);
        CHECK(out.height == 40);
        // scale s then 1/s recovers the dimensions exactly
        FrameSequence back = apply_transform(out, IngestTransform{2.0, 0.0});
        CHECK(back.width == 100);
        CHECK(back.height == 80);
    }
    SECTION("45-degree rotation keeps the uniform interior") {
        FrameSequence src;
        src.sequence_id = "uniform";
        src.width = 60;
        src.height = 60;
        src.frames.push_back(Image(60, 60, 140.0f));
        FrameSequence out = apply_transform(src, IngestTransform{1.0, 45.0});
        // pixels farther than 2 px inside the rotated square keep the value
        const Image& img = out.frames[0];
        double c = (60 - 1) * 0.5;
        double rad = 45.0 * 3.14159265358979323846 / 180.0;
        int checked = 0;
        for (int y = 0; y < 60; ++y)
            for (int x = 0; x < 60; ++x) {
                // map output pixel back into source coordinates
                double dx = x - c, dy = y - c;
                double sx = std::cos(rad) * dx + std::sin(rad) * dy + c;
                double sy = -std::sin(rad) * dx + std::cos(rad) * dy + c;
                if (sx > 2.0 && sy > 2.0 && sx < 57.0 && sy < 57.0) {
                    REQUIRE(img.at(x, y) == Catch::Approx(140.0f).margin(1e-3));
                    ++checked;
                }
            }
        REQUIRE(checked > 500);
    }
    SECTION("degenerate scale fails") {
        CHECK_THROWS_AS(apply_transform(seq, IngestTransform{0.001, 0.0}), Error);
        CHECK_THROWS_AS(apply_transform(seq, IngestTransform{-1.0, 0.0}), Error);
    }
}

TEST_CASE("synthetic train partition contains only walker lanes") {
    auto spec = demo_spec(13);
    auto [train, test] = generate_synthetic(spec);
    (void)test;
    // no pixels outside lane bands differ from background
    const Image& f0 = train.sequences[0].frames[0];
    for (int y = 0; y < f0.height(); ++y) {
        bool in_lane = false;
        for (int lane : spec.lanes)
            if (y >= lane - 1 && y <= lane + spec.walker_size) in_lane = true;
        if (in_lane) continue;
        for (int x = 0; x < f0.width(); ++x) REQUIRE(f0.at(x, y) == spec.background);
    }
}
