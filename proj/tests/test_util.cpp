#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "vad/binio.hpp"
#include "vad/image.hpp"
#include "vad/parallel.hpp"
#include "vad/png_io.hpp"
#include "vad/rng.hpp"
#include "vad/sha256.hpp"

using namespace vad;

TEST_CASE("sha256 matches NIST vectors") {
    CHECK(Sha256::hex(Sha256::of("", 0)) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(Sha256::hex(Sha256::of("abc", 3)) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const char* msg = "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
    CHECK(Sha256::hex(Sha256::of(msg, 56)) ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("sha256 streaming equals one-shot") {
    std::vector<std::uint8_t> data(1000);
    Rng rng(3);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng.below(256));
    Sha256 h;
    h.update(data.data(), 100);
    h.update(data.data() + 100, 900);
    CHECK(h.finish() == Sha256::of(data));
}

TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        auto k = r.range_int(-2, 2);
        REQUIRE(k >= -2);
        REQUIRE(k <= 2);
    }
}

TEST_CASE("rng normal moments") {
    Rng r(11);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::fabs(sum / n) < 0.03);
    CHECK(std::fabs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng fork streams are independent of draw order") {
    Rng root(5);
    Rng f1 = root.fork(1);
    double v1 = f1.uniform();
    Rng root2(5);
    Rng g2 = root2.fork(2);
    (void)g2.uniform();
    Rng g1 = root2.fork(1);
    CHECK(g1.uniform() == v1);
}

TEST_CASE("parallel_for is deterministic across thread counts") {
    std::vector<double> out1(1000), out4(1000);
    Parallel::set_max_threads(1);
    Parallel::for_each(1000, [&](std::size_t i) { out1[i] = std::sin(static_cast<double>(i)); });
    Parallel::set_max_threads(4);
    Parallel::for_each(1000, [&](std::size_t i) { out4[i] = std::sin(static_cast<double>(i)); });
    Parallel::set_max_threads(0);
    CHECK(out1 == out4);
}

TEST_CASE("byte writer/reader round-trip") {
    ByteWriter w;
    w.magic("TEST1");
    w.u8(7);
    w.u32(123456789u);
    w.u64(0xDEADBEEFCAFEBABEull);
    w.f32(1.5f);
    w.f64(-2.25);
    ByteReader r(w.data());
    r.expect_magic("TEST1", "buffer");
    CHECK(r.u8() == 7);
    CHECK(r.u32() == 123456789u);
    CHECK(r.u64() == 0xDEADBEEFCAFEBABEull);
    CHECK(r.f32() == 1.5f);
    CHECK(r.f64() == -2.25);
    CHECK(r.at_end());
    CHECK_THROWS_AS(r.u8(), Error);
}

TEST_CASE("png gray round-trip") {
    auto dir = test_support::scratch_dir("png");
    Image img = test_support::textured_image(37, 23, 9);
    // quantize so the round-trip is exact
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            img.at(x, y) = std::floor(img.at(x, y));
    png::save_gray(dir / "a.png", img);
    Image back = png::load_gray(dir / "a.png");
    REQUIRE(back.width() == img.width());
    REQUIRE(back.height() == img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) REQUIRE(back.at(x, y) == img.at(x, y));
}

TEST_CASE("png rgb encodes and decodes via luma") {
    auto dir = test_support::scratch_dir("png_rgb");
    RgbImage rgb(8, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 8; ++x) rgb.set(x, y, 255, 0, 0);
    png::save_rgb(dir / "r.png", rgb);
    Image back = png::load_gray(dir / "r.png");
    REQUIRE(back.width() == 8);
    // luma of pure red is 0.299*255
    CHECK(back.at(3, 2) == Catch::Approx(0.299 * 255).margin(0.01));
}

TEST_CASE("png rejects corrupt input") {
    auto dir = test_support::scratch_dir("png_bad");
    write_file_text(dir / "bad.png", "not a png at all");
    CHECK_THROWS_AS(png::load_gray(dir / "bad.png"), Error);
    CHECK_THROWS_AS(png::load_gray(dir / "missing.png"), Error);
}

TEST_CASE("image resize and rotation basics") {
    Image img = test_support::textured_image(100, 80, 2);
    Image half = resize_bilinear(img, 50, 40);
    CHECK(half.width() == 50);
    CHECK(half.height() == 40);
    Image uniform(40, 40, 99.0f);
    Image rot = rotate_about_center(uniform, 45.0);
    // interior pixels keep the uniform value
    int cx = 20, cy = 20;
    CHECK(rot.at(cx, cy) == Catch::Approx(99.0f));
}
