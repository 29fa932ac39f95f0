#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "meltpool/image.hpp"
#include "meltpool/png_io.hpp"

using namespace meltpool;

namespace {

RawImage ramp(int w, int h, int c = 1) {
    RawImage img(w, h, c);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>((i * 37) % 256);
    return img;
}

// Brute-force: count how many tiles cover each source pixel.
std::vector<int> coverage(const std::vector<Tile>& tiles, int w, int h) {
    std::vector<int> cov(static_cast<std::size_t>(w) * h, 0);
    for (const auto& t : tiles)
        for (int y = t.row; y < t.row + t.size; ++y)
            for (int x = t.col; x < t.col + t.size; ++x) cov[static_cast<std::size_t>(y) * w + x]++;
    return cov;
}

} // namespace

TEST_CASE("tiling a 1920x2560 image on a 4x8 grid yields 32 covering tiles") {
    const RawImage img = ramp(2560, 1920);
    const auto tiles = tile_image(img, 512, 4, 8);
    CHECK(tiles.size() == 32);
    const auto cov = coverage(tiles, img.width, img.height);
    CHECK(std::all_of(cov.begin(), cov.end(), [](int c) { return c >= 1; }));
    for (const auto& t : tiles) {
        CHECK(t.row + t.size <= img.height);
        CHECK(t.col + t.size <= img.width);
        CHECK(t.image.at(0, 0) == img.at(t.row, t.col));
        CHECK(t.image.at(511, 511) == img.at(t.row + 511, t.col + 511));
    }
}

TEST_CASE("tiling identity and zero-overlap grids") {
    const RawImage one = ramp(512, 512);
    const auto single = tile_image(one, 512, 1, 1);
    REQUIRE(single.size() == 1);
    CHECK(single[0].row == 0);
    CHECK(single[0].col == 0);
    CHECK(single[0].image.data == one.data);

    const RawImage img = ramp(1024, 1024);
    const auto tiles = tile_image(img, 512, 2, 2);
    std::set<std::pair<int, int>> origins;
    for (const auto& t : tiles) origins.insert({t.row, t.col});
    CHECK(origins == std::set<std::pair<int, int>>{{0, 0}, {0, 512}, {512, 0}, {512, 512}});
    const auto cov = coverage(tiles, 1024, 1024);
    CHECK(std::count(cov.begin(), cov.end(), 1) == 1024 * 1024);
}

TEST_CASE("tiling errors") {
    const RawImage img = ramp(300, 300);
    CHECK_THROWS_AS(tile_image(img, 512, 1, 1), InvalidInput);
    CHECK_THROWS_AS(tile_image(img, 128, 2, 2), InvalidInput); // 2*128 < 300
    CHECK_THROWS_AS(tile_image(img, 100, 3, 3), InvalidInput); // not a power of two
    CHECK_THROWS_AS(tile_image(img, 128, 0, 3), InvalidInput);
}

TEST_CASE("tiling covers every pixel across assorted grids") {
    for (auto [w, h, t, r, c] : std::vector<std::array<int, 5>>{
             {100, 70, 32, 3, 4}, {64, 64, 16, 4, 4}, {65, 33, 16, 3, 5}, {128, 96, 64, 2, 2}}) {
        const auto tiles = tile_image(ramp(w, h), t, r, c);
        CHECK(tiles.size() == static_cast<std::size_t>(r * c));
        const auto cov = coverage(tiles, w, h);
        CHECK(std::all_of(cov.begin(), cov.end(), [](int v) { return v >= 1; }));
    }
}

TEST_CASE("downscale box filter") {
    Tile tile{"t", 0, 0, 512, ramp(512, 512)};
    const RawImage small = downscale(tile, 2);
    CHECK(small.width == 256);
    CHECK(small.height == 256);

    const RawImage flat(8, 8, 3, 77.0);
    const RawImage flat2 = downscale(flat, 4);
    CHECK(std::all_of(flat2.data.begin(), flat2.data.end(), [](double v) { return v == 77.0; }));

    RawImage block(2, 2, 1);
    block.data = {0, 0, 255, 255};
    CHECK(downscale(block, 2).data[0] == 127.5);

    CHECK_THROWS_AS(downscale(ramp(10, 10), 3), InvalidInput);
}

TEST_CASE("downscale preserves the mean") {
    const RawImage img = ramp(96, 48, 3);
    for (int f : {1, 2, 3, 4, 6, 8, 12, 16}) {
        const RawImage out = downscale(img, f);
        const double a = std::accumulate(img.data.begin(), img.data.end(), 0.0) / img.data.size();
        const double b = std::accumulate(out.data.begin(), out.data.end(), 0.0) / out.data.size();
        CHECK(std::abs(a - b) < 1e-9);
    }
}

TEST_CASE("model range scaling") {
    RawImage img(3, 1, 1);
    img.data = {0.0, 127.5, 255.0};
    const ModelImage m = to_model_range(img);
    CHECK(m.at(0, 0, 0) == -1.0);
    CHECK(m.at(1, 0, 1) == 0.0);
    CHECK(m.at(2, 0, 2) == 1.0);

    // Exhaustive over the representable intensities.
    RawImage all(256, 1, 3);
    for (int v = 0; v < 256; ++v)
        for (int c = 0; c < 3; ++c) all.at(0, v, c) = v;
    const RawImage back = from_model_range(to_model_range(all));
    for (std::size_t i = 0; i < all.data.size(); ++i) CHECK(std::abs(back.data[i] - all.data[i]) <= 1.0 / 255.0);
    const RawImage q = quantize(back);
    CHECK(q.data == all.data);
}

TEST_CASE("overlay encode and decode") {
    const ClassPalette palette;
    AnnotationMask bg(5, 4);
    const RawImage gray = encode_overlay(bg, palette);
    CHECK(std::all_of(gray.data.begin(), gray.data.end(), [](double v) { return v == 128.0; }));

    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        AnnotationMask m(17, 11);
        for (auto& l : m.labels) l = static_cast<PixelClass>(rng() % 3);
        CHECK(decode_overlay(encode_overlay(m, palette), palette) == m);

        // +-10 per channel noise still decodes to the intended class.
        RawImage noisy = encode_overlay(m, palette);
        std::uniform_int_distribution<int> noise(-10, 10);
        for (double& v : noisy.data) v = std::clamp(v + noise(rng), 0.0, 255.0);
        CHECK(decode_overlay(noisy, palette) == m);
    }
}

TEST_CASE("overlay decode rejects equidistant pixels") {
    ClassPalette palette;
    RawImage img(1, 1, 3);
    // Midpoint between background gray and defect green.
    for (int c = 0; c < 3; ++c) img.data[c] = (palette.background[c] + palette.defect[c]) / 2.0;
    CHECK_THROWS_AS(decode_overlay(img, palette), InvalidInput);
    CHECK(classify_overlay(img, palette).labels[0] == PixelClass::background);

    palette.defect = palette.boundary;
    CHECK_THROWS_AS(encode_overlay(AnnotationMask(2, 2), palette), InvalidInput);
}

TEST_CASE("png round trip") {
    RawImage rgb(7, 5, 3);
    for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = static_cast<double>((i * 13) % 256);
    CHECK(decode_png(encode_png(rgb)).data == rgb.data);
    RawImage gray = ramp(9, 4);
    const RawImage back = decode_png(encode_png(gray));
    CHECK(back.channels == 1);
    CHECK(back.data == gray.data);
    CHECK_THROWS_AS(decode_png({1, 2, 3}), IoError);
}
