#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "meltpool/synthetic.hpp"
#include "oracles.hpp"

using namespace meltpool;

namespace {

SceneSpec small_spec(std::uint64_t seed) {
    SceneSpec s;
    s.seed = seed;
    s.width = s.height = 192;
    s.layer_count = 4;
    return s;
}

BinaryMask class_mask(const AnnotationMask& m, PixelClass c) {
    BinaryMask b(m.width, m.height);
    for (std::size_t i = 0; i < m.labels.size(); ++i) b.values[i] = m.labels[i] == c;
    return b;
}

std::size_t full_area(const TruePool& p, int w, int h) {
    std::size_t n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = (x + 0.5 - p.cx) / p.a, dy = (y + 0.5 - p.cy) / p.b;
            n += y + 0.5 >= p.cy && dx * dx + dy * dy <= 1.0;
        }
    return n;
}

} // namespace

TEST_CASE("scenes are deterministic per seed") {
    const Scene a = generate_scene(small_spec(3)), b = generate_scene(small_spec(3));
    CHECK(a.image.data == b.image.data);
    CHECK(a.truth.mask.labels == b.truth.mask.labels);
    CHECK(truth_to_json(a.truth, small_spec(3)) == truth_to_json(b.truth, small_spec(3)));
    const Scene c = generate_scene(small_spec(4));
    CHECK(a.image.data != c.image.data);
}

TEST_CASE("image values are integral and in range") {
    const Scene s = generate_scene(small_spec(5));
    CHECK(s.image.channels == 1);
    for (double v : s.image.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 255.0);
        CHECK(v == std::round(v));
    }
}

TEST_CASE("defects") {
    SceneSpec spec = small_spec(6);
    spec.defect_count = 0;
    const Scene none = generate_scene(spec);
    CHECK(none.truth.defects.empty());
    CHECK(std::none_of(none.truth.mask.labels.begin(), none.truth.mask.labels.end(),
                       [](PixelClass c) { return c == PixelClass::defect; }));
    spec.defect_count = 5;
    const Scene some = generate_scene(spec);
    CHECK(some.truth.defects.size() == 5);
    CHECK(std::any_of(some.truth.mask.labels.begin(), some.truth.mask.labels.end(),
                      [](PixelClass c) { return c == PixelClass::defect; }));
}

TEST_CASE("visible regions agree with a flood fill") {
    for (std::uint64_t seed = 10; seed < 16; ++seed) {
        const Scene s = generate_scene(small_spec(seed));
        const BinaryMask bg = class_mask(s.truth.mask, PixelClass::background);
        CHECK(s.truth.regions.size() == static_cast<std::size_t>(test::count_components(bg, 1, false, false)));
        std::size_t touching = 0;
        for (const auto& r : s.truth.regions) touching += r.touches_edge;
        CHECK(s.truth.regions.size() - touching == static_cast<std::size_t>(test::count_components(bg, 1, false, true)));
        std::size_t area = 0;
        for (const auto& r : s.truth.regions) area += r.area;
        CHECK(area == static_cast<std::size_t>(std::count(bg.values.begin(), bg.values.end(), 1)));
        CHECK(s.truth.visible_pool_count() > 0);
    }
}

TEST_CASE("later layers overdraw earlier pools") {
    const Scene s = generate_scene(small_spec(20));
    const int W = s.image.width, H = s.image.height;
    std::vector<std::size_t> owned(s.truth.pools.size(), 0);
    for (int o : s.truth.owner)
        if (o >= 0) ++owned[static_cast<std::size_t>(o)];
    int partial = 0;
    for (const auto& p : s.truth.pools) {
        const std::size_t full = full_area(p, W, H);
        const std::size_t own = owned[static_cast<std::size_t>(p.id)];
        CHECK(own <= full);
        if (own > 0 && own < full) ++partial;
    }
    CHECK(partial > 0);
    for (const auto& p : s.truth.pools)
        if (p.layer == small_spec(20).layer_count - 1) CHECK(p.cy == doctest::Approx(0.0));
}

TEST_CASE("appearance does not change the mask") {
    SceneSpec a = small_spec(30), b = small_spec(30);
    a.noise_amplitude = 0.0;
    b.noise_amplitude = 25.0;
    b.contrast = 0.6;
    b.brightness = 20.0;
    const Scene sa = generate_scene(a), sb = generate_scene(b);
    CHECK(sa.truth.mask.labels == sb.truth.mask.labels);
    CHECK(sa.image.data != sb.image.data);
    // Without noise, boundary pixels render darker than any interior.
    double max_boundary = 0.0, min_interior = 255.0;
    for (std::size_t i = 0; i < sa.image.data.size(); ++i) {
        if (sa.truth.mask.labels[i] == PixelClass::boundary) max_boundary = std::max(max_boundary, sa.image.data[i]);
        if (sa.truth.mask.labels[i] == PixelClass::background) min_interior = std::min(min_interior, sa.image.data[i]);
    }
    CHECK(max_boundary < min_interior);
}

TEST_CASE("invalid specs are rejected") {
    SceneSpec s = small_spec(1);
    s.layer_count = 0;
    CHECK_THROWS_AS(generate_scene(s), InvalidInput);
    s = small_spec(1);
    s.hatch_spacing = 200.0;
    CHECK_THROWS_AS(generate_scene(s), InvalidInput);
    s = small_spec(1);
    s.noise_amplitude = -1.0;
    CHECK_THROWS_AS(generate_scene(s), InvalidInput);
    s = small_spec(1);
    s.width = 4;
    CHECK_THROWS_AS(generate_scene(s), InvalidInput);
}

TEST_CASE("truth json and training pairs") {
    const SceneSpec spec = small_spec(40);
    const Scene s = generate_scene(spec);
    const auto j = nlohmann::json::parse(truth_to_json(s.truth, spec));
    CHECK(j["visible_pool_count"] == s.truth.visible_pool_count());
    CHECK(j["pools"].size() == s.truth.pools.size());
    CHECK(j["spec"]["seed"] == 40);

    const auto pairs = synthetic_pairs(3, 32, 9);
    REQUIRE(pairs.size() == 3);
    for (const auto& p : pairs) {
        CHECK(p.input.width == 32);
        CHECK(p.target.height == 32);
        for (double v : p.input.data) CHECK(std::abs(v) <= 1.0);
    }
    CHECK(pairs[0].input.data != pairs[1].input.data);
    CHECK(synthetic_pairs(1, 32, 9)[0].target.data == pairs[0].target.data);
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK_NOTHROW(small_scene_spec(32, seed).validate());
}
