#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <random>

#include "meltpool/geometry.hpp"
#include "meltpool/synthetic.hpp"
#include "oracles.hpp"

using namespace meltpool;
using test::parametric_half_ellipse;
using test::skew_normal_samples;

namespace {

AnnotationMask render_half_ellipse(const Ellipse& e, int w, int h) {
    AnnotationMask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = (x + 0.5 - e.cx) / e.a, dy = (y + 0.5 - e.cy) / e.b;
            const bool inside = y + 0.5 >= e.cy && dx * dx + dy * dy <= 1.0;
            m.at(y, x) = inside ? PixelClass::background : PixelClass::boundary;
        }
    return m;
}

double shoelace(const std::vector<Point>& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Point& q = p[(i + 1) % p.size()];
        s += double(p[i].x) * q.y - double(q.x) * p[i].y;
    }
    return std::abs(s) / 2.0;
}

MeltPool fitted_pool(double a, double b) {
    MeltPool p;
    p.status = PoolStatus::fitted;
    p.fit = EllipseFit{};
    p.fit->ellipse = {0.0, 0.0, a, b, 0.0};
    p.metrics = pool_metrics(p.fit->ellipse);
    return p;
}

} // namespace

TEST_CASE("noiseless half-ellipse is recovered") {
    const auto fit = fit_half_ellipse(parametric_half_ellipse(100.0, 50.0, 40.0, 20.0, 64));
    CHECK(std::abs(fit.ellipse.a / 40.0 - 1.0) < 1e-6);
    CHECK(std::abs(fit.ellipse.b / 20.0 - 1.0) < 1e-6);
    CHECK(std::abs(fit.ellipse.cx - 100.0) < 1e-6);
    CHECK(fit.rms < 1e-9);
    CHECK(fit.arc_points == 62);

    for (double a : {12.0, 33.0, 75.0})
        for (double b : {9.0, 30.0, 110.0}) {
            const auto f = fit_half_ellipse(parametric_half_ellipse(-3.0, 7.5, a, b, 48));
            CHECK(std::abs(f.ellipse.a / a - 1.0) < 1e-6);
            CHECK(std::abs(f.ellipse.b / b - 1.0) < 1e-6);
        }
}

TEST_CASE("noisy half-ellipse estimates are unbiased to within 2 percent") {
    const auto exact = parametric_half_ellipse(100.0, 50.0, 40.0, 20.0, 64);
    double sum_a = 0.0, sum_b = 0.0;
    std::vector<double> errors;
    for (unsigned s = 0; s < 100; ++s) {
        std::mt19937_64 rng(s);
        std::normal_distribution<double> n(0.0, 0.5);
        auto pts = exact;
        for (auto& p : pts) {
            p.x += n(rng);
            p.y += n(rng);
        }
        const auto f = fit_half_ellipse(pts);
        sum_a += f.ellipse.a;
        sum_b += f.ellipse.b;
        errors.push_back(std::max(std::abs(f.ellipse.a / 40.0 - 1.0), std::abs(f.ellipse.b / 20.0 - 1.0)));
    }
    CHECK(std::abs(sum_a / 100.0 / 40.0 - 1.0) < 0.02);
    CHECK(std::abs(sum_b / 100.0 / 20.0 - 1.0) < 0.02);
    std::sort(errors.begin(), errors.end());
    MESSAGE("per-trial relative error: median " << errors[50] << ", worst " << errors.back());
    CHECK(errors[50] < 0.02);
}

TEST_CASE("rotation mode recovers an axis-aligned pool") {
    EllipseFitOptions o;
    o.fit_rotation = true;
    const auto f = fit_half_ellipse(parametric_half_ellipse(10.0, 20.0, 30.0, 25.0, 64), o);
    CHECK(std::abs(f.ellipse.theta) < 1e-6);
    CHECK(std::abs(f.ellipse.a - 30.0) < 1e-5);
    CHECK(std::abs(f.ellipse.b - 25.0) < 1e-5);
}

TEST_CASE("degenerate boundaries are rejected") {
    CHECK_THROWS_AS(fit_half_ellipse(std::vector<Vec2>{{0, 0}, {1, 1}, {2, 0}}), FitError);
    std::vector<Vec2> flat;
    for (int i = 0; i < 10; ++i) flat.push_back({double(i), 5.0});
    CHECK_THROWS_AS(fit_half_ellipse(flat), FitError);
}

TEST_CASE("widest chord prefers the top-most near-tie") {
    const std::vector<Vec2> box{{0, 0}, {10, 0}, {10, 5}, {0, 5}};
    const auto c = widest_chord(box);
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);
    CHECK(c[2] == 10.0);
    // A slightly wider level further down loses to the top within tolerance.
    const std::vector<Vec2> flare{{0, 0}, {10, 0}, {10.5, 5}, {-0.5, 5}, {5, 9}};
    CHECK(widest_chord(flare, 0.0)[0] == 5.0);
    CHECK(widest_chord(flare, 2.0)[0] == 0.0);
}

TEST_CASE("metrics are exact closed forms") {
    const Ellipse e{0, 0, 40.0, 20.0, 0};
    const auto m = pool_metrics(e);
    CHECK(m.apparent_area == M_PI * 40.0 * 20.0 / 2.0);
    CHECK(m.aspect_ratio == 0.25);

    const auto semi = pool_metrics({0, 0, 17.0, 17.0, 0});
    CHECK(semi.aspect_ratio == 0.5);

    const auto scaled = pool_metrics(e, 2.0);
    CHECK(scaled.apparent_area == doctest::Approx(4.0 * m.apparent_area).epsilon(1e-15));
    CHECK(scaled.aspect_ratio == m.aspect_ratio);
    CHECK(pool_metrics({0, 0, 10.0, 50.0, 0}).aspect_ratio == doctest::Approx(0.4));
    CHECK_THROWS_AS(pool_metrics({0, 0, 0.0, 5.0, 0}), InvalidInput);
    CHECK_THROWS_AS(pool_metrics(e, 0.0), InvalidInput);
}

TEST_CASE("outline encloses exactly the region pixels") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        BinaryMask m = test::random_polygon_mask(48, 40, rng);
        const Labeling lab = label_components(m, false);
        if (lab.count == 0) continue;
        const auto outline = region_outline(m);
        int first = 0;
        for (std::size_t i = 0; i < lab.labels.size() && !first; ++i) first = lab.labels[i];
        std::vector<std::pair<double, double>> poly;
        for (const auto& p : outline) poly.push_back({double(p.x), double(p.y)});

        std::size_t inside = 0;
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x) {
                const bool in = test::inside_polygon(x + 0.5, y + 0.5, poly);
                inside += in;
                if (lab.labels[static_cast<std::size_t>(y) * m.width + x] == first) CHECK(in);
                else if (in) CHECK(m.at(y, x) == 0); // only holes of the region
            }
        CHECK(shoelace(outline) == doctest::Approx(double(inside)));
    }

    BinaryMask diag(4, 4);
    diag.at(1, 1) = 1;
    diag.at(2, 2) = 1;
    const auto single = region_outline(diag);
    CHECK(single.size() == 4);
    CHECK(shoelace(single) == 1.0);
    CHECK(region_outline(BinaryMask(3, 3)).empty());
}

TEST_CASE("refitting a rasterized fit is stable") {
    for (double a : {30.0, 40.0, 80.0}) {
        const Ellipse truth{100.3, 50.2, a, a / 2.0, 0.0};
        const auto first = analyze_mask(render_half_ellipse(truth, 240, 180));
        REQUIRE(first.fitted == 1);
        const Ellipse e1 = first.pools[0].fit->ellipse;
        CHECK(std::abs(e1.a / truth.a - 1.0) < 0.02);
        CHECK(std::abs(e1.b / truth.b - 1.0) < 0.03);
        const auto second = analyze_mask(render_half_ellipse(e1, 240, 180));
        REQUIRE(second.fitted == 1);
        const Ellipse e2 = second.pools[0].fit->ellipse;
        CHECK(std::abs(e2.a / e1.a - 1.0) < 0.01);
        CHECK(std::abs(e2.b / e1.b - 1.0) < 0.01);
    }
}

TEST_CASE("border-touching regions are excluded from statistics") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SceneSpec spec;
        spec.seed = seed;
        spec.width = spec.height = 256;
        spec.layer_count = 5;
        const Scene scene = generate_scene(spec);
        BinaryMask bg(256, 256);
        for (std::size_t i = 0; i < bg.values.size(); ++i)
            bg.values[i] = scene.truth.mask.labels[i] == PixelClass::background;
        const int all = test::count_components(bg, 1, false, false);
        const int interior = test::count_components(bg, 1, false, true);

        const auto an = analyze_mask(scene.truth.mask);
        CHECK(an.extracted == static_cast<std::size_t>(all));
        CHECK(an.edge == static_cast<std::size_t>(all - interior));
        CHECK(an.edge > 0);
        CHECK(an.edge + an.fitted + an.unfit == an.extracted);
        for (const auto& p : an.pools) CHECK((p.status == PoolStatus::edge) == p.touches_edge);
        for (const auto& p : an.pools)
            if (p.touches_edge) CHECK_FALSE(p.fit.has_value());

        const auto rep = summarize_distributions(an.pools);
        CHECK(rep.edge == an.edge);
        CHECK(rep.area.samples.size() == an.fitted);
    }
}

TEST_CASE("skew-normal moment fit recovers the generating distribution") {
    const SkewNormalFit truth{400.0, 150.0, 4.0};
    const auto s = skew_normal_samples(400.0, 150.0, 4.0, 10000, 11);
    const auto f = fit_skew_normal(s);
    CHECK(std::abs(f.mean() / truth.mean() - 1.0) < 0.05);
    CHECK(std::abs(f.stddev() / truth.stddev() - 1.0) < 0.05);
    CHECK(std::abs(f.skewness() / truth.skewness() - 1.0) < 0.05);
    CHECK(f.alpha > 0.0);
    CHECK_FALSE(f.fallback);

    const auto sym = fit_skew_normal(skew_normal_samples(10.0, 2.0, 0.0, 10000, 12));
    CHECK(std::abs(sym.skewness()) < 0.05);

    const auto neg = fit_skew_normal(skew_normal_samples(0.0, 1.0, -5.0, 10000, 13));
    CHECK(neg.alpha < 0.0);
    CHECK(neg.skewness() < 0.0);
}

TEST_CASE("skew-normal fit edge cases") {
    CHECK_THROWS_AS(fit_skew_normal(std::vector<double>(20, 3.0)), FitError);
    CHECK_THROWS_AS(fit_skew_normal({1, 2, 3}), FitError);
    // Exponential-like data is more skewed than any skew-normal.
    std::vector<double> heavy(100, 0.0);
    heavy.back() = 1000.0;
    const auto f = fit_skew_normal(heavy);
    CHECK(f.fallback);
    CHECK(f.alpha == 0.0);
    CHECK(f.mean() == doctest::Approx(sample_moments(heavy).mean));
}

TEST_CASE("histograms") {
    const std::vector<double> v{0.0, 49.9, 50.0, 120.0, 401.0, -3.0};
    const auto h = make_histogram(v, 50.0);
    CHECK(h.origin == -50.0);
    std::size_t total = 0;
    for (auto c : h.counts) total += c;
    CHECK(total == v.size());
    CHECK(h.counts[0] == 1);
    CHECK(h.counts[1] == 2);
    CHECK(h.counts[2] == 1);
    CHECK(h.bin_start(h.counts.size()) > 401.0);
    CHECK_THROWS_AS(make_histogram(v, 0.0), InvalidInput);

    const auto s = summarize(skew_normal_samples(400.0, 150.0, 4.0, 2000, 3), 50.0);
    CHECK(s.positive_skew);
    CHECK(s.fit.has_value());
    CHECK(s.histogram.counts[s.mode_bin] == *std::max_element(s.histogram.counts.begin(), s.histogram.counts.end()));
}

TEST_CASE("summaries and reports") {
    CHECK_THROWS_AS(summarize_distributions({}), InvalidInput);

    const std::vector<MeltPool> one{fitted_pool(10.0, 10.0)};
    const auto rep = summarize_distributions(one);
    CHECK(rep.fitted == 1);
    CHECK(rep.area.samples[0] == M_PI * 50.0);
    CHECK_FALSE(rep.area.fit.has_value());
    CHECK_FALSE(rep.area.fit_error.empty());

    std::vector<MeltPool> pools;
    for (int i = 0; i < 30; ++i) pools.push_back(fitted_pool(10.0 + i, 12.0 + (i % 7)));
    MeltPool edge;
    edge.status = PoolStatus::edge;
    edge.touches_edge = true;
    pools.push_back(edge);
    const auto r = summarize_distributions(pools);
    CHECK(r.extracted == 31);
    CHECK(r.edge == 1);
    CHECK(r.fitted == 30);

    const auto csv = pools_csv(pools);
    CHECK(csv.rfind("id,status,touches_edge,visible_area,cx,cy,a,b,rms,apparent_area,aspect_ratio\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 32);
    const auto hist = histogram_csv(r);
    CHECK(hist.rfind("metric,bin_start,bin_end,count\n", 0) == 0);

    const auto j = nlohmann::json::parse(statistics_json(r, pools));
    CHECK(j["counts"]["fitted"] == 30);
    CHECK(j["pools"].size() == 31);
    std::size_t sum = 0;
    for (const auto& b : j["apparent_area"]["histogram"]) sum += b["count"].get<std::size_t>();
    CHECK(sum == 30);
}
