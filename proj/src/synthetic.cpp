#include "meltpool/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <json.hpp>
#include <random>

namespace meltpool {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Apparent widening of a track cut obliquely by the section plane.
double rotation_stretch(double degrees) {
    const double c = std::abs(std::cos(degrees * kPi / 180.0));
    return std::min(2.0, 1.0 / std::max(c, 1e-9));
}

} // namespace

double SceneSpec::thickness() const { return layer_thickness > 0.0 ? layer_thickness : double(height) / layer_count; }

void SceneSpec::validate() const {
    if (width < 8 || height < 8) throw InvalidInput("scene canvas must be at least 8x8");
    if (layer_count < 1) throw InvalidInput("scene needs at least one layer");
    if (!(hatch_spacing > 0.0)) throw InvalidInput("hatch spacing must be positive");
    auto check_range = [](const std::pair<double, double>& r, const char* what) {
        if (!(r.first > 0.0) || r.second < r.first) throw InvalidInput(std::string("invalid ") + what + " range");
    };
    check_range(pool_half_width, "pool half-width");
    check_range(pool_depth, "pool depth");
    if (defect_count < 0) throw InvalidInput("defect count must be non-negative");
    if (defect_count > 0) check_range(defect_radius, "defect radius");
    if (noise_amplitude < 0.0) throw InvalidInput("noise amplitude must be non-negative");
    if (!(contrast > 0.0)) throw InvalidInput("contrast must be positive");
    if (2.0 * pool_half_width.first > width || pool_depth.first > height)
        throw InvalidInput("canvas too small for one pool");
    palette.validate();
    // Each row must be gap-free down to the next layer's surface.
    const double t = thickness();
    const double ratio = t / pool_depth.first;
    const double reach = ratio >= 1.0 ? 0.0 : pool_half_width.first * std::sqrt(1.0 - ratio * ratio);
    if (reach < 0.55 * hatch_spacing)
        throw InvalidInput("pools too narrow or shallow to cover each layer; widen pools or reduce spacing");
}

std::size_t GroundTruth::visible_pool_count() const {
    return static_cast<std::size_t>(
        std::count_if(regions.begin(), regions.end(), [](const VisibleRegion& r) { return r.owner >= 0; }));
}

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const int W = spec.width, H = spec.height;
    const double t = spec.thickness();

    Scene scene;
    GroundTruth& truth = scene.truth;
    truth.owner.assign(static_cast<std::size_t>(W) * H, -1);

    for (int layer = 0; layer < spec.layer_count; ++layer) {
        const double f = rotation_stretch(layer * spec.layer_rotation_deg);
        const double surface = H - (layer + 1) * t;
        const double spacing = spec.hatch_spacing * f;
        double cx = -uniform(0.0, spacing) - spacing;
        while (cx - spec.pool_half_width.second * f < W + spacing) {
            TruePool p;
            p.id = static_cast<int>(truth.pools.size());
            p.layer = layer;
            p.cx = cx + uniform(-0.05, 0.05) * spacing;
            p.cy = surface;
            p.a = uniform(spec.pool_half_width.first, spec.pool_half_width.second) * f;
            p.b = uniform(spec.pool_depth.first, spec.pool_depth.second);
            const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - p.a)));
            const int x1 = std::min(W - 1, static_cast<int>(std::ceil(p.cx + p.a)));
            const int y0 = std::max(0, static_cast<int>(std::floor(p.cy)));
            const int y1 = std::min(H - 1, static_cast<int>(std::ceil(p.cy + p.b)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dx = (x + 0.5 - p.cx) / p.a, dy = (y + 0.5 - p.cy) / p.b;
                    if (y + 0.5 >= p.cy && dx * dx + dy * dy <= 1.0) truth.owner[static_cast<std::size_t>(y) * W + x] = p.id;
                }
            truth.pools.push_back(p);
            cx += spacing;
        }
    }

    // Boundary: of two 4-adjacent pixels with different owners, the later one.
    AnnotationMask& mask = truth.mask;
    mask = AnnotationMask(W, H);
    auto own = [&](int y, int x) { return truth.owner[static_cast<std::size_t>(y) * W + x]; };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int o = own(y, x);
            const bool edge = (x > 0 && own(y, x - 1) < o) || (x + 1 < W && own(y, x + 1) < o) ||
                              (y > 0 && own(y - 1, x) < o) || (y + 1 < H && own(y + 1, x) < o);
            if (edge) mask.at(y, x) = PixelClass::boundary;
        }

    for (int k = 0; k < spec.defect_count; ++k) {
        Defect d;
        d.r = uniform(spec.defect_radius.first, spec.defect_radius.second);
        d.cx = uniform(d.r, W - d.r);
        d.cy = uniform(d.r, H - d.r);
        for (int y = std::max(0, int(d.cy - d.r - 1)); y <= std::min(H - 1, int(d.cy + d.r + 1)); ++y)
            for (int x = std::max(0, int(d.cx - d.r - 1)); x <= std::min(W - 1, int(d.cx + d.r + 1)); ++x) {
                const double dx = x + 0.5 - d.cx, dy = y + 0.5 - d.cy;
                if (dx * dx + dy * dy <= d.r * d.r) mask.at(y, x) = PixelClass::defect;
            }
        truth.defects.push_back(d);
    }

    // Visible interiors.
    std::vector<char> seen(mask.labels.size(), 0);
    for (int y0 = 0; y0 < H; ++y0)
        for (int x0 = 0; x0 < W; ++x0) {
            const std::size_t i0 = static_cast<std::size_t>(y0) * W + x0;
            if (seen[i0] || mask.labels[i0] != PixelClass::background) continue;
            VisibleRegion r;
            r.owner = truth.owner[i0];
            r.seed_x = x0;
            r.seed_y = y0;
            std::deque<std::pair<int, int>> q{{x0, y0}};
            seen[i0] = 1;
            while (!q.empty()) {
                const auto [x, y] = q.front();
                q.pop_front();
                ++r.area;
                if (x == 0 || y == 0 || x == W - 1 || y == H - 1) r.touches_edge = true;
                const int nx[4] = {x - 1, x + 1, x, x};
                const int ny[4] = {y, y, y - 1, y + 1};
                for (int k = 0; k < 4; ++k) {
                    if (nx[k] < 0 || ny[k] < 0 || nx[k] >= W || ny[k] >= H) continue;
                    const std::size_t j = static_cast<std::size_t>(ny[k]) * W + nx[k];
                    if (seen[j] || mask.labels[j] != PixelClass::background) continue;
                    seen[j] = 1;
                    q.push_back({nx[k], ny[k]});
                }
            }
            truth.regions.push_back(r);
        }

    // Intensity: bright interiors darkening toward the arcs, dark arcs and voids.
    std::vector<int> dist(mask.labels.size(), 1 << 20);
    std::deque<std::size_t> q;
    for (std::size_t i = 0; i < mask.labels.size(); ++i)
        if (mask.labels[i] == PixelClass::boundary) {
            dist[i] = 0;
            q.push_back(i);
        }
    while (!q.empty()) {
        const std::size_t i = q.front();
        q.pop_front();
        if (dist[i] >= 4) continue;
        const int x = static_cast<int>(i % W), y = static_cast<int>(i / W);
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
            if (nx[k] < 0 || ny[k] < 0 || nx[k] >= W || ny[k] >= H) continue;
            const std::size_t j = static_cast<std::size_t>(ny[k]) * W + nx[k];
            if (dist[j] > dist[i] + 1) {
                dist[j] = dist[i] + 1;
                q.push_back(j);
            }
        }
    }
    std::vector<double> tone(truth.pools.size());
    for (double& v : tone) v = uniform(172.0, 198.0);

    RawImage& img = scene.image;
    img = RawImage(W, H, 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v;
        switch (mask.labels[i]) {
        case PixelClass::boundary: v = 58.0; break;
        case PixelClass::defect: v = 22.0; break;
        default: {
            const int o = truth.owner[i];
            v = o < 0 ? 150.0 : tone[static_cast<std::size_t>(o)];
            if (dist[i] < (1 << 20)) v -= 45.0 * std::exp(-(dist[i] - 1) / 1.2);
        }
        }
        v = 128.0 + spec.contrast * (v - 128.0) + spec.brightness;
        v += spec.noise_amplitude * noise(rng);
        img.data[i] = std::clamp(std::round(v), 0.0, 255.0);
    }
    return scene;
}

std::string truth_to_json(const GroundTruth& truth, const SceneSpec& spec) {
    using nlohmann::json;
    json pools = json::array();
    for (const auto& p : truth.pools)
        pools.push_back({{"id", p.id}, {"layer", p.layer}, {"cx", p.cx}, {"cy", p.cy}, {"a", p.a}, {"b", p.b}});
    json regions = json::array();
    for (const auto& r : truth.regions)
        regions.push_back({{"owner", r.owner},
                           {"area", r.area},
                           {"touches_edge", r.touches_edge},
                           {"seed", {r.seed_x, r.seed_y}}});
    json defects = json::array();
    for (const auto& d : truth.defects) defects.push_back({{"cx", d.cx}, {"cy", d.cy}, {"r", d.r}});
    const json doc = {{"spec",
                       {{"seed", spec.seed},
                        {"width", spec.width},
                        {"height", spec.height},
                        {"layer_count", spec.layer_count},
                        {"hatch_spacing", spec.hatch_spacing},
                        {"layer_thickness", spec.thickness()},
                        {"layer_rotation_deg", spec.layer_rotation_deg},
                        {"defect_count", spec.defect_count},
                        {"noise_amplitude", spec.noise_amplitude}}},
                      {"pools", pools},
                      {"regions", regions},
                      {"visible_pool_count", truth.visible_pool_count()},
                      {"defects", defects}};
    return doc.dump(2);
}

SceneSpec small_scene_spec(int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    SceneSpec s;
    s.seed = seed;
    s.width = s.height = size;
    s.layer_count = 3 + static_cast<int>(rng() % 4);
    const double t = double(size) / s.layer_count;
    s.hatch_spacing = 1.2 * t;
    s.pool_half_width = {0.9 * t, 1.2 * t};
    s.pool_depth = {1.6 * t, 2.05 * t};
    s.defect_count = std::max(1, size / 32);
    s.defect_radius = {1.0, std::max(1.5, size / 64.0)};
    s.noise_amplitude = uniform(3.0, 18.0);
    s.contrast = uniform(0.5, 1.2);
    s.brightness = uniform(-30.0, 30.0);
    s.layer_rotation_deg = uniform(0.0, 180.0);
    return s;
}

std::vector<ImagePair> synthetic_pairs(std::size_t count, int size, std::uint64_t seed) {
    std::vector<ImagePair> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const Scene s = generate_scene(small_scene_spec(size, seed * 1000003ULL + k));
        out.push_back({to_model_range(s.image), to_model_range(encode_overlay(s.truth.mask, {}))});
    }
    return out;
}

} // namespace meltpool
