#pragma once
// Independent reference implementations used only by the test suites.

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "meltpool/geometry.hpp"
#include "meltpool/seed.hpp"

namespace test {

using meltpool::BinaryMask;

// Flood fill with an explicit queue; `value` selects which pixels participate.
inline int count_components(const BinaryMask& m, std::uint8_t value, bool eight, bool skip_border_touching) {
    std::vector<char> seen(m.values.size(), 0);
    int count = 0;
    for (int y0 = 0; y0 < m.height; ++y0)
        for (int x0 = 0; x0 < m.width; ++x0) {
            if (seen[y0 * m.width + x0] || m.at(y0, x0) != value) continue;
            bool touches = false;
            std::deque<std::pair<int, int>> q{{x0, y0}};
            seen[y0 * m.width + x0] = 1;
            while (!q.empty()) {
                auto [x, y] = q.front();
                q.pop_front();
                if (x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1) touches = true;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0)) continue;
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
                        if (seen[ny * m.width + nx] || m.at(ny, nx) != value) continue;
                        seen[ny * m.width + nx] = 1;
                        q.push_back({nx, ny});
                    }
            }
            if (!(skip_border_touching && touches)) ++count;
        }
    return count;
}

inline int count_regions4(const BinaryMask& m) { return count_components(m, 1, false, false); }
inline int count_holes(const BinaryMask& m) { return count_components(m, 0, false, true); }

inline std::set<std::pair<int, int>> boundary_pixels(const BinaryMask& m) {
    std::set<std::pair<int, int>> out;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            const bool edge = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1 || !m.at(y - 1, x) ||
                              !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
            if (edge) out.insert({x, y});
        }
    return out;
}

inline bool same_cycle(const std::vector<meltpool::Point>& a, const std::vector<meltpool::Point>& b) {
    if (a.size() != b.size()) return false;
    if (a.empty()) return true;
    for (std::size_t s = 0; s < b.size(); ++s) {
        bool ok = true;
        for (std::size_t i = 0; i < a.size() && ok; ++i) ok = a[i] == b[(i + s) % b.size()];
        if (ok) return true;
    }
    return false;
}

inline bool inside_polygon(double px, double py, const std::vector<std::pair<double, double>>& poly) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto [xi, yi] = poly[i];
        const auto [xj, yj] = poly[j];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
}

inline std::vector<std::pair<double, double>> random_polygon(std::mt19937& rng, double cx, double cy, double r) {
    std::uniform_real_distribution<double> u(0.5, 1.0);
    const int n = 3 + static_cast<int>(rng() % 6);
    std::vector<std::pair<double, double>> poly;
    for (int k = 0; k < n; ++k) {
        const double t = 2.0 * M_PI * k / n;
        const double rr = r * u(rng);
        poly.push_back({cx + rr * std::cos(t), cy + rr * std::sin(t)});
    }
    return poly;
}

/// One to three rasterized star-shaped polygons, sometimes with a polygonal hole.
inline BinaryMask random_polygon_mask(int w, int h, std::mt19937& rng) {
    BinaryMask m(w, h);
    std::uniform_real_distribution<double> ux(8.0, w - 8.0), uy(8.0, h - 8.0), ur(4.0, 14.0);
    const int count = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < count; ++k) {
        const auto poly = random_polygon(rng, ux(rng), uy(rng), ur(rng));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (inside_polygon(x + 0.5, y + 0.5, poly)) m.at(y, x) = 1;
    }
    if (rng() % 2) {
        const auto hole = random_polygon(rng, ux(rng), uy(rng), 3.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (inside_polygon(x + 0.5, y + 0.5, hole)) m.at(y, x) = 0;
    }
    return m;
}

struct CorrectionCase {
    BinaryMask mask;
    meltpool::CorrectionPoint point;
};

inline void fill(BinaryMask& m, int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
}

/// Merge: two blocks separated by a 1-2 px wall with the point on the wall.
/// Split: a dumbbell with the point at the middle of its neck.
inline CorrectionCase random_correction_case(std::mt19937& rng, bool merge) {
    auto ri = [&](int lo, int hi) { return lo + static_cast<int>(rng() % (hi - lo + 1)); };
    const bool vertical = rng() % 2;
    CorrectionCase c;
    c.point.author = "oracle";
    c.point.created_at = "2024-01-01T00:00:00Z";
    c.point.image_id = "synthetic";
    if (merge) {
        const int wall = ri(1, 2);
        const int a = ri(6, 16), b = ri(6, 16), len = ri(8, 20);
        const int W = a + wall + b + 6, H = len + 6;
        BinaryMask m(W, H);
        fill(m, 3, 3, 3 + a - 1, 3 + len - 1);
        fill(m, 3 + a + wall, 3, 3 + a + wall + b - 1, 3 + len - 1);
        const int px = 3 + a + ri(0, wall - 1), py = 3 + ri(1, len - 2);
        c.point.kind = meltpool::CorrectionKind::merge;
        c.point.position = {px, py};
        if (vertical) {
            BinaryMask t(H, W);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) t.at(x, y) = m.at(y, x);
            m = t;
            c.point.position = {py, px};
        }
        c.mask = m;
    } else {
        const int a = ri(8, 16), b = ri(8, 16), len = ri(10, 18);
        const int neck_w = ri(2, 5), neck_len = ri(neck_w + 3, neck_w + 8);
        const int W = a + neck_len + b + 6, H = len + 6;
        BinaryMask m(W, H);
        fill(m, 3, 3, 3 + a - 1, 3 + len - 1);
        fill(m, 3 + a + neck_len, 3, 3 + a + neck_len + b - 1, 3 + len - 1);
        const int ny0 = 3 + (len - neck_w) / 2;
        fill(m, 3 + a, ny0, 3 + a + neck_len - 1, ny0 + neck_w - 1);
        const int px = 3 + a + neck_len / 2, py = ny0 + (neck_w - 1) / 2;
        c.point.kind = meltpool::CorrectionKind::split;
        c.point.position = {px, py};
        if (vertical) {
            BinaryMask t(H, W);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) t.at(x, y) = m.at(y, x);
            m = t;
            c.point.position = {py, px};
        }
        c.mask = m;
    }
    return c;
}

// Points on the lower half (y >= cy) of an axis-aligned ellipse, end to end.
inline std::vector<meltpool::Vec2> parametric_half_ellipse(double cx, double cy, double a, double b, int n) {
    std::vector<meltpool::Vec2> pts;
    for (int i = 0; i < n; ++i) {
        const double t = M_PI * i / (n - 1);
        pts.push_back({cx + a * std::cos(t), cy + b * std::sin(t)});
    }
    return pts;
}

// Skew-normal draws via the |Z0| construction.
inline std::vector<double> skew_normal_samples(double xi, double omega, double alpha, int n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    const double d = alpha / std::sqrt(1.0 + alpha * alpha);
    std::vector<double> out;
    for (int i = 0; i < n; ++i) out.push_back(xi + omega * (d * std::abs(z(rng)) + std::sqrt(1.0 - d * d) * z(rng)));
    return out;
}

// Direct evaluation of the windowed statistics with the 2-D Gaussian built
// from scratch at one position whose window lies inside the image.
inline double direct_ssim(const meltpool::RawImage& a, const meltpool::RawImage& b, int cx, int cy) {
    const int r = 5;
    const double sigma = 1.5, c1 = 6.5025, c2 = 58.5225;
    double wsum = 0.0, ma = 0.0, mb = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            wsum += w;
            ma += w * a.at(cy + dy, cx + dx);
            mb += w * b.at(cy + dy, cx + dx);
        }
    ma /= wsum;
    mb /= wsum;
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) / wsum;
            const double da = a.at(cy + dy, cx + dx) - ma, db = b.at(cy + dy, cx + dx) - mb;
            va += w * da * da;
            vb += w * db * db;
            cov += w * da * db;
        }
    return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

} // namespace test
