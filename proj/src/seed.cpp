#include "meltpool/seed.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace meltpool {

std::string to_string(CorrectionKind kind) { return kind == CorrectionKind::split ? "split" : "merge"; }

CorrectionKind correction_kind_from_string(const std::string& s) {
    if (s == "split") return CorrectionKind::split;
    if (s == "merge") return CorrectionKind::merge;
    throw InvalidInput("unknown correction kind: " + s);
}

// ---------------------------------------------------------------------------
// Smoothing and thresholding

std::vector<double> gaussian_kernel(int kernel_size, double sigma) {
    if (kernel_size < 1 || kernel_size % 2 == 0) throw InvalidInput("Gaussian kernel size must be odd and >= 1");
    if (!(sigma > 0.0)) throw InvalidInput("Gaussian sigma must be positive");
    const int r = kernel_size / 2;
    std::vector<double> k1(kernel_size);
    for (int i = -r; i <= r; ++i) k1[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    const double s = std::accumulate(k1.begin(), k1.end(), 0.0);
    for (double& v : k1) v /= s;
    std::vector<double> k2(static_cast<std::size_t>(kernel_size) * kernel_size);
    for (int y = 0; y < kernel_size; ++y)
        for (int x = 0; x < kernel_size; ++x) k2[y * kernel_size + x] = k1[y] * k1[x];
    return k2;
}

namespace {

// Mirror without repeating the edge sample (…cb|abc|ba…).
int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

std::vector<double> gaussian_1d(int kernel_size, double sigma) {
    const auto k2 = gaussian_kernel(kernel_size, sigma);
    std::vector<double> k1(kernel_size);
    // Row sums of the separable product recover the 1-D weights.
    for (int y = 0; y < kernel_size; ++y)
        for (int x = 0; x < kernel_size; ++x) k1[y] += k2[y * kernel_size + x];
    return k1;
}

} // namespace

RawImage gaussian_smooth(const RawImage& img, int kernel_size, double sigma) {
    const auto k = gaussian_1d(kernel_size, sigma);
    const int r = kernel_size / 2;
    RawImage tmp(img.width, img.height, img.channels);
    RawImage out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int d = -r; d <= r; ++d) s += k[d + r] * img.at(y, reflect101(x + d, img.width), c);
                tmp.at(y, x, c) = s;
            }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int d = -r; d <= r; ++d) s += k[d + r] * tmp.at(reflect101(y + d, img.height), x, c);
                out.at(y, x, c) = s;
            }
    return out;
}

BinaryMask threshold_mean(const RawImage& img) {
    if (img.channels != 1) throw InvalidInput("threshold_mean requires a single-channel image");
    const double mean = std::accumulate(img.data.begin(), img.data.end(), 0.0) / static_cast<double>(img.data.size());
    BinaryMask mask(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) mask.values[i] = img.data[i] > mean ? 1 : 0;
    return mask;
}

// ---------------------------------------------------------------------------
// Border following

namespace {

// Clockwise on screen (rows grow downward).
constexpr std::array<int, 8> kDi = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr std::array<int, 8> kDj = {1, 1, 0, -1, -1, -1, 0, 1};

int direction_of(int di, int dj) {
    for (int k = 0; k < 8; ++k)
        if (kDi[k] == di && kDj[k] == dj) return k;
    return -1;
}

} // namespace

ContourSet extract_contours(const BinaryMask& mask) {
    const int H = mask.height + 2;
    const int W = mask.width + 2;
    std::vector<int> f(static_cast<std::size_t>(H) * W, 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) f[(y + 1) * W + x + 1] = mask.at(y, x) ? 1 : 0;
    auto F = [&](int i, int j) -> int& { return f[static_cast<std::size_t>(i) * W + j]; };

    ContourSet contours;
    // Border 1 is the frame: a hole border with no parent.
    auto is_hole_border = [&](int nbd) { return nbd == 1 ? true : contours[nbd - 2].is_hole; };
    auto parent_of = [&](int nbd) { return nbd == 1 ? -1 : contours[nbd - 2].parent; };

    int nbd = 1;
    for (int i = 1; i < H - 1; ++i) {
        int lnbd = 1;
        for (int j = 1; j < W - 1; ++j) {
            const int fij = F(i, j);
            if (fij == 0) continue;
            int i2 = 0, j2 = 0;
            bool start = false;
            bool hole = false;
            if (fij == 1 && F(i, j - 1) == 0) {
                start = true;
                i2 = i;
                j2 = j - 1;
            } else if (fij >= 1 && F(i, j + 1) == 0) {
                start = true;
                hole = true;
                i2 = i;
                j2 = j + 1;
                if (fij > 1) lnbd = fij;
            }
            if (start) {
                ++nbd;
                Contour c;
                c.is_hole = hole;
                const bool prev_hole = is_hole_border(lnbd);
                // Outer-in-outer and hole-in-hole share the parent of the previous border.
                c.parent = (hole == prev_hole) ? parent_of(lnbd) : (lnbd == 1 ? -1 : lnbd - 2);
                contours.push_back(c);
                const std::size_t idx = contours.size() - 1;

                // Clockwise search for the first nonzero neighbour.
                int d0 = direction_of(i2 - i, j2 - j);
                int i1 = -1, j1 = -1;
                for (int s = 0; s < 8; ++s) {
                    const int k = (d0 + s) % 8;
                    if (F(i + kDi[k], j + kDj[k]) != 0) {
                        i1 = i + kDi[k];
                        j1 = j + kDj[k];
                        break;
                    }
                }
                if (i1 < 0) {
                    F(i, j) = -nbd;
                    contours[idx].points.push_back({j - 1, i - 1});
                } else {
                    i2 = i1;
                    j2 = j1;
                    int i3 = i, j3 = j;
                    for (;;) {
                        contours[idx].points.push_back({j3 - 1, i3 - 1});
                        const int d = direction_of(i2 - i3, j2 - j3);
                        int i4 = -1, j4 = -1;
                        bool east_zero_examined = false;
                        for (int s = 1; s <= 8; ++s) {
                            const int k = ((d - s) % 8 + 8) % 8;
                            const int ii = i3 + kDi[k], jj = j3 + kDj[k];
                            if (F(ii, jj) != 0) {
                                i4 = ii;
                                j4 = jj;
                                break;
                            }
                            if (k == 0) east_zero_examined = true;
                        }
                        if (east_zero_examined)
                            F(i3, j3) = -nbd;
                        else if (F(i3, j3) == 1)
                            F(i3, j3) = nbd;
                        if (i4 == i && j4 == j && i3 == i1 && j3 == j1) break;
                        i2 = i3;
                        j2 = j3;
                        i3 = i4;
                        j3 = j4;
                    }
                }
            }
            const int now = F(i, j);
            if (now != 1) lnbd = std::abs(now);
        }
    }
    return contours;
}

namespace {

// Pixels enclosed by a closed pixel chain (chain pixels included), found by
// flooding the complement from outside the chain's bounding box.
std::vector<Point> enclosed_pixels(const std::vector<Point>& chain, bool include_chain) {
    if (chain.empty()) return {};
    int x0 = chain[0].x, x1 = x0, y0 = chain[0].y, y1 = y0;
    for (const auto& p : chain) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    const int W = x1 - x0 + 3;
    const int H = y1 - y0 + 3;
    std::vector<std::uint8_t> state(static_cast<std::size_t>(W) * H, 0); // 1 = wall, 2 = outside
    for (const auto& p : chain) state[(p.y - y0 + 1) * W + (p.x - x0 + 1)] = 1;
    std::deque<int> queue{0};
    state[0] = 2;
    while (!queue.empty()) {
        const int idx = queue.front();
        queue.pop_front();
        const int y = idx / W, x = idx % W;
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            const int nx = x + dx[k], ny = y + dy[k];
            if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
            const int n = ny * W + nx;
            if (state[n] == 0) {
                state[n] = 2;
                queue.push_back(n);
            }
        }
    }
    std::vector<Point> out;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const auto s = state[y * W + x];
            if (s == 0 || (s == 1 && include_chain)) out.push_back({x + x0 - 1, y + y0 - 1});
        }
    return out;
}

} // namespace

BinaryMask rasterize_contours(const ContourSet& contours, int width, int height) {
    BinaryMask mask(width, height);
    // Parents precede children in discovery order, so a single pass nests correctly.
    for (const auto& c : contours) {
        const auto pix = enclosed_pixels(c.points, !c.is_hole);
        for (const auto& p : pix)
            if (mask.inside(p.y, p.x)) mask.at(p.y, p.x) = c.is_hole ? 0 : 1;
    }
    return mask;
}

Labeling label_components(const BinaryMask& mask, bool eight_connected) {
    Labeling out;
    out.labels.assign(mask.values.size(), 0);
    std::vector<int> stack;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * mask.width + x;
            if (!mask.values[idx] || out.labels[idx]) continue;
            const int label = ++out.count;
            out.labels[idx] = label;
            stack.assign(1, static_cast<int>(idx));
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int cy = cur / mask.width, cx = cur % mask.width;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        if (!eight_connected && dx != 0 && dy != 0) continue;
                        const int ny = cy + dy, nx = cx + dx;
                        if (!mask.inside(ny, nx)) continue;
                        const int n = ny * mask.width + nx;
                        if (mask.values[n] && !out.labels[n]) {
                            out.labels[n] = label;
                            stack.push_back(n);
                        }
                    }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corrections

namespace {

// 4-connected digital segment: consecutive pixels share an edge.
std::vector<Point> line4(Point a, Point b) {
    std::vector<Point> out{a};
    const int dx = std::abs(b.x - a.x), dy = std::abs(b.y - a.y);
    const int sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
    int x = a.x, y = a.y;
    int ix = 0, iy = 0;
    while (ix < dx || iy < dy) {
        // Step along the axis whose next midpoint lies closer to the ideal line.
        if ((0.5 + ix) * dy < (0.5 + iy) * dx) {
            x += sx;
            ++ix;
        } else {
            y += sy;
            ++iy;
        }
        out.push_back({x, y});
    }
    return out;
}

// 8-connected Bresenham segment.
std::vector<Point> line8(Point a, Point b) {
    std::vector<Point> out;
    int dx = std::abs(b.x - a.x), dy = -std::abs(b.y - a.y);
    const int sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
    int err = dx + dy;
    int x = a.x, y = a.y;
    for (;;) {
        out.push_back({x, y});
        if (x == b.x && y == b.y) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y += sy;
        }
    }
    return out;
}

long dist2(Point a, Point b) {
    const long dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

} // namespace

BinaryMask apply_merge(const BinaryMask& mask, Point p, int search_radius) {
    if (!mask.inside(p.y, p.x)) throw CorrectionError("merge point outside the image");
    const auto lab = label_components(mask, false);
    const long r2 = static_cast<long>(search_radius) * search_radius;

    struct Candidate {
        long d;
        Point q;
        int label;
    };
    std::vector<Candidate> near;
    for (int y = std::max(0, p.y - search_radius); y <= std::min(mask.height - 1, p.y + search_radius); ++y)
        for (int x = std::max(0, p.x - search_radius); x <= std::min(mask.width - 1, p.x + search_radius); ++x) {
            const int l = lab.labels[static_cast<std::size_t>(y) * mask.width + x];
            const long d = dist2({x, y}, p);
            if (l && d <= r2) near.push_back({d, {x, y}, l});
        }
    std::stable_sort(near.begin(), near.end(), [](const Candidate& a, const Candidate& b) { return a.d < b.d; });

    // For each region near the point keep its closest pixel.
    std::vector<Candidate> closest;
    for (const auto& c : near)
        if (std::none_of(closest.begin(), closest.end(), [&](const Candidate& o) { return o.label == c.label; }))
            closest.push_back(c);

    struct Pair {
        long cost;
        std::size_t a, b;
    };
    std::vector<Pair> pairs;
    for (std::size_t a = 0; a < closest.size(); ++a)
        for (std::size_t b = a + 1; b < closest.size(); ++b)
            pairs.push_back({closest[a].d + closest[b].d + dist2(closest[a].q, closest[b].q), a, b});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.cost < y.cost; });

    for (const auto& pr : pairs) {
        const auto& A = closest[pr.a];
        const auto& B = closest[pr.b];
        // Route the bridge through the clicked point so the erased wall is the one marked.
        auto path = line4(A.q, p);
        const auto tail = line4(p, B.q);
        path.insert(path.end(), tail.begin() + 1, tail.end());

        bool ok = true;
        for (const auto& q : path) {
            const int l = lab.labels[static_cast<std::size_t>(q.y) * mask.width + q.x];
            if (l && l != A.label && l != B.label) ok = false;
            constexpr int dx[4] = {1, -1, 0, 0};
            constexpr int dy[4] = {0, 0, 1, -1};
            for (int k = 0; k < 4 && ok; ++k) {
                const int nx = q.x + dx[k], ny = q.y + dy[k];
                if (!mask.inside(ny, nx)) continue;
                const int nl = lab.labels[static_cast<std::size_t>(ny) * mask.width + nx];
                if (nl && nl != A.label && nl != B.label) ok = false;
            }
            if (!ok) break;
        }
        if (!ok) continue;
        BinaryMask out = mask;
        for (const auto& q : path) out.at(q.y, q.x) = 1;
        return out;
    }
    throw CorrectionError("no separating boundary between two regions within the merge search radius");
}

BinaryMask apply_split(const BinaryMask& mask, Point p) {
    if (!mask.inside(p.y, p.x) || !mask.at(p.y, p.x))
        throw CorrectionError("split point is not inside a foreground region");
    const auto before = label_components(mask, false);
    const int region = before.labels[static_cast<std::size_t>(p.y) * mask.width + p.x];

    // Boundary pixels of the enclosing region: background pixels, including a
    // virtual frame one pixel outside the image.
    auto is_wall = [&](int x, int y) { return !mask.inside(y, x) || !mask.at(y, x); };

    Point q1{};
    long best = std::numeric_limits<long>::max();
    for (int y = -1; y <= mask.height; ++y)
        for (int x = -1; x <= mask.width; ++x) {
            if (!is_wall(x, y)) continue;
            const long d = dist2({x, y}, p);
            if (d < best) {
                best = d;
                q1 = {x, y};
            }
        }
    Point q2{};
    best = std::numeric_limits<long>::max();
    const long ux = q1.x - p.x, uy = q1.y - p.y;
    for (int y = -1; y <= mask.height; ++y)
        for (int x = -1; x <= mask.width; ++x) {
            if (!is_wall(x, y)) continue;
            // Opposite side of the point from the first wall pixel.
            if ((x - p.x) * ux + (y - p.y) * uy >= 0) continue;
            const long d = dist2({x, y}, p);
            if (d < best) {
                best = d;
                q2 = {x, y};
            }
        }
    if (best == std::numeric_limits<long>::max()) throw CorrectionError("split point has no opposing boundary");

    auto cut = line8(q1, p);
    const auto tail = line8(p, q2);
    cut.insert(cut.end(), tail.begin() + 1, tail.end());
    BinaryMask out = mask;
    for (const auto& q : cut)
        if (mask.inside(q.y, q.x)) out.at(q.y, q.x) = 0;

    // The cut must divide exactly the clicked region into two parts.
    const auto after = label_components(out, false);
    std::vector<int> pieces;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        if (before.labels[i] == region && after.labels[i] &&
            std::find(pieces.begin(), pieces.end(), after.labels[i]) == pieces.end())
            pieces.push_back(after.labels[i]);
    if (pieces.size() != 2) throw CorrectionError("split cut does not divide the region into two parts");
    return out;
}

BinaryMask apply_corrections(const BinaryMask& mask, std::vector<CorrectionPoint> points,
                             const CorrectionOptions& options) {
    for (const auto& pt : points)
        if (!mask.inside(pt.position.y, pt.position.x)) throw CorrectionError("correction point outside the image");
    std::stable_sort(points.begin(), points.end(),
                     [](const CorrectionPoint& a, const CorrectionPoint& b) { return a.created_at < b.created_at; });
    BinaryMask out = mask;
    for (const auto& pt : points) {
        out = pt.kind == CorrectionKind::merge ? apply_merge(out, pt.position, options.merge_search_radius)
                                               : apply_split(out, pt.position);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Seed annotation

AnnotationMask seed_annotation(const RawImage& img, const SeedOptions& options) {
    const RawImage gray = to_luminance(img);
    const RawImage smooth = gaussian_smooth(gray, options.kernel_size, options.sigma);
    const BinaryMask bright = threshold_mean(smooth);
    const double mean = std::accumulate(smooth.data.begin(), smooth.data.end(), 0.0) / smooth.data.size();

    BinaryMask dark(bright.width, bright.height);
    for (std::size_t i = 0; i < dark.values.size(); ++i) dark.values[i] = bright.values[i] ? 0 : 1;
    const auto lab = label_components(dark, true);

    std::vector<long> area(lab.count + 1, 0);
    std::vector<double> intensity(lab.count + 1, 0.0);
    for (std::size_t i = 0; i < lab.labels.size(); ++i) {
        area[lab.labels[i]] += 1;
        intensity[lab.labels[i]] += smooth.data[i];
    }
    std::vector<bool> is_defect(lab.count + 1, false);
    for (int l = 1; l <= lab.count; ++l) {
        if (area[l] >= options.defect_max_area || intensity[l] / area[l] >= mean) continue;
        // Filled area: the component plus anything it encloses.
        BinaryMask comp(dark.width, dark.height);
        for (std::size_t i = 0; i < lab.labels.size(); ++i) comp.values[i] = lab.labels[i] == l;
        const auto contours = extract_contours(comp);
        long filled = 0;
        for (const auto& c : contours)
            if (!c.is_hole) filled += static_cast<long>(enclosed_pixels(c.points, true).size());
        is_defect[l] = filled < options.defect_max_area;
    }

    AnnotationMask out(img.width, img.height);
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        if (bright.values[i])
            out.labels[i] = PixelClass::background;
        else
            out.labels[i] = is_defect[lab.labels[i]] ? PixelClass::defect : PixelClass::boundary;
    }
    return out;
}

BinaryMask region_mask(const AnnotationMask& mask) {
    BinaryMask out(mask.width, mask.height);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = mask.labels[i] == PixelClass::background;
    return out;
}

AnnotationMask merge_region_mask(const AnnotationMask& original, const BinaryMask& before, const BinaryMask& after) {
    AnnotationMask out = original;
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        if (!before.values[i] && after.values[i]) out.labels[i] = PixelClass::background;
        if (before.values[i] && !after.values[i]) out.labels[i] = PixelClass::boundary;
    }
    return out;
}

} // namespace meltpool
