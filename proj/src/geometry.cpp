#include "meltpool/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace meltpool {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<Vec2> to_vec(const std::vector<Point>& poly) {
    std::vector<Vec2> out;
    out.reserve(poly.size());
    for (const auto& p : poly) out.push_back({double(p.x), double(p.y)});
    return out;
}

// Parameters: cx, [cy], a, b, [theta]. When cy is not fitted it stays at
// the chord level.
struct ArcProblem {
    const std::vector<Vec2>& pts;
    bool fit_cy;
    bool rotate;
    double fixed_cy;

    int dims() const { return 3 + fit_cy + rotate; }
    int ia() const { return fit_cy ? 2 : 1; }

    Ellipse unpack(const Eigen::VectorXd& p) const {
        const int k = ia();
        return {p[0], fit_cy ? p[1] : fixed_cy, p[k], p[k + 1], rotate ? p[k + 2] : 0.0};
    }

    void evaluate(const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
        const Ellipse e = unpack(p);
        const double c = std::cos(e.theta), s = std::sin(e.theta);
        const double a2 = e.a * e.a, b2 = e.b * e.b;
        const int k = ia();
        r.resize(static_cast<Eigen::Index>(pts.size()));
        if (J) J->resize(static_cast<Eigen::Index>(pts.size()), dims());
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double dx = pts[i].x - e.cx, dy = pts[i].y - e.cy;
            const double u = dx * c + dy * s;
            const double v = -dx * s + dy * c;
            const auto row = static_cast<Eigen::Index>(i);
            r[row] = u * u / a2 + v * v / b2 - 1.0;
            if (!J) continue;
            const double ru = 2.0 * u / a2, rv = 2.0 * v / b2;
            (*J)(row, 0) = ru * -c + rv * s;
            if (fit_cy) (*J)(row, 1) = ru * -s + rv * -c;
            (*J)(row, k) = -2.0 * u * u / (a2 * e.a);
            (*J)(row, k + 1) = -2.0 * v * v / (b2 * e.b);
            if (rotate) (*J)(row, k + 2) = ru * v + rv * -u;
        }
    }
};

} // namespace

std::vector<Point> region_outline(const BinaryMask& mask) {
    const int W = mask.width, H = mask.height;
    auto in = [&](int x, int y) { return x >= 0 && y >= 0 && x < W && y < H && mask.values[static_cast<std::size_t>(y) * W + x]; };
    int sx = -1, sy = -1;
    for (int y = 0; y < H && sy < 0; ++y)
        for (int x = 0; x < W; ++x)
            if (in(x, y)) {
                sx = x;
                sy = y;
                break;
            }
    if (sy < 0) return {};

    // Walk the pixel-edge cycle with the region on the right. At pinch vertices
    // the right-most turn wins, which keeps diagonal neighbours apart.
    auto edge_exists = [&](int x, int y, int dx, int dy) {
        if (dx == 1) return in(x, y) && !in(x, y - 1);
        if (dx == -1) return in(x - 1, y - 1) && !in(x - 1, y);
        if (dy == 1) return in(x - 1, y) && !in(x, y);
        return in(x, y - 1) && !in(x - 1, y - 1);
    };
    std::vector<Point> out;
    int x = sx, y = sy, dx = 1, dy = 0;
    do {
        x += dx;
        y += dy;
        const int turns[3][2] = {{-dy, dx}, {dx, dy}, {dy, -dx}};
        bool moved = false;
        for (const auto& t : turns)
            if (edge_exists(x, y, t[0], t[1])) {
                if (t[0] != dx || t[1] != dy) out.push_back({x, y});
                dx = t[0];
                dy = t[1];
                moved = true;
                break;
            }
        if (!moved) throw InvalidInput("region outline is not closed");
    } while (x != sx || y != sy || dx != 1 || dy != 0);
    return out;
}

std::array<double, 3> widest_chord(const std::vector<Vec2>& poly, double tolerance) {
    if (poly.size() < 2) throw FitError("polygon has fewer than two vertices");
    std::vector<double> levels;
    for (const auto& p : poly) levels.push_back(p.y);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    std::vector<std::array<double, 3>> chords;
    double widest = -1.0;
    const std::size_t n = poly.size();
    for (double y : levels) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& p = poly[i];
            const Vec2& q = poly[(i + 1) % n];
            if (p.y == y) {
                lo = std::min(lo, p.x);
                hi = std::max(hi, p.x);
            }
            if ((p.y - y) * (q.y - y) < 0.0) {
                const double x = p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y);
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        }
        if (hi < lo) continue;
        chords.push_back({y, lo, hi});
        widest = std::max(widest, hi - lo);
    }
    // Levels are sorted top-down; the first one close enough to the maximum wins.
    for (const auto& c : chords)
        if (c[2] - c[1] >= widest - tolerance - 1e-9) return c;
    throw FitError("polygon has no horizontal extent");
}

EllipseFit fit_half_ellipse(const std::vector<Point>& polygon, const EllipseFitOptions& opts) {
    return fit_half_ellipse(to_vec(polygon), opts);
}

EllipseFit fit_half_ellipse(const std::vector<Vec2>& polygon, const EllipseFitOptions& opts) {
    if (polygon.size() < 8) throw FitError("boundary has fewer than 8 vertices");
    const auto [chord_y, x0, x1] = widest_chord(polygon, opts.chord_tolerance);

    std::vector<Vec2> arc;
    std::set<std::pair<double, double>> seen;
    for (const auto& p : polygon)
        if (p.y > chord_y && seen.insert({p.x, p.y}).second) arc.push_back(p);
    if (arc.size() < 4) throw FitError("bottom arc has fewer than 4 points");

    double depth = 0.0;
    for (const auto& p : arc) depth = std::max(depth, p.y - chord_y);
    const ArcProblem prob{arc, opts.fit_center_y, opts.fit_rotation, chord_y};
    Eigen::VectorXd p(prob.dims());
    p[0] = 0.5 * (x0 + x1);
    if (opts.fit_center_y) p[1] = chord_y;
    p[prob.ia()] = std::max(0.5 * (x1 - x0), 1e-3);
    p[prob.ia() + 1] = std::max(depth, 1e-3);
    if (opts.fit_rotation) p[prob.ia() + 2] = 0.0;

    Eigen::VectorXd r, r_try;
    Eigen::MatrixXd J;
    prob.evaluate(p, r, &J);
    double cost = r.squaredNorm();
    double mu = 1e-3;
    bool converged = false;
    int it = 0;
    for (; it < opts.max_iterations && !converged; ++it) {
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < 1e-15) {
            converged = true;
            break;
        }
        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = A;
            for (Eigen::Index k = 0; k < A.rows(); ++k) damped(k, k) += mu * std::max(A(k, k), 1e-12);
            const Eigen::VectorXd step = damped.ldlt().solve(-g);
            const Eigen::VectorXd trial = p + step;
            prob.evaluate(trial, r_try, nullptr);
            const double trial_cost = r_try.squaredNorm();
            if (std::isfinite(trial_cost) && trial_cost <= cost) {
                const double rel_step = step.norm() / (p.norm() + opts.tolerance);
                const double rel_cost = (cost - trial_cost) / std::max(cost, 1e-300);
                p = trial;
                cost = trial_cost;
                prob.evaluate(p, r, &J);
                mu = std::max(mu / 3.0, 1e-15);
                accepted = true;
                if (rel_step < opts.tolerance || rel_cost < opts.tolerance || cost < 1e-28) converged = true;
            } else {
                mu *= 4.0;
                if (mu > 1e16) {
                    // No descent direction left: the current point is a minimum.
                    converged = true;
                    break;
                }
            }
        }
    }
    if (!converged) throw FitError("ellipse fit did not converge within " + std::to_string(opts.max_iterations) + " iterations");

    EllipseFit fit;
    fit.ellipse = prob.unpack(p);
    fit.ellipse.a = std::abs(fit.ellipse.a);
    fit.ellipse.b = std::abs(fit.ellipse.b);
    if (!(fit.ellipse.a > 0.0) || !(fit.ellipse.b > 0.0) || !std::isfinite(fit.ellipse.a) || !std::isfinite(fit.ellipse.b))
        throw FitError("ellipse fit degenerated");
    fit.rms = std::sqrt(cost / static_cast<double>(arc.size()));
    fit.iterations = it;
    fit.arc_points = arc.size();
    fit.chord_y = chord_y;
    fit.chord_x0 = x0;
    fit.chord_x1 = x1;
    return fit;
}

PoolMetrics pool_metrics(const Ellipse& e, double scale) {
    if (!(e.a > 0.0) || !(e.b > 0.0)) throw InvalidInput("ellipse semi-axes must be positive");
    if (!(scale > 0.0)) throw InvalidInput("pixel scale must be positive");
    PoolMetrics m;
    m.apparent_area = kPi * e.a * e.b / 2.0 * scale * scale;
    m.width = 2.0 * e.a * scale;
    m.height = e.b * scale;
    m.aspect_ratio = std::min(m.width, m.height) / std::max(m.width, m.height);
    return m;
}

std::string to_string(PoolStatus s) {
    switch (s) {
    case PoolStatus::fitted: return "fitted";
    case PoolStatus::edge: return "edge";
    case PoolStatus::unfit: return "unfit";
    }
    return "unknown";
}

std::vector<MeltPool> extract_pool_regions(const AnnotationMask& mask) {
    const int W = mask.width, H = mask.height;
    BinaryMask bg(W, H);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) bg.values[i] = mask.labels[i] == PixelClass::background;
    const Labeling lab = label_components(bg, false);

    struct Box {
        int x0, y0, x1, y1;
        std::size_t area = 0;
        bool edge = false;
    };
    std::vector<Box> boxes(static_cast<std::size_t>(lab.count), Box{W, H, -1, -1});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int l = lab.labels[static_cast<std::size_t>(y) * W + x];
            if (l == 0) continue;
            Box& b = boxes[static_cast<std::size_t>(l - 1)];
            b.x0 = std::min(b.x0, x);
            b.y0 = std::min(b.y0, y);
            b.x1 = std::max(b.x1, x);
            b.y1 = std::max(b.y1, y);
            ++b.area;
            if (x == 0 || y == 0 || x == W - 1 || y == H - 1) b.edge = true;
        }

    std::vector<MeltPool> pools;
    pools.reserve(boxes.size());
    for (int l = 1; l <= lab.count; ++l) {
        const Box& b = boxes[static_cast<std::size_t>(l - 1)];
        const int w = b.x1 - b.x0 + 3, h = b.y1 - b.y0 + 3;
        BinaryMask sub(w, h);
        for (int y = b.y0; y <= b.y1; ++y)
            for (int x = b.x0; x <= b.x1; ++x)
                if (lab.labels[static_cast<std::size_t>(y) * W + x] == l) sub.at(y - b.y0 + 1, x - b.x0 + 1) = 1;
        MeltPool pool;
        pool.id = l - 1;
        pool.visible_area = b.area;
        pool.touches_edge = b.edge;
        pool.status = b.edge ? PoolStatus::edge : PoolStatus::unfit;
        for (const auto& p : region_outline(sub)) pool.boundary.push_back({p.x + b.x0 - 1, p.y + b.y0 - 1});
        pools.push_back(std::move(pool));
    }
    return pools;
}

PoolAnalysis analyze_mask(const AnnotationMask& mask, const PoolAnalysisOptions& opts) {
    PoolAnalysis out;
    out.pools = extract_pool_regions(mask);
    out.extracted = out.pools.size();
    for (auto& pool : out.pools) {
        if (pool.touches_edge) {
            ++out.edge;
            continue;
        }
        try {
            pool.fit = fit_half_ellipse(pool.boundary, opts.fit);
            pool.metrics = pool_metrics(pool.fit->ellipse, opts.scale);
            pool.status = PoolStatus::fitted;
            ++out.fitted;
        } catch (const FitError& e) {
            pool.fit.reset();
            pool.fit_error = e.what();
            pool.status = PoolStatus::unfit;
            ++out.unfit;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

double SkewNormalFit::delta() const { return alpha / std::sqrt(1.0 + alpha * alpha); }
double SkewNormalFit::mean() const { return xi + omega * delta() * std::sqrt(2.0 / kPi); }
double SkewNormalFit::stddev() const {
    const double d = delta();
    return omega * std::sqrt(1.0 - 2.0 * d * d / kPi);
}
double SkewNormalFit::skewness() const {
    const double m = delta() * std::sqrt(2.0 / kPi);
    return (4.0 - kPi) / 2.0 * m * m * m / std::pow(1.0 - m * m, 1.5);
}

SampleMoments sample_moments(const std::vector<double>& v) {
    SampleMoments m;
    if (v.empty()) return m;
    const double n = static_cast<double>(v.size());
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double m2 = 0.0, m3 = 0.0;
    for (double x : v) {
        const double d = x - m.mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m.stddev = std::sqrt(m2);
    m.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    return m;
}

SkewNormalFit fit_skew_normal(const std::vector<double>& samples) {
    if (samples.size() < 8) throw FitError("skew-normal fit needs at least 8 samples");
    const SampleMoments m = sample_moments(samples);
    if (!(m.stddev > 1e-12 * std::max(1.0, std::abs(m.mean)))) throw FitError("degenerate variance");
    SkewNormalFit f;
    f.sample_count = samples.size();
    if (std::abs(m.skewness) >= kMaxSkewNormalSkewness) {
        f.fallback = true;
        f.xi = m.mean;
        f.omega = m.stddev;
        f.alpha = 0.0;
        return f;
    }
    const double t = std::pow(std::abs(m.skewness), 2.0 / 3.0);
    const double delta_abs = std::sqrt(kPi / 2.0 * t / (t + std::pow((4.0 - kPi) / 2.0, 2.0 / 3.0)));
    const double delta = std::copysign(delta_abs, m.skewness);
    f.alpha = delta / std::sqrt(1.0 - delta * delta);
    f.omega = m.stddev / std::sqrt(1.0 - 2.0 * delta * delta / kPi);
    f.xi = m.mean - f.omega * delta * std::sqrt(2.0 / kPi);
    return f;
}

Histogram make_histogram(const std::vector<double>& v, double bin_width) {
    if (!(bin_width > 0.0)) throw InvalidInput("bin width must be positive");
    Histogram h;
    h.bin_width = bin_width;
    if (v.empty()) return h;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    h.origin = std::floor(*lo / bin_width) * bin_width;
    const auto bins = static_cast<std::size_t>(std::floor((*hi - h.origin) / bin_width)) + 1;
    h.counts.assign(bins, 0);
    for (double x : v) {
        auto i = static_cast<std::size_t>(std::max(0.0, std::floor((x - h.origin) / bin_width)));
        h.counts[std::min(i, bins - 1)]++;
    }
    return h;
}

DistributionSummary summarize(const std::vector<double>& samples, double bin_width) {
    DistributionSummary s;
    s.samples = samples;
    s.histogram = make_histogram(samples, bin_width);
    if (!s.histogram.counts.empty())
        s.mode_bin = static_cast<std::size_t>(
            std::max_element(s.histogram.counts.begin(), s.histogram.counts.end()) - s.histogram.counts.begin());
    const SampleMoments m = sample_moments(samples);
    s.mean = m.mean;
    s.stddev = m.stddev;
    s.skewness = m.skewness;
    s.positive_skew = m.skewness > 0.2;
    try {
        s.fit = fit_skew_normal(samples);
    } catch (const FitError& e) {
        s.fit_error = e.what();
    }
    return s;
}

StatisticsReport summarize_distributions(const std::vector<MeltPool>& pools, const StatisticsOptions& opts) {
    StatisticsReport rep;
    std::vector<double> areas, aspects;
    rep.extracted = pools.size();
    for (const auto& p : pools) {
        switch (p.status) {
        case PoolStatus::edge: ++rep.edge; break;
        case PoolStatus::unfit: ++rep.unfit; break;
        case PoolStatus::fitted:
            ++rep.fitted;
            areas.push_back(p.metrics.apparent_area);
            aspects.push_back(p.metrics.aspect_ratio);
            break;
        }
    }
    if (areas.empty()) throw InvalidInput("no fitted pools to summarize");
    rep.area = summarize(areas, opts.area_bin_width);
    rep.aspect = summarize(aspects, opts.aspect_bin_width);
    return rep;
}

std::string pools_csv(const std::vector<MeltPool>& pools) {
    std::ostringstream out;
    out << std::setprecision(12);
    out << "id,status,touches_edge,visible_area,cx,cy,a,b,rms,apparent_area,aspect_ratio\n";
    for (const auto& p : pools) {
        out << p.id << ',' << to_string(p.status) << ',' << (p.touches_edge ? 1 : 0) << ',' << p.visible_area;
        if (p.fit) {
            const auto& e = p.fit->ellipse;
            out << ',' << e.cx << ',' << e.cy << ',' << e.a << ',' << e.b << ',' << p.fit->rms << ','
                << p.metrics.apparent_area << ',' << p.metrics.aspect_ratio << '\n';
        } else {
            out << ",,,,,,,\n";
        }
    }
    return out.str();
}

std::string histogram_csv(const StatisticsReport& report) {
    std::ostringstream out;
    out << std::setprecision(12) << "metric,bin_start,bin_end,count\n";
    auto emit = [&](const char* name, const Histogram& h) {
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            out << name << ',' << h.bin_start(i) << ',' << h.bin_start(i + 1) << ',' << h.counts[i] << '\n';
    };
    emit("apparent_area", report.area.histogram);
    emit("aspect_ratio", report.aspect.histogram);
    return out.str();
}

namespace {

nlohmann::json summary_json(const DistributionSummary& s) {
    using nlohmann::json;
    json bins = json::array();
    for (std::size_t i = 0; i < s.histogram.counts.size(); ++i)
        bins.push_back({{"start", s.histogram.bin_start(i)}, {"end", s.histogram.bin_start(i + 1)},
                        {"count", s.histogram.counts[i]}});
    json j = {{"count", s.samples.size()},
              {"mean", s.mean},
              {"stddev", s.stddev},
              {"skewness", s.skewness},
              {"positive_skew", s.positive_skew},
              {"bin_width", s.histogram.bin_width},
              {"mode_bin", {{"start", s.histogram.bin_start(s.mode_bin)}, {"end", s.histogram.bin_start(s.mode_bin + 1)}}},
              {"histogram", bins}};
    if (s.fit)
        j["fit"] = {{"xi", s.fit->xi}, {"omega", s.fit->omega}, {"alpha", s.fit->alpha}, {"fallback", s.fit->fallback}};
    else
        j["fit_error"] = s.fit_error;
    return j;
}

} // namespace

std::string statistics_json(const StatisticsReport& report, const std::vector<MeltPool>& pools) {
    using nlohmann::json;
    json list = json::array();
    for (const auto& p : pools) {
        json j = {{"id", p.id},
                  {"status", to_string(p.status)},
                  {"touches_edge", p.touches_edge},
                  {"visible_area", p.visible_area}};
        if (p.fit) {
            const auto& e = p.fit->ellipse;
            j["ellipse"] = {{"cx", e.cx}, {"cy", e.cy}, {"a", e.a}, {"b", e.b}, {"theta", e.theta}, {"rms", p.fit->rms}};
            j["apparent_area"] = p.metrics.apparent_area;
            j["aspect_ratio"] = p.metrics.aspect_ratio;
        } else if (!p.fit_error.empty()) {
            j["fit_error"] = p.fit_error;
        }
        list.push_back(j);
    }
    const json doc = {{"counts",
                       {{"extracted", report.extracted},
                        {"edge", report.edge},
                        {"unfit", report.unfit},
                        {"fitted", report.fitted}}},
                      {"apparent_area", summary_json(report.area)},
                      {"aspect_ratio", summary_json(report.aspect)},
                      {"pools", list}};
    return doc.dump(2);
}

} // namespace meltpool
