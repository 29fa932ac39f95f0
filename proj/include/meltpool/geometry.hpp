#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "meltpool/image.hpp"
#include "meltpool/seed.hpp"

namespace meltpool {

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Vec2 {
    double x = 0.0, y = 0.0;
};

/// Half-ellipse hanging below its center line (image y grows downward).
struct Ellipse {
    double cx = 0.0, cy = 0.0;
    double a = 0.0; // semi-width
    double b = 0.0; // depth
    double theta = 0.0;
};

struct EllipseFitOptions {
    int max_iterations = 200;
    double tolerance = 1e-12;
    /// Chord levels whose width is within this many pixels of the widest one
    /// count as ties; the top-most tie is the pool's center line.
    double chord_tolerance = 2.0;
    /// Center line pinned to the chord unless set. A free center trades depth
    /// against center height and is unstable on noisy boundaries.
    bool fit_center_y = false;
    bool fit_rotation = false;
};

struct EllipseFit {
    Ellipse ellipse;
    double rms = 0.0;
    int iterations = 0;
    std::size_t arc_points = 0;
    /// The widest horizontal chord used to split off the bottom arc.
    double chord_y = 0.0, chord_x0 = 0.0, chord_x1 = 0.0;
};

/// Widest horizontal chord over the polygon's vertex levels; the top-most level
/// within `tolerance` of the maximum width wins. Returns {y, x_min, x_max}.
std::array<double, 3> widest_chord(const std::vector<Vec2>& polygon, double tolerance = 0.0);

/// Fits the bottom arc (vertices strictly below the widest chord) by damped
/// least squares on the algebraic residual, centered on the chord. Throws FitError when the polygon
/// is too small or the iteration does not converge.
EllipseFit fit_half_ellipse(const std::vector<Vec2>& polygon, const EllipseFitOptions& opts = {});
/// Lattice-corner polygon, as produced by region_outline.
EllipseFit fit_half_ellipse(const std::vector<Point>& polygon, const EllipseFitOptions& opts = {});

/// Outer boundary of the first (top-most, then left-most) 4-connected region,
/// traced along pixel edges. Vertices are pixel-corner coordinates at every
/// turn, listed clockwise on screen, so the polygon encloses exactly the
/// region's pixels (holes included).
std::vector<Point> region_outline(const BinaryMask& mask);

struct PoolMetrics {
    double apparent_area = 0.0;
    double width = 0.0;
    double height = 0.0;
    double aspect_ratio = 0.0;
};

PoolMetrics pool_metrics(const Ellipse& e, double scale = 1.0);

enum class PoolStatus { fitted, edge, unfit };
std::string to_string(PoolStatus s);

struct MeltPool {
    int id = 0;
    /// Pixel-corner outline (see region_outline).
    std::vector<Point> boundary;
    std::size_t visible_area = 0;
    bool touches_edge = false;
    PoolStatus status = PoolStatus::unfit;
    std::optional<EllipseFit> fit;
    PoolMetrics metrics;
    std::string fit_error;
};

/// 4-connected components of background-class pixels with their outer polygon.
std::vector<MeltPool> extract_pool_regions(const AnnotationMask& mask);

struct PoolAnalysisOptions {
    double scale = 1.0;
    EllipseFitOptions fit;
};

struct PoolAnalysis {
    std::vector<MeltPool> pools;
    std::size_t extracted = 0, edge = 0, unfit = 0, fitted = 0;
};

/// Extracts regions, fits every interior (non-edge) region and computes metrics.
PoolAnalysis analyze_mask(const AnnotationMask& mask, const PoolAnalysisOptions& opts = {});

struct SkewNormalFit {
    double xi = 0.0, omega = 1.0, alpha = 0.0;
    std::size_t sample_count = 0;
    /// Set when the sample skewness was outside the attainable range and the
    /// fit fell back to a normal distribution.
    bool fallback = false;

    double delta() const;
    double mean() const;
    double stddev() const;
    double skewness() const;
};

/// Largest |skewness| a skew-normal distribution can reach.
constexpr double kMaxSkewNormalSkewness = 0.9952717464311565;

struct SampleMoments {
    double mean = 0.0, stddev = 0.0, skewness = 0.0;
};
SampleMoments sample_moments(const std::vector<double>& v);

/// Method-of-moments fit. Throws FitError on fewer than 8 samples or zero variance.
SkewNormalFit fit_skew_normal(const std::vector<double>& samples);

struct Histogram {
    double bin_width = 1.0;
    double origin = 0.0;
    std::vector<std::size_t> counts;

    double bin_start(std::size_t i) const { return origin + bin_width * static_cast<double>(i); }
};
Histogram make_histogram(const std::vector<double>& v, double bin_width);

struct DistributionSummary {
    std::vector<double> samples;
    Histogram histogram;
    std::size_t mode_bin = 0;
    double mean = 0.0, stddev = 0.0, skewness = 0.0;
    std::optional<SkewNormalFit> fit;
    std::string fit_error;
    bool positive_skew = false;
};

DistributionSummary summarize(const std::vector<double>& samples, double bin_width);

struct StatisticsOptions {
    double area_bin_width = 50.0;
    double aspect_bin_width = 0.05;
};

struct StatisticsReport {
    DistributionSummary area;
    DistributionSummary aspect;
    std::size_t extracted = 0, edge = 0, unfit = 0, fitted = 0;
};

/// Summaries over fitted pools only. Throws InvalidInput when none are fitted.
StatisticsReport summarize_distributions(const std::vector<MeltPool>& pools, const StatisticsOptions& opts = {});

std::string pools_csv(const std::vector<MeltPool>& pools);
std::string histogram_csv(const StatisticsReport& report);
std::string statistics_json(const StatisticsReport& report, const std::vector<MeltPool>& pools);

} // namespace meltpool
