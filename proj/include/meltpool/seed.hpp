#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meltpool/image.hpp"

namespace meltpool {

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;

    BinaryMask() = default;
    BinaryMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
    std::uint8_t at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
    bool inside(int row, int col) const { return row >= 0 && col >= 0 && row < height && col < width; }
    bool operator==(const BinaryMask&) const = default;
};

struct Point {
    int x = 0;
    int y = 0;
    bool operator==(const Point&) const = default;
};

enum class CorrectionKind { split, merge };

std::string to_string(CorrectionKind kind);
CorrectionKind correction_kind_from_string(const std::string& s);

struct CorrectionPoint {
    CorrectionKind kind = CorrectionKind::merge;
    Point position;
    std::string author;
    std::string created_at; // ISO-8601, ordering key
    std::string image_id;
};

struct Contour {
    std::vector<Point> points; // closed; last vertex connects back to the first
    int parent = -1;
    bool is_hole = false;
};

using ContourSet = std::vector<Contour>;

/// Normalized 2-D Gaussian kernel, row-major kernel_size x kernel_size.
std::vector<double> gaussian_kernel(int kernel_size, double sigma);

/// Separable Gaussian convolution with reflected borders (per channel).
RawImage gaussian_smooth(const RawImage& img, int kernel_size, double sigma);

/// 1 where the pixel strictly exceeds the image mean.
BinaryMask threshold_mean(const RawImage& img);

/// Border following over 8-connected foreground (Suzuki-Abe). Outer contours
/// and hole contours are both reported; `parent` indexes the enclosing contour.
ContourSet extract_contours(const BinaryMask& mask);

/// Fills every outer contour and clears its holes, reconstructing the mask a
/// contour set describes.
BinaryMask rasterize_contours(const ContourSet& contours, int width, int height);

/// Component labels (0 = not part of any component, 1..n otherwise).
struct Labeling {
    int count = 0;
    std::vector<int> labels;
};
Labeling label_components(const BinaryMask& mask, bool eight_connected);

/// Raised when a correction point cannot be applied.
class CorrectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CorrectionOptions {
    int merge_search_radius = 15;
};

/// Applies split and merge points in `created_at` order (stable for equal
/// stamps). Each successful merge lowers the 4-connected foreground region
/// count by one; each successful split raises it by one.
BinaryMask apply_corrections(const BinaryMask& mask, std::vector<CorrectionPoint> points,
                             const CorrectionOptions& options = {});

BinaryMask apply_merge(const BinaryMask& mask, Point p, int search_radius);
BinaryMask apply_split(const BinaryMask& mask, Point p);

struct SeedOptions {
    int kernel_size = 5;
    double sigma = 1.0;
    int defect_max_area = 40;
};

/// Smooth, threshold and label a raw image: bright foreground becomes the
/// background class, dark pixels become boundary, and small dark components
/// darker than the image mean become defects.
AnnotationMask seed_annotation(const RawImage& img, const SeedOptions& options = {});

/// Binary view of an annotation (1 = background class).
BinaryMask region_mask(const AnnotationMask& mask);

/// Writes a corrected binary region mask back into an annotation: pixels that
/// turned on become background, pixels that turned off become boundary, all
/// others keep their class.
AnnotationMask merge_region_mask(const AnnotationMask& original, const BinaryMask& before, const BinaryMask& after);

} // namespace meltpool
