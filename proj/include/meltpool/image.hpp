#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace meltpool {

/// Raised for contract violations on inputs (bad sizes, out-of-range values).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 8-bit-range raster, interleaved row-major (HWC). Values are real so that
/// box-filtered output (e.g. 127.5) is representable without rounding.
struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    RawImage() = default;
    RawImage(int w, int h, int c, double fill = 0.0);

    double& at(int row, int col, int ch = 0) { return data[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
    double at(int row, int col, int ch = 0) const { return data[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    /// Throws InvalidInput if the size or value range invariants are broken.
    void validate() const;
};

struct Tile {
    std::string source_id;
    int row = 0;
    int col = 0;
    int size = 0;
    RawImage image;
};

/// Planar (CHW) three-channel image with values in [-1, 1].
struct ModelImage {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ModelImage() = default;
    ModelImage(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

    double& at(int ch, int row, int col) { return data[(static_cast<std::size_t>(ch) * height + row) * width + col]; }
    double at(int ch, int row, int col) const { return data[(static_cast<std::size_t>(ch) * height + row) * width + col]; }
};

enum class PixelClass : std::uint8_t { background = 0, boundary = 1, defect = 2 };

struct AnnotationMask {
    int width = 0;
    int height = 0;
    std::vector<PixelClass> labels;

    AnnotationMask() = default;
    AnnotationMask(int w, int h, PixelClass fill = PixelClass::background)
        : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

    PixelClass& at(int row, int col) { return labels[static_cast<std::size_t>(row) * width + col]; }
    PixelClass at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
    bool operator==(const AnnotationMask&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;

struct ClassPalette {
    Rgb background{128, 128, 128};
    Rgb boundary{255, 0, 255};
    Rgb defect{0, 255, 0};

    const Rgb& color(PixelClass c) const;
    void validate() const;
};

struct ImagePair {
    ModelImage input;
    ModelImage target;
};

/// Splits `img` into rows x cols square tiles with evenly spaced origins.
std::vector<Tile> tile_image(const RawImage& img, int tile_size, int rows, int cols,
                             const std::string& source_id = "image");

/// Box-filter downscale by an integer factor.
RawImage downscale(const RawImage& img, int factor);
inline RawImage downscale(const Tile& tile, int factor) { return downscale(tile.image, factor); }

/// Block reduction of a class mask: a block takes the highest class index it
/// contains, so one-pixel boundaries survive.
AnnotationMask downscale_mask(const AnnotationMask& mask, int factor);
/// Square window of a mask, e.g. the truth under one tile.
AnnotationMask crop_mask(const AnnotationMask& mask, int row, int col, int size);

ModelImage to_model_range(const RawImage& img);
RawImage from_model_range(const ModelImage& m);

RawImage encode_overlay(const AnnotationMask& mask, const ClassPalette& palette = {});

/// Nearest-palette decode; throws InvalidInput on a pixel equidistant from two
/// entries.
AnnotationMask decode_overlay(const RawImage& img, const ClassPalette& palette = {});

/// Nearest-palette decode for network predictions: ties resolve to the lower
/// class index instead of failing.
AnnotationMask classify_overlay(const RawImage& img, const ClassPalette& palette = {});

/// Rec. 601 luminance of an RGB image; single-channel input is returned as is.
RawImage to_luminance(const RawImage& img);

/// Rounds to the nearest integer intensity, clamped to [0, 255].
RawImage quantize(const RawImage& img);

} // namespace meltpool
