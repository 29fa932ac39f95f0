#include "meltpool/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace meltpool {

RawImage::RawImage(int w, int h, int c, double fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

void RawImage::validate() const {
    if (width <= 0 || height <= 0) throw InvalidInput("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw InvalidInput("image must have 1 or 3 channels");
    if (data.size() != pixel_count() * channels) throw InvalidInput("image data length does not match dimensions");
    for (double v : data) {
        if (!(v >= 0.0 && v <= 255.0)) throw InvalidInput("image intensity outside [0, 255]");
    }
}

const Rgb& ClassPalette::color(PixelClass c) const {
    switch (c) {
    case PixelClass::boundary: return boundary;
    case PixelClass::defect: return defect;
    default: return background;
    }
}

void ClassPalette::validate() const {
    if (background == boundary || background == defect || boundary == defect)
        throw InvalidInput("palette colors must be pairwise distinct");
}

namespace {

std::vector<int> tile_origins(int dim, int tile, int n) {
    if (n == 1) {
        if (tile < dim) throw InvalidInput("single tile cannot cover the image axis");
        return {0};
    }
    if (static_cast<long>(n) * tile < dim) throw InvalidInput("tile grid cannot cover the image axis");
    std::vector<int> origins(n);
    const double stride = static_cast<double>(dim - tile) / (n - 1);
    for (int i = 0; i < n; ++i) origins[i] = static_cast<int>(std::lround(i * stride));
    return origins;
}

} // namespace

std::vector<Tile> tile_image(const RawImage& img, int tile_size, int rows, int cols, const std::string& source_id) {
    if (rows < 1 || cols < 1) throw InvalidInput("tile grid must be at least 1x1");
    if (tile_size <= 0 || (tile_size & (tile_size - 1)) != 0) throw InvalidInput("tile size must be a power of two");
    if (tile_size > img.width || tile_size > img.height) throw InvalidInput("tile larger than image");

    const auto row_origins = tile_origins(img.height, tile_size, rows);
    const auto col_origins = tile_origins(img.width, tile_size, cols);

    std::vector<Tile> tiles;
    tiles.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r0 : row_origins) {
        for (int c0 : col_origins) {
            Tile t{source_id, r0, c0, tile_size, RawImage(tile_size, tile_size, img.channels)};
            for (int y = 0; y < tile_size; ++y) {
                const double* src = &img.data[(static_cast<std::size_t>(r0 + y) * img.width + c0) * img.channels];
                std::copy(src, src + static_cast<std::size_t>(tile_size) * img.channels,
                          &t.image.data[static_cast<std::size_t>(y) * tile_size * img.channels]);
            }
            tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

AnnotationMask crop_mask(const AnnotationMask& mask, int row, int col, int size) {
    if (size < 1 || row < 0 || col < 0 || row + size > mask.height || col + size > mask.width)
        throw InvalidInput("crop window lies outside the mask");
    AnnotationMask out(size, size);
    for (int y = 0; y < size; ++y)
        std::copy_n(&mask.labels[static_cast<std::size_t>(row + y) * mask.width + col], size,
                    &out.labels[static_cast<std::size_t>(y) * size]);
    return out;
}

AnnotationMask downscale_mask(const AnnotationMask& mask, int factor) {
    if (factor < 1 || mask.width % factor != 0 || mask.height % factor != 0)
        throw InvalidInput("downscale factor must divide the mask size");
    AnnotationMask out(mask.width / factor, mask.height / factor);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            PixelClass& o = out.at(y / factor, x / factor);
            o = std::max(o, mask.at(y, x));
        }
    return out;
}

RawImage downscale(const RawImage& img, int factor) {
    if (factor < 1 || img.width % factor != 0 || img.height % factor != 0)
        throw InvalidInput("downscale factor must divide the image size");
    RawImage out(img.width / factor, img.height / factor, img.channels);
    const double norm = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double sum = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx) sum += img.at(y * factor + dy, x * factor + dx, c);
                out.at(y, x, c) = sum * norm;
            }
        }
    }
    return out;
}

ModelImage to_model_range(const RawImage& img) {
    if (img.channels != 1 && img.channels != 3) throw InvalidInput("image must have 1 or 3 channels");
    ModelImage m(img.height, img.width);
    for (int c = 0; c < 3; ++c) {
        const int src_c = img.channels == 1 ? 0 : c;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) m.at(c, y, x) = img.at(y, x, src_c) / 127.5 - 1.0;
    }
    return m;
}

RawImage from_model_range(const ModelImage& m) {
    RawImage img(m.width, m.height, 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
                img.at(y, x, c) = std::clamp((m.at(c, y, x) + 1.0) * 127.5, 0.0, 255.0);
    return img;
}

RawImage encode_overlay(const AnnotationMask& mask, const ClassPalette& palette) {
    palette.validate();
    RawImage img(mask.width, mask.height, 3);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        const Rgb& rgb = palette.color(mask.labels[i]);
        for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = rgb[c];
    }
    return img;
}

namespace {

AnnotationMask nearest_palette(const RawImage& img, const ClassPalette& palette, bool strict) {
    palette.validate();
    if (img.channels != 3) throw InvalidInput("overlay decode requires an RGB image");
    constexpr PixelClass order[3] = {PixelClass::background, PixelClass::boundary, PixelClass::defect};
    AnnotationMask mask(img.width, img.height);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_k = 0;
        bool tie = false;
        for (int k = 0; k < 3; ++k) {
            const Rgb& rgb = palette.color(order[k]);
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = img.data[i * 3 + c] - rgb[c];
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                best_k = k;
                tie = false;
            } else if (d2 == best) {
                tie = true;
            }
        }
        if (tie && strict) throw InvalidInput("overlay pixel is equidistant from two palette colors");
        mask.labels[i] = order[best_k];
    }
    return mask;
}

} // namespace

AnnotationMask decode_overlay(const RawImage& img, const ClassPalette& palette) {
    return nearest_palette(img, palette, true);
}

AnnotationMask classify_overlay(const RawImage& img, const ClassPalette& palette) {
    return nearest_palette(img, palette, false);
}

RawImage to_luminance(const RawImage& img) {
    if (img.channels == 1) return img;
    RawImage out(img.width, img.height, 1);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1] + 0.114 * img.data[i * 3 + 2];
    return out;
}

RawImage quantize(const RawImage& img) {
    RawImage out = img;
    for (double& v : out.data) v = std::clamp(std::round(v), 0.0, 255.0);
    return out;
}

} // namespace meltpool
