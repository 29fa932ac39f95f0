#include "meltpool/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace meltpool {

namespace {

struct ReadCursor {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t length) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + length > cur->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, cur->bytes->data() + cur->offset, length);
    cur->offset += length;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void png_flush_cb(png_structp) {}

[[noreturn]] void png_error_cb(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
void png_warning_cb(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_raw(int width, int height, int channels, const std::vector<std::uint8_t>& pixels) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
    if (!png) throw IoError("png: cannot allocate write struct");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    try {
        png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
        png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t stride = static_cast<std::size_t>(width) * channels;
        for (int y = 0; y < height; ++y)
            png_write_row(png, const_cast<png_bytep>(pixels.data() + y * stride));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

} // namespace

std::vector<std::uint8_t> encode_png(const RawImage& img) {
    if (img.channels != 1 && img.channels != 3) throw InvalidInput("PNG export supports 1 or 3 channels");
    std::vector<std::uint8_t> pixels(img.data.size());
    std::transform(img.data.begin(), img.data.end(), pixels.begin(),
                   [](double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); });
    return encode_raw(img.width, img.height, img.channels, pixels);
}

RawImage decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
    if (!png) throw IoError("png: cannot allocate read struct");
    png_infop info = png_create_info_struct(png);
    ReadCursor cursor{&bytes, 0};
    RawImage img;
    try {
        png_set_read_fn(png, &cursor, png_read_cb);
        png_read_info(png, info);
        const png_byte color = png_get_color_type(png, info);
        const png_byte depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        png_read_update_info(png, info);

        const int width = static_cast<int>(png_get_image_width(png, info));
        const int height = static_cast<int>(png_get_image_height(png, info));
        const int channels = png_get_channels(png, info);
        std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * channels);
        std::vector<png_bytep> rows(height);
        for (int y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width * channels;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);

        img = RawImage(width, height, channels);
        std::copy(pixels.begin(), pixels.end(), img.data.begin());
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
    const auto bytes = encode_png(img);
    write_file_atomic(path, bytes.data(), bytes.size());
}

RawImage read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

std::vector<std::uint8_t> encode_mask_png(const AnnotationMask& mask) {
    std::vector<std::uint8_t> pixels(mask.labels.size());
    std::transform(mask.labels.begin(), mask.labels.end(), pixels.begin(),
                   [](PixelClass c) { return static_cast<std::uint8_t>(c); });
    return encode_raw(mask.width, mask.height, 1, pixels);
}

void write_mask_png(const std::filesystem::path& path, const AnnotationMask& mask) {
    const auto bytes = encode_mask_png(mask);
    write_file_atomic(path, bytes.data(), bytes.size());
}

AnnotationMask read_mask_png(const std::filesystem::path& path) {
    const RawImage img = read_png(path);
    if (img.channels != 1) throw IoError("mask PNG must be single-channel: " + path.string());
    AnnotationMask mask(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const int v = static_cast<int>(img.data[i]);
        if (v > 2) throw IoError("mask PNG holds a label outside {0,1,2}: " + path.string());
        mask.labels[i] = static_cast<PixelClass>(v);
    }
    return mask;
}

} // namespace meltpool
