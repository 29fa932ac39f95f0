#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meltpool/image.hpp"

namespace meltpool {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Encodes an 8-bit grayscale or RGB PNG. Values are rounded and clamped.
std::vector<std::uint8_t> encode_png(const RawImage& img);
RawImage decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const RawImage& img);
RawImage read_png(const std::filesystem::path& path);

/// Masks are stored as single-channel PNGs holding the class index (0, 1, 2).
void write_mask_png(const std::filesystem::path& path, const AnnotationMask& mask);
AnnotationMask read_mask_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_mask_png(const AnnotationMask& mask);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size);
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, text.data(), text.size());
}

} // namespace meltpool
