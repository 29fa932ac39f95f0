#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "meltpool/model.hpp"

namespace meltpool {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TensorPrecision { float64, float32 };

/// Checkpoint container layout (all integers little-endian):
///
///   "MPCK"  u32 version  u32 header_bytes  header(JSON)  tensor payload  u64 checksum
///
/// The JSON header carries both network configs, the step counter, the config
/// hash, the element type, and the ordered tensor table (name, shape). The
/// payload holds the tensors in table order; the checksum is FNV-1a 64 over
/// every preceding byte.
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const NetworkCheckpoint& ckpt,
                                               TensorPrecision precision = TensorPrecision::float64);
NetworkCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const NetworkCheckpoint& ckpt,
                     TensorPrecision precision = TensorPrecision::float64);
NetworkCheckpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

} // namespace meltpool
