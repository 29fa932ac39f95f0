#include "meltpool/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <json.hpp>

#include "meltpool/png_io.hpp"

namespace meltpool {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

json generator_json(const GeneratorConfig& g) {
    return {{"input_size", g.input_size},     {"block_count", g.block_count},   {"base_filters", g.base_filters},
            {"filter_cap", g.filter_cap},     {"dropout_rate", g.dropout_rate}, {"dropout_blocks", g.dropout_blocks}};
}

json discriminator_json(const DiscriminatorConfig& d) {
    return {{"input_size", d.input_size},
            {"down_blocks", d.down_blocks},
            {"base_filters", d.base_filters},
            {"filter_cap", d.filter_cap}};
}

std::vector<const nn::Param*> all_params(const NetworkCheckpoint& c) {
    auto g = c.generator.parameters();
    auto d = c.discriminator.parameters();
    g.insert(g.end(), d.begin(), d.end());
    return g;
}

} // namespace

std::vector<std::uint8_t> serialize_checkpoint(const NetworkCheckpoint& ckpt, TensorPrecision precision) {
    const auto params = all_params(ckpt);
    json table = json::array();
    for (const auto* p : params) table.push_back({{"name", p->name}, {"shape", p->shape}});
    const json header = {{"generator", generator_json(ckpt.generator.config())},
                         {"discriminator", discriminator_json(ckpt.discriminator.config())},
                         {"step", ckpt.step},
                         {"config_hash", ckpt.config_hash},
                         {"dtype", precision == TensorPrecision::float64 ? "f64" : "f32"},
                         {"tensors", table}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out{'M', 'P', 'C', 'K'};
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto* p : params)
        for (double v : p->value) {
            if (precision == TensorPrecision::float64)
                put<double>(out, v);
            else
                put<float>(out, static_cast<float>(v));
        }
    put<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
    return out;
}

NetworkCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), "MPCK", 4) != 0) throw CheckpointError("not a checkpoint file");
    std::size_t off = bytes.size() - sizeof(std::uint64_t);
    const auto stored = get<std::uint64_t>(bytes, off);
    if (stored != fnv1a64(bytes.data(), bytes.size() - sizeof(std::uint64_t)))
        throw CheckpointError("checkpoint checksum mismatch");

    off = 4;
    const auto version = get<std::uint32_t>(bytes, off);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = get<std::uint32_t>(bytes, off);
    if (off + header_len > bytes.size()) throw CheckpointError("checkpoint truncated");
    const json header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                    bytes.begin() + static_cast<std::ptrdiff_t>(off + header_len));
    off += header_len;

    GeneratorConfig g;
    const auto& gj = header.at("generator");
    g.input_size = gj.at("input_size");
    g.block_count = gj.at("block_count");
    g.base_filters = gj.at("base_filters");
    g.filter_cap = gj.at("filter_cap");
    g.dropout_rate = gj.at("dropout_rate");
    g.dropout_blocks = gj.at("dropout_blocks");
    DiscriminatorConfig d;
    const auto& dj = header.at("discriminator");
    d.input_size = dj.at("input_size");
    d.down_blocks = dj.at("down_blocks");
    d.base_filters = dj.at("base_filters");
    d.filter_cap = dj.at("filter_cap");

    NetworkCheckpoint ckpt{Generator(g), Discriminator(d), header.at("step").get<std::int64_t>(),
                           header.at("config_hash").get<std::uint64_t>()};
    if (ckpt.config_hash != config_hash(g, d)) throw CheckpointError("checkpoint config hash does not match header");
    const bool f64 = header.at("dtype") == "f64";

    auto gp = ckpt.generator.parameters();
    auto dp = ckpt.discriminator.parameters();
    gp.insert(gp.end(), dp.begin(), dp.end());
    const auto& table = header.at("tensors");
    if (table.size() != gp.size()) throw CheckpointError("checkpoint tensor table does not match the architecture");
    const std::size_t payload_end = bytes.size() - sizeof(std::uint64_t);
    for (std::size_t k = 0; k < gp.size(); ++k) {
        if (table[k].at("name") != gp[k]->name || table[k].at("shape").get<std::vector<int>>() != gp[k]->shape)
            throw CheckpointError("checkpoint tensor " + gp[k]->name + " does not match the architecture");
        for (double& v : gp[k]->value) {
            if (off + (f64 ? 8 : 4) > payload_end) throw CheckpointError("checkpoint truncated");
            v = f64 ? get<double>(bytes, off) : static_cast<double>(get<float>(bytes, off));
        }
    }
    if (off != payload_end) throw CheckpointError("checkpoint has trailing payload bytes");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkCheckpoint& ckpt, TensorPrecision precision) {
    const auto bytes = serialize_checkpoint(ckpt, precision);
    write_file_atomic(path, bytes.data(), bytes.size());
}

NetworkCheckpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path));
}

} // namespace meltpool
