#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "meltpool/image.hpp"

namespace meltpool {

/// Procedural cross-section: rows of overlapping half-ellipse tracks stacked
/// layer by layer, each layer overdrawing the top of the one below it.
struct SceneSpec {
    std::uint64_t seed = 0;
    int width = 512;
    int height = 512;
    int layer_count = 10;
    double hatch_spacing = 60.0;
    std::pair<double, double> pool_half_width{45.0, 60.0};
    std::pair<double, double> pool_depth{80.0, 105.0};
    /// Vertical distance between consecutive layer surfaces; 0 picks
    /// height / layer_count so the last surface reaches the top edge.
    double layer_thickness = 0.0;
    double layer_rotation_deg = 67.0;
    int defect_count = 6;
    std::pair<double, double> defect_radius{1.5, 3.0};
    double noise_amplitude = 8.0;
    /// Etch appearance: tones are stretched about mid-gray, then offset.
    double contrast = 1.0;
    double brightness = 0.0;
    ClassPalette palette;

    void validate() const;
    double thickness() const;
};

struct TruePool {
    int id = 0;     // owner id (order of drawing)
    int layer = 0;
    double cx = 0.0, cy = 0.0, a = 0.0, b = 0.0;
};

/// One visible 4-connected interior component of the rendered mask.
struct VisibleRegion {
    int owner = -1; // -1 = substrate
    std::size_t area = 0;
    bool touches_edge = false;
    int seed_x = 0, seed_y = 0;
};

struct Defect {
    double cx = 0.0, cy = 0.0, r = 0.0;
};

struct GroundTruth {
    std::vector<TruePool> pools;          // every drawn pool, visible or not
    std::vector<VisibleRegion> regions;   // visible interiors in scan order
    std::vector<Defect> defects;
    AnnotationMask mask;
    std::vector<int> owner;               // per-pixel owner id, -1 for substrate

    /// Regions that belong to a pool (not the substrate).
    std::size_t visible_pool_count() const;
};

struct Scene {
    RawImage image; // single channel, integer valued in [0, 255]
    GroundTruth truth;
};

Scene generate_scene(const SceneSpec& spec);

std::string truth_to_json(const GroundTruth& truth, const SceneSpec& spec);

/// Training pairs built from independent scenes of the given side length.
std::vector<ImagePair> synthetic_pairs(std::size_t count, int size, std::uint64_t seed);

/// A scene spec scaled to a small canvas (used for desk-scale training), with
/// pool scale, etch contrast, brightness and noise drawn from the seed.
SceneSpec small_scene_spec(int size, std::uint64_t seed);

} // namespace meltpool
