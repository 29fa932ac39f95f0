#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meltpool/image.hpp"
#include "meltpool/model.hpp"

namespace meltpool {

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 255.0;

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

struct SsimReport {
    /// Mean of the local map over positions whose window lies fully inside
    /// the image, clamped to [0, 1].
    double index = 0.0;
    /// The same mean before clamping (can be negative for anti-correlated images).
    double raw_mean = 0.0;
    /// Local SSIM at every pixel (reflected borders), row-major.
    std::vector<double> map;
    /// The contrast-structure factor of `map` alone (no luminance term).
    std::vector<double> contrast_structure;
    /// 255 where identical, darker where the images differ.
    RawImage difference_image;
};

/// Windowed structural similarity. RGB inputs are reduced to luminance first.
SsimReport ssim_index(const RawImage& a, const RawImage& b, const SsimOptions& opts = {});

/// Normalized 1-D Gaussian window; the 2-D window is its outer product.
std::vector<double> ssim_window(int size, double sigma);

/// Fraction of pixels with equal class labels.
double pixel_accuracy(const AnnotationMask& a, const AnnotationMask& b);

struct ImageScore {
    double ssim = 0.0;
    double pixel_accuracy = 0.0;
};

struct CheckpointScore {
    std::string id;
    std::int64_t step = 0;
    double mean_ssim = 0.0;
    double median_ssim = 0.0;
    double mean_pixel_accuracy = 0.0;
    std::vector<ImageScore> per_image;
};

/// Predicts every validation input with the generator (inference mode) and
/// scores the rendered overlay against the target overlay.
CheckpointScore score_checkpoint(const Generator& g, const std::vector<ImagePair>& validation,
                                 const std::string& id = {}, std::int64_t step = 0);

/// Descending mean SSIM; equal means go to the later training step.
void sort_scores(std::vector<CheckpointScore>& scores);

std::vector<CheckpointScore> rank_checkpoints(const std::vector<NetworkCheckpoint>& checkpoints,
                                              const std::vector<ImagePair>& validation);
/// Loads and scores one file at a time; ids are the file paths.
std::vector<CheckpointScore> rank_checkpoint_files(const std::vector<std::filesystem::path>& files,
                                                   const std::vector<ImagePair>& validation);

std::string evaluation_report_json(const std::vector<CheckpointScore>& ranked);

double median(std::vector<double> v);

} // namespace meltpool
