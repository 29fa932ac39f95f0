#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "meltpool/evaluator.hpp"
#include "meltpool/geometry.hpp"
#include "meltpool/image.hpp"
#include "meltpool/seed.hpp"
#include "meltpool/trainer.hpp"

namespace meltpool {

/// A manifest that breaks its own invariants. `what()` lists every problem.
class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Lookup of an id that the manifest does not know.
class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Request that is well formed but not allowed in the current state.
class Conflict : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Review gate still open when the wait ran out; the iteration is persisted
/// in the awaiting_review state and can be resumed.
class ReviewPending : public std::runtime_error {
public:
    ReviewPending(int iteration, std::size_t pending);
    int iteration;
    std::size_t pending;
};

struct WorkflowConfig {
    int tile_size = 512;
    int grid_rows = 0; // 0: smallest grid that covers the image
    int grid_cols = 0;
    int downscale = 2;
    int base_filters = 64;
    int discriminator_blocks = 4;
    std::int64_t train_steps = 1000;
    int batch_size = 1;
    double learning_rate = 2e-4;
    double lambda = 100.0;
    std::int64_t checkpoint_interval = 250;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    int model_size() const { return tile_size / downscale; }
    void validate() const;
};

enum class AnnotationStatus { seed, predicted, corrected, approved };
std::string to_string(AnnotationStatus s);
AnnotationStatus annotation_status_from_string(const std::string& s);

struct ImageRecord {
    std::string id;
    std::string path;
    int width = 0, height = 0, channels = 1;
    std::string provenance; // raw | synthetic
};

struct TileRecord {
    std::string id;
    std::string image_id;
    int origin_row = 0, origin_col = 0;
    int size = 0;       // side in source pixels
    std::string path;   // model-resolution tile image
};

struct AnnotationRecord {
    std::string tile_id;
    std::string mask;   // model-resolution mask PNG
    AnnotationStatus status = AnnotationStatus::seed;
    int iteration = 0;
    std::string prediction; // raw generator output PNG, when predicted
};

struct CorrectionRecord {
    std::string request_id;
    std::string tile_id;
    std::vector<CorrectionPoint> points;
    bool approve = false;
    std::string response; // exact reply body, returned again on replay
};

struct CheckpointRecord {
    std::string id;
    std::string path;
    std::int64_t step = 0;
    int iteration = 0;
};

struct RankingEntry {
    std::string checkpoint;
    std::int64_t step = 0;
    double mean_ssim = 0.0;
    double median_ssim = 0.0;
    double mean_pixel_accuracy = 0.0;
};

enum class IterationState { awaiting_review, training, complete };
std::string to_string(IterationState s);

/// One pass of the loop; doubles as the iteration report.
struct IterationRecord {
    int index = 0;
    IterationState state = IterationState::complete;
    std::vector<std::string> batch;
    std::vector<RankingEntry> rankings;
    std::string selected_checkpoint;
    double mean_ssim = 0.0;
    std::size_t newly_annotated = 0;
    std::size_t corrected = 0;
    std::size_t before = 0;
    std::size_t after = 0;
    std::size_t train_set_size = 0;
    std::string statistics; // report path once computed
};

struct DatasetManifest {
    int version = 1;
    WorkflowConfig config;
    std::vector<ImageRecord> images;
    std::vector<TileRecord> tiles;
    std::vector<AnnotationRecord> annotations;
    std::vector<CorrectionRecord> corrections;
    std::vector<CheckpointRecord> checkpoints;
    std::vector<IterationRecord> iterations;
    std::vector<std::string> validation; // tile ids held out for ranking

    const TileRecord* find_tile(const std::string& id) const;
    const AnnotationRecord* find_annotation(const std::string& tile_id) const;
    AnnotationRecord* find_annotation(const std::string& tile_id);
    const CorrectionRecord* find_correction(const std::string& request_id) const;
    const CheckpointRecord* find_checkpoint(const std::string& id) const;

    /// Returns every invariant violation (empty when valid).
    std::vector<std::string> problems() const;
    /// Throws ManifestError when problems() is not empty.
    void validate() const;
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);
std::string iteration_to_json(const IterationRecord& r);
std::string correction_point_json(const CorrectionPoint& p);

struct AdvanceOptions {
    bool auto_approve = false;
    /// How long to wait for reviews before suspending the iteration.
    std::chrono::milliseconds timeout{0};
};

struct StatisticsResult {
    StatisticsReport report;
    std::vector<MeltPool> pools;
    std::string json;
};

/// Runs geometry statistics over a set of masks, pooling every region.
StatisticsResult statistics_for_masks(const std::vector<AnnotationMask>& masks, const PoolAnalysisOptions& opts = {});

/// A workspace directory holding manifest.json plus content-addressed
/// images, masks and checkpoints. All mutations serialize on one lock and
/// rewrite the manifest atomically; the lock is released while training.
class Workflow {
public:
    /// Creates a new workspace (the directory must not hold a manifest yet).
    static Workflow create(const std::filesystem::path& dir, const WorkflowConfig& cfg);
    /// Opens an existing workspace.
    explicit Workflow(const std::filesystem::path& dir);

    Workflow(Workflow&&) noexcept;
    Workflow& operator=(Workflow&&) = delete;

    const std::filesystem::path& directory() const { return dir_; }
    DatasetManifest snapshot() const;

    /// Tiles the image, stores model-resolution tiles and returns their ids.
    std::vector<std::string> add_image(const RawImage& img, const std::string& provenance,
                                       const std::string& id = {});
    /// Stores a mask for a tile that has no annotation yet.
    void set_annotation(const std::string& tile_id, const AnnotationMask& mask, AnnotationStatus status);
    /// Thresholding seed annotations for the given tiles (all unannotated when empty).
    std::vector<std::string> seed_tiles(std::vector<std::string> tile_ids, bool approve, const SeedOptions& opts = {});

    /// Iteration 0: fixes the validation split and trains from scratch on the
    /// approved tiles.
    IterationRecord bootstrap();

    /// Throws the error advance_iteration would raise for this batch, without
    /// changing anything.
    void check_batch(const std::vector<std::string>& batch) const;
    IterationRecord advance_iteration(const std::vector<std::string>& batch, const AdvanceOptions& opts = {});
    /// Continues an iteration suspended at the review gate.
    IterationRecord resume_iteration(const AdvanceOptions& opts = {});

    /// Applies split/merge points to a tile's mask. Replaying a request id
    /// returns the stored reply without touching the mask.
    std::string ingest_corrections(const std::string& tile_id, const std::vector<CorrectionPoint>& points,
                                   const std::string& request_id, bool approve);

    StatisticsResult run_statistics(int iteration);

    std::vector<CheckpointScore> rank_checkpoints() const;
    std::vector<ImagePair> pairs_for(const std::vector<std::string>& tile_ids) const;
    AnnotationMask load_mask(const std::string& tile_id) const;
    RawImage load_tile(const std::string& tile_id) const;
    NetworkCheckpoint load_network(const std::string& checkpoint_id) const;

    /// Unannotated tiles in manifest order.
    std::vector<std::string> unseen_tiles() const;

    /// Absolute path of a manifest-relative file.
    std::filesystem::path resolve(const std::string& rel) const { return dir_ / rel; }

private:
    Workflow(std::filesystem::path dir, DatasetManifest m);

    /// Validates `next`, writes it atomically, then adopts it.
    void commit(DatasetManifest next);
    std::string store_mask(const AnnotationMask& mask);
    std::string store_png(const std::string& folder, const RawImage& img);
    std::string store_checkpoint(const NetworkCheckpoint& net, int iteration);
    std::vector<std::string> training_tiles() const;
    void save_loss(const LossHistory& h, int iteration) const;
    IterationRecord finish_iteration(std::unique_lock<std::mutex>& lock, const AdvanceOptions& opts);
    void check_batch_locked(const std::vector<std::string>& batch) const;

    std::filesystem::path dir_;
    DatasetManifest m_;
    mutable std::mutex mu_;
    std::condition_variable reviewed_;
    bool training_ = false;
};

} // namespace meltpool
