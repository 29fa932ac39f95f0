#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "meltpool/model.hpp"

namespace meltpool {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::int64_t steps = 1000;
    int batch_size = 1;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double lambda = 100.0;
    std::int64_t checkpoint_interval = 100;
    std::uint64_t seed = 0;
    bool saturating = false;
    /// Trailing fraction of the run over which the learning rate falls
    /// linearly to zero; 0 keeps it constant.
    double decay_fraction = 0.0;
    /// Depth of the batch prefetch queue; 0 assembles batches inline.
    int prefetch = 0;

    void validate() const;
    /// Learning rate for local step s in [1, steps].
    double learning_rate_at(std::int64_t s) const;
};

struct LossRecord {
    std::int64_t step = 0;
    double d_real = 0.0;
    double d_fake = 0.0;
    double g_total = 0.0;
    double g_adv = 0.0;
    double g_l1 = 0.0;
};

struct LossHistory {
    std::vector<LossRecord> records;

    void write_csv(const std::filesystem::path& path) const;
    static LossHistory read_csv(const std::filesystem::path& path);
};

/// Longest run of consecutive steps whose g_total exceeds `factor` times the
/// median of the preceding `window` steps.
std::int64_t longest_spike_run(const LossHistory& h, int window = 100, double factor = 10.0);

class Adam {
public:
    Adam() = default;
    Adam(std::vector<nn::Param*> params, double lr, double beta1, double beta2, double eps = 1e-8);

    void step();
    void set_learning_rate(double lr) { lr_ = lr; }
    std::int64_t iterations() const { return t_; }
    /// True while every first and second moment estimate is finite.
    bool moments_finite() const;

private:
    std::vector<nn::Param*> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_ = 2e-4, b1_ = 0.5, b2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
};

/// Owns the networks and optimizer state for one training run.
class Trainer {
public:
    Trainer(NetworkCheckpoint net, const TrainConfig& cfg);

    /// One discriminator update followed by one generator update.
    LossRecord step(const nn::Tensor& x, const nn::Tensor& y);
    LossRecord step(const std::vector<const ImagePair*>& batch);

    const NetworkCheckpoint& network() const { return net_; }
    NetworkCheckpoint& network() { return net_; }
    std::int64_t steps_done() const { return net_.step; }
    void set_learning_rate(double lr) {
        g_opt_.set_learning_rate(lr);
        d_opt_.set_learning_rate(lr);
    }

private:
    NetworkCheckpoint net_;
    TrainConfig cfg_;
    Adam g_opt_, d_opt_;
    nn::Rng rng_;
};

using CheckpointSink = std::function<void(const NetworkCheckpoint&)>;

struct TrainResult {
    /// Snapshots at every interval; left empty when a sink consumes them.
    std::vector<NetworkCheckpoint> checkpoints;
    std::vector<std::int64_t> checkpoint_steps;
    LossHistory history;
    NetworkCheckpoint final;
};

/// Seeded epoch order: each epoch is a fresh permutation, the remainder that
/// does not fill a batch is dropped. Returns `steps` batches of indices.
std::vector<std::vector<std::size_t>> batch_schedule(std::size_t dataset_size, const TrainConfig& cfg);

TrainResult train(const std::vector<ImagePair>& dataset, NetworkCheckpoint init, const TrainConfig& cfg,
                  const CheckpointSink& sink = {});

} // namespace meltpool
