#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meltpool/image.hpp"
#include "meltpool/nn.hpp"

namespace meltpool {

struct GeneratorConfig {
    int input_size = 256;
    int block_count = 8;
    int base_filters = 64;
    int filter_cap = 512;
    double dropout_rate = 0.5;
    int dropout_blocks = 3;

    /// Channel width of encoder block `j` (and of the mirrored decoder block).
    int encoder_channels(int j) const;
    void validate() const;
};

struct DiscriminatorConfig {
    int input_size = 256;
    int down_blocks = 4;
    int base_filters = 64;
    int filter_cap = 512;

    int final_map() const { return input_size >> down_blocks; }
    int channels(int j) const;
    void validate() const;
};

/// Default-sized configurations for a given input resolution.
GeneratorConfig generator_config_for(int input_size, int base_filters = 64);
DiscriminatorConfig discriminator_config_for(int input_size, int down_blocks, int base_filters = 64);

enum class Mode { train, inference };

/// Everything the generator backward pass needs from its forward pass.
struct GeneratorTape {
    bool train = false;
    nn::Tensor input;
    std::vector<nn::Tensor> enc_in, enc_pre, enc_out;
    std::vector<nn::BatchNormCache> enc_bn;
    std::vector<nn::Tensor> dec_in, dec_pre_drop, dec_out;
    std::vector<nn::BatchNormCache> dec_bn;
    std::vector<std::vector<double>> dropout_masks;
    nn::Tensor output;
};

class Generator {
public:
    Generator() = default;
    explicit Generator(const GeneratorConfig& cfg);

    const GeneratorConfig& config() const { return cfg_; }

    /// Runs the U-Net. Train mode uses batch statistics and draws dropout
    /// masks from `rng` (required in train mode when dropout is enabled).
    GeneratorTape forward(const nn::Tensor& x, Mode mode, nn::Rng* rng);
    nn::Tensor predict(const nn::Tensor& x) const;

    /// Accumulates parameter gradients from dL/d(output).
    void backward(const GeneratorTape& tape, const nn::Tensor& d_output);

    void initialize(nn::Rng& rng);
    std::vector<nn::Param*> parameters();
    std::vector<const nn::Param*> parameters() const;
    void zero_grad();

    /// Spatial side of each encoder activation (bottleneck last).
    std::vector<int> encoder_sizes() const;

private:
    GeneratorConfig cfg_;
    std::vector<nn::Conv2d> enc_;
    std::vector<std::optional<nn::BatchNorm2d>> enc_bn_;
    std::vector<nn::ConvTranspose2d> dec_;
    std::vector<std::optional<nn::BatchNorm2d>> dec_bn_;
};

struct DiscriminatorTape {
    bool train = false;
    int x_channels = 0;
    nn::Tensor input;
    std::vector<nn::Tensor> block_in, block_pre;
    std::vector<nn::BatchNormCache> bn;
    nn::Tensor final_in;
    nn::Tensor probs;
};

class Discriminator {
public:
    Discriminator() = default;
    explicit Discriminator(const DiscriminatorConfig& cfg);

    const DiscriminatorConfig& config() const { return cfg_; }

    DiscriminatorTape forward(const nn::Tensor& x, const nn::Tensor& y, Mode mode);
    nn::Tensor predict(const nn::Tensor& x, const nn::Tensor& y) const;

    /// Accumulates parameter gradients (when `accumulate_params`) and returns
    /// dL/dy, the gradient reaching the judged image.
    nn::Tensor backward(const DiscriminatorTape& tape, const nn::Tensor& d_probs, bool accumulate_params);

    void initialize(nn::Rng& rng);
    std::vector<nn::Param*> parameters();
    std::vector<const nn::Param*> parameters() const;
    void zero_grad();

private:
    DiscriminatorConfig cfg_;
    std::vector<nn::Conv2d> blocks_;
    std::vector<std::optional<nn::BatchNorm2d>> bn_;
    nn::Conv2d final_;
};

struct LossWeights {
    double lambda = 100.0;
};

constexpr double kLogEpsilon = 1e-7;

struct Losses {
    double d_real = 0.0;  // -mean log D(x, y)
    double d_fake = 0.0;  // -mean log(1 - D(x, G(x)))
    double d_loss = 0.0;  // d_real + d_fake
    double g_adv = 0.0;
    double g_l1 = 0.0;
    double g_total = 0.0;
};

/// Conditional adversarial objective plus the weighted L1 term.
/// `saturating` switches the generator term to mean log(1 - D(x, G(x))).
Losses compute_losses(const nn::Tensor& d_real, const nn::Tensor& d_fake, const nn::Tensor& y,
                      const nn::Tensor& g_out, const LossWeights& w, bool saturating = false);

/// Gradients of the loss terms with respect to their tensor inputs.
nn::Tensor grad_d_loss_real(const nn::Tensor& d_real);
nn::Tensor grad_d_loss_fake(const nn::Tensor& d_fake);
nn::Tensor grad_g_adv(const nn::Tensor& d_fake, bool saturating = false);
nn::Tensor grad_g_l1(const nn::Tensor& y, const nn::Tensor& g_out, double lambda);

nn::Tensor to_tensor(const ModelImage& m);
nn::Tensor to_tensor(const std::vector<const ModelImage*>& batch);
ModelImage to_model_image(const nn::Tensor& t, int index = 0);

/// Convenience single-image entry points.
ModelImage generator_forward(Generator& g, const ModelImage& x, Mode mode, nn::Rng* rng = nullptr);
nn::Tensor discriminator_forward(Discriminator& d, const ModelImage& x, const ModelImage& y);

/// Both networks plus training progress.
struct NetworkCheckpoint {
    Generator generator;
    Discriminator discriminator;
    std::int64_t step = 0;
    std::uint64_t config_hash = 0;
};

std::uint64_t config_hash(const GeneratorConfig& g, const DiscriminatorConfig& d);
NetworkCheckpoint make_networks(const GeneratorConfig& g, const DiscriminatorConfig& d, std::uint64_t seed);

} // namespace meltpool
