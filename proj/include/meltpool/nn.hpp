#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace meltpool::nn {

using Rng = std::mt19937_64;

/// Dense NCHW tensor of doubles.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    double* sample(int i) { return v.data() + static_cast<std::size_t>(i) * c * plane(); }
    const double* sample(int i) const { return v.data() + static_cast<std::size_t>(i) * c * plane(); }
    double& at(int i, int ch, int y, int x) { return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
    double at(int i, int ch, int y, int x) const { return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// A named parameter tensor. Buffers (running statistics) are not trainable
/// and carry no gradient.
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;

    Param() = default;
    Param(std::string n, std::vector<int> s, double fill = 0.0, bool train = true);
    std::size_t size() const { return value.size(); }
    void zero_grad();
};

void init_normal(Param& p, double mean, double stddev, Rng& rng);

/// 2-D convolution with a square kernel and independent leading/trailing
/// zero padding, so stride-1 "same" output works for even kernels.
struct Conv2d {
    int in_channels = 0, out_channels = 0, kernel = 4, stride = 2, pad_begin = 1, pad_end = 1;
    Param weight; // [out][in][k][k]
    Param bias;   // [out]

    Conv2d() = default;
    Conv2d(std::string name, int in, int out, int kernel, int stride, int pad_begin, int pad_end);

    int output_size(int in_size) const { return (in_size + pad_begin + pad_end - kernel) / stride + 1; }
    Tensor forward(const Tensor& x) const;
    /// Accumulates weight/bias gradients; returns dL/dx when `need_input_grad`.
    Tensor backward(const Tensor& x, const Tensor& dy, bool need_input_grad);
};

/// Transposed convolution (stride-2 upsampling in the generator decoder).
struct ConvTranspose2d {
    int in_channels = 0, out_channels = 0, kernel = 4, stride = 2, pad = 1;
    Param weight; // [in][out][k][k]
    Param bias;   // [out]

    ConvTranspose2d() = default;
    ConvTranspose2d(std::string name, int in, int out, int kernel, int stride, int pad);

    int output_size(int in_size) const { return (in_size - 1) * stride - 2 * pad + kernel; }
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& dy, bool need_input_grad);
};

struct BatchNormCache {
    std::vector<double> mean, inv_std;
    Tensor xhat;
    bool train = false;
};

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics and updates the running estimates; inference uses the latter.
struct BatchNorm2d {
    int channels = 0;
    double momentum = 0.1;
    double eps = 1e-5;
    Param gamma, beta, running_mean, running_var;

    BatchNorm2d() = default;
    BatchNorm2d(std::string name, int channels);

    Tensor forward(const Tensor& x, bool train, BatchNormCache& cache);
    Tensor infer(const Tensor& x) const;
    Tensor backward(const BatchNormCache& cache, const Tensor& dy);
};

Tensor leaky_relu(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope);
Tensor tanh_forward(const Tensor& x);
Tensor tanh_backward(const Tensor& y, const Tensor& dy);
Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

/// Inverted dropout; `mask` receives the per-element multiplier (0 or 1/(1-rate)).
Tensor dropout_forward(const Tensor& x, double rate, Rng& rng, std::vector<double>& mask);
Tensor dropout_backward(const std::vector<double>& mask, const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits a channel-concatenated gradient back into its two parts.
void split_channels(const Tensor& d, int channels_a, Tensor& da, Tensor& db);

} // namespace meltpool::nn
