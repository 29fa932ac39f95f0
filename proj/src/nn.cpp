#include "meltpool/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meltpool::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

Param::Param(std::string n, std::vector<int> s, double fill, bool train)
    : name(std::move(n)), shape(std::move(s)), trainable(train) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, fill);
    if (trainable) grad.assign(count, 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void init_normal(Param& p, double mean, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(mean, stddev);
    for (double& v : p.value) v = dist(rng);
}

namespace {

struct Geometry {
    int channels, height, width, kernel, stride, pad_begin, pad_end, out_h, out_w;
};

// Columns are output positions; rows are (channel, ky, kx).
void im2col(const double* img, const Geometry& g, double* col) {
    const int k = g.kernel;
    const std::size_t cols = static_cast<std::size_t>(g.out_h) * g.out_w;
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad_begin + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad_begin + kx;
                        dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
                    }
                }
            }
}

void col2im(const double* col, const Geometry& g, double* img) {
    const int k = g.kernel;
    const std::size_t cols = static_cast<std::size_t>(g.out_h) * g.out_w;
    std::fill(img, img + static_cast<std::size_t>(g.channels) * g.height * g.width, 0.0);
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad_begin + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    double* dst = img + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
                    const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad_begin + kx;
                        if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
                    }
                }
            }
}

} // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in, int out, int k, int s, int pb, int pe)
    : in_channels(in), out_channels(out), kernel(k), stride(s), pad_begin(pb), pad_end(pe),
      weight(name + ".weight", {out, in, k, k}), bias(name + ".bias", {out}) {}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.c != in_channels) throw std::invalid_argument("conv2d: channel mismatch");
    const Geometry g{in_channels, x.h, x.w, kernel, stride, pad_begin, pad_end, output_size(x.h), output_size(x.w)};
    Tensor y(x.n, out_channels, g.out_h, g.out_w);
    const int rows = in_channels * kernel * kernel;
    const int cols = g.out_h * g.out_w;
    std::vector<double> col(static_cast<std::size_t>(rows) * cols);
    ConstMatMap W(weight.value.data(), out_channels, rows);
    for (int i = 0; i < x.n; ++i) {
        im2col(x.sample(i), g, col.data());
        MatMap Y(y.sample(i), out_channels, cols);
        Y.noalias() = W * ConstMatMap(col.data(), rows, cols);
        for (int o = 0; o < out_channels; ++o) Y.row(o).array() += bias.value[o];
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool need_input_grad) {
    const Geometry g{in_channels, x.h, x.w, kernel, stride, pad_begin, pad_end, dy.h, dy.w};
    const int rows = in_channels * kernel * kernel;
    const int cols = g.out_h * g.out_w;
    std::vector<double> col(static_cast<std::size_t>(rows) * cols);
    MatMap dW(weight.grad.data(), out_channels, rows);
    ConstMatMap W(weight.value.data(), out_channels, rows);
    Tensor dx;
    if (need_input_grad) dx = Tensor(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i) {
        im2col(x.sample(i), g, col.data());
        ConstMatMap dY(dy.sample(i), out_channels, cols);
        dW.noalias() += dY * ConstMatMap(col.data(), rows, cols).transpose();
        for (int o = 0; o < out_channels; ++o) bias.grad[o] += dY.row(o).sum();
        if (need_input_grad) {
            MatMap C(col.data(), rows, cols);
            C.noalias() = W.transpose() * dY;
            col2im(col.data(), g, dx.sample(i));
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(std::string name, int in, int out, int k, int s, int p)
    : in_channels(in), out_channels(out), kernel(k), stride(s), pad(p),
      weight(name + ".weight", {in, out, k, k}), bias(name + ".bias", {out}) {}

// A transposed convolution is the input-gradient of the matching forward
// convolution whose input is our output.
Tensor ConvTranspose2d::forward(const Tensor& x) const {
    if (x.c != in_channels) throw std::invalid_argument("conv_transpose2d: channel mismatch");
    const int oh = output_size(x.h), ow = output_size(x.w);
    const Geometry g{out_channels, oh, ow, kernel, stride, pad, pad, x.h, x.w};
    Tensor y(x.n, out_channels, oh, ow);
    const int rows = out_channels * kernel * kernel;
    const int cols = x.h * x.w;
    std::vector<double> col(static_cast<std::size_t>(rows) * cols);
    ConstMatMap W(weight.value.data(), in_channels, rows);
    for (int i = 0; i < x.n; ++i) {
        MatMap C(col.data(), rows, cols);
        C.noalias() = W.transpose() * ConstMatMap(x.sample(i), in_channels, cols);
        col2im(col.data(), g, y.sample(i));
        MatMap Y(y.sample(i), out_channels, static_cast<Eigen::Index>(oh) * ow);
        for (int o = 0; o < out_channels; ++o) Y.row(o).array() += bias.value[o];
    }
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& x, const Tensor& dy, bool need_input_grad) {
    const Geometry g{out_channels, dy.h, dy.w, kernel, stride, pad, pad, x.h, x.w};
    const int rows = out_channels * kernel * kernel;
    const int cols = x.h * x.w;
    std::vector<double> col(static_cast<std::size_t>(rows) * cols);
    MatMap dW(weight.grad.data(), in_channels, rows);
    ConstMatMap W(weight.value.data(), in_channels, rows);
    Tensor dx;
    if (need_input_grad) dx = Tensor(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i) {
        im2col(dy.sample(i), g, col.data());
        ConstMatMap C(col.data(), rows, cols);
        ConstMatMap X(x.sample(i), in_channels, cols);
        dW.noalias() += X * C.transpose();
        ConstMatMap dY(dy.sample(i), out_channels, static_cast<Eigen::Index>(dy.h) * dy.w);
        for (int o = 0; o < out_channels; ++o) bias.grad[o] += dY.row(o).sum();
        if (need_input_grad) {
            MatMap dX(dx.sample(i), in_channels, cols);
            dX.noalias() = W * C;
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, int ch)
    : channels(ch), gamma(name + ".gamma", {ch}, 1.0), beta(name + ".beta", {ch}, 0.0),
      running_mean(name + ".running_mean", {ch}, 0.0, false), running_var(name + ".running_var", {ch}, 1.0, false) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool train, BatchNormCache& cache) {
    if (x.c != channels) throw std::invalid_argument("batchnorm: channel mismatch");
    Tensor y(x.n, x.c, x.h, x.w);
    cache.train = train;
    cache.mean.assign(channels, 0.0);
    cache.inv_std.assign(channels, 0.0);
    cache.xhat = Tensor(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.plane();
    const double count = static_cast<double>(x.n) * plane;
    for (int c = 0; c < channels; ++c) {
        double mean, var;
        if (train) {
            double s = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const double* p = x.sample(i) + c * plane;
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
            }
            mean = s / count;
            double ss = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const double* p = x.sample(i) + c * plane;
                for (std::size_t k = 0; k < plane; ++k) ss += (p[k] - mean) * (p[k] - mean);
            }
            var = ss / count;
            running_mean.value[c] = (1.0 - momentum) * running_mean.value[c] + momentum * mean;
            running_var.value[c] = (1.0 - momentum) * running_var.value[c] + momentum * var;
        } else {
            mean = running_mean.value[c];
            var = running_var.value[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps);
        cache.mean[c] = mean;
        cache.inv_std[c] = inv_std;
        for (int i = 0; i < x.n; ++i) {
            const double* p = x.sample(i) + c * plane;
            double* h = cache.xhat.sample(i) + c * plane;
            double* q = y.sample(i) + c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                h[k] = (p[k] - mean) * inv_std;
                q[k] = gamma.value[c] * h[k] + beta.value[c];
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::infer(const Tensor& x) const {
    Tensor y = x;
    const std::size_t plane = x.plane();
    for (int c = 0; c < channels; ++c) {
        const double inv_std = 1.0 / std::sqrt(running_var.value[c] + eps);
        const double scale = gamma.value[c] * inv_std;
        const double shift = beta.value[c] - running_mean.value[c] * scale;
        for (int i = 0; i < x.n; ++i) {
            double* q = y.sample(i) + c * plane;
            for (std::size_t k = 0; k < plane; ++k) q[k] = q[k] * scale + shift;
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const BatchNormCache& cache, const Tensor& dy) {
    const Tensor& xh = cache.xhat;
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    const std::size_t plane = dy.plane();
    const double count = static_cast<double>(dy.n) * plane;
    for (int c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (int i = 0; i < dy.n; ++i) {
            const double* g = dy.sample(i) + c * plane;
            const double* h = xh.sample(i) + c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                sum_dy += g[k];
                sum_dy_xh += g[k] * h[k];
            }
        }
        beta.grad[c] += sum_dy;
        gamma.grad[c] += sum_dy_xh;
        const double scale = gamma.value[c] * cache.inv_std[c];
        for (int i = 0; i < dy.n; ++i) {
            const double* g = dy.sample(i) + c * plane;
            const double* h = xh.sample(i) + c * plane;
            double* d = dx.sample(i) + c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                d[k] = cache.train ? scale * (g[k] - sum_dy / count - h[k] * sum_dy_xh / count) : scale * g[k];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------

Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor y = x;
    for (double& v : y.v)
        if (v < 0.0) v *= slope;
    return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        if (x.v[i] < 0.0) dx.v[i] *= slope;
    return dx;
}

Tensor tanh_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.v) v = std::tanh(v);
    return y;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= 1.0 - y.v[i] * y.v[i];
    return dx;
}

Tensor sigmoid_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.v) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= y.v[i] * (1.0 - y.v[i]);
    return dx;
}

Tensor dropout_forward(const Tensor& x, double rate, Rng& rng, std::vector<double>& mask) {
    Tensor y = x;
    mask.assign(x.v.size(), 1.0);
    if (rate <= 0.0) return y;
    const double keep_scale = rate >= 1.0 ? 0.0 : 1.0 / (1.0 - rate);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < y.v.size(); ++i) {
        mask[i] = u(rng) < rate ? 0.0 : keep_scale;
        y.v[i] *= mask[i];
    }
    return y;
}

Tensor dropout_backward(const std::vector<double>& mask, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= mask[i];
    return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w) throw std::invalid_argument("concat: spatial or batch mismatch");
    Tensor out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t pa = static_cast<std::size_t>(a.c) * a.plane();
    const std::size_t pb = static_cast<std::size_t>(b.c) * b.plane();
    for (int i = 0; i < a.n; ++i) {
        std::copy(a.sample(i), a.sample(i) + pa, out.sample(i));
        std::copy(b.sample(i), b.sample(i) + pb, out.sample(i) + pa);
    }
    return out;
}

void split_channels(const Tensor& d, int channels_a, Tensor& da, Tensor& db) {
    da = Tensor(d.n, channels_a, d.h, d.w);
    db = Tensor(d.n, d.c - channels_a, d.h, d.w);
    const std::size_t pa = static_cast<std::size_t>(channels_a) * d.plane();
    const std::size_t pb = static_cast<std::size_t>(d.c - channels_a) * d.plane();
    for (int i = 0; i < d.n; ++i) {
        std::copy(d.sample(i), d.sample(i) + pa, da.sample(i));
        std::copy(d.sample(i) + pa, d.sample(i) + pa + pb, db.sample(i));
    }
}

} // namespace meltpool::nn
