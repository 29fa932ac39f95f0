#include "meltpool/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace meltpool {

using nn::Tensor;

namespace {

constexpr double kLeakySlope = 0.2;

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

Tensor relu_backward(const Tensor& x, const Tensor& dy) { return nn::leaky_relu_backward(x, dy, 0.0); }

void check_finite(const std::vector<nn::Param*>& params) {
    for (const auto* p : params)
        for (double v : p->value)
            if (!std::isfinite(v)) throw InvalidInput("non-finite parameter in " + p->name);
}

void add_into(Tensor& acc, const Tensor& t) {
    if (acc.v.empty()) {
        acc = t;
        return;
    }
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += t.v[i];
}

} // namespace

// ---------------------------------------------------------------------------

int GeneratorConfig::encoder_channels(int j) const {
    long c = base_filters;
    for (int k = 0; k < j && c < filter_cap; ++k) c *= 2;
    return static_cast<int>(std::min<long>(c, filter_cap));
}

void GeneratorConfig::validate() const {
    if (!is_power_of_two(input_size)) throw InvalidInput("generator input size must be a power of two");
    if ((1 << block_count) != input_size) throw InvalidInput("generator block count must equal log2(input size)");
    if (block_count < 2) throw InvalidInput("generator needs at least two blocks");
    if (base_filters < 1 || filter_cap < base_filters) throw InvalidInput("invalid generator filter widths");
    if (dropout_rate < 0.0 || dropout_rate > 1.0) throw InvalidInput("dropout rate must lie in [0, 1]");
    if (dropout_blocks < 0 || dropout_blocks > block_count) throw InvalidInput("dropout blocks exceed block count");
}

int DiscriminatorConfig::channels(int j) const {
    long c = base_filters;
    for (int k = 0; k < j && c < filter_cap; ++k) c *= 2;
    return static_cast<int>(std::min<long>(c, filter_cap));
}

void DiscriminatorConfig::validate() const {
    if (!is_power_of_two(input_size)) throw InvalidInput("discriminator input size must be a power of two");
    if (down_blocks < 1 || (input_size >> down_blocks) < 1 || (input_size >> down_blocks) << down_blocks != input_size)
        throw InvalidInput("discriminator down blocks must leave a map of at least 1x1");
    if (base_filters < 1 || filter_cap < base_filters) throw InvalidInput("invalid discriminator filter widths");
}

GeneratorConfig generator_config_for(int input_size, int base_filters) {
    GeneratorConfig g;
    g.input_size = input_size;
    g.block_count = 0;
    while ((1 << g.block_count) < input_size) ++g.block_count;
    g.base_filters = base_filters;
    g.filter_cap = std::max(base_filters, 8 * base_filters);
    g.dropout_blocks = std::min(3, g.block_count - 1);
    return g;
}

DiscriminatorConfig discriminator_config_for(int input_size, int down_blocks, int base_filters) {
    DiscriminatorConfig d;
    d.input_size = input_size;
    d.down_blocks = down_blocks;
    d.base_filters = base_filters;
    d.filter_cap = std::max(base_filters, 8 * base_filters);
    return d;
}

// ---------------------------------------------------------------------------

Generator::Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int L = cfg_.block_count;
    int in = 3;
    for (int j = 0; j < L; ++j) {
        const int out = cfg_.encoder_channels(j);
        enc_.emplace_back("gen.enc" + std::to_string(j), in, out, 4, 2, 1, 1);
        // No normalization on the first block or on the 1x1 bottleneck.
        if (j > 0 && j < L - 1)
            enc_bn_.emplace_back(nn::BatchNorm2d("gen.enc" + std::to_string(j) + ".bn", out));
        else
            enc_bn_.emplace_back(std::nullopt);
        in = out;
    }
    for (int i = 0; i < L; ++i) {
        const int skip = i == 0 ? 0 : cfg_.encoder_channels(L - 1 - i);
        const int dec_in = i == 0 ? cfg_.encoder_channels(L - 1) : 2 * skip;
        const int out = i == L - 1 ? 3 : cfg_.encoder_channels(L - 2 - i);
        dec_.emplace_back("gen.dec" + std::to_string(i), dec_in, out, 4, 2, 1);
        if (i < L - 1)
            dec_bn_.emplace_back(nn::BatchNorm2d("gen.dec" + std::to_string(i) + ".bn", out));
        else
            dec_bn_.emplace_back(std::nullopt);
    }
}

std::vector<int> Generator::encoder_sizes() const {
    std::vector<int> sizes;
    int s = cfg_.input_size;
    for (std::size_t j = 0; j < enc_.size(); ++j) {
        s = enc_[j].output_size(s);
        sizes.push_back(s);
    }
    return sizes;
}

GeneratorTape Generator::forward(const Tensor& x, Mode mode, nn::Rng* rng) {
    if (x.c != 3 || x.h != cfg_.input_size || x.w != cfg_.input_size)
        throw InvalidInput("generator input must be " + std::to_string(cfg_.input_size) + "x" +
                           std::to_string(cfg_.input_size) + "x3");
    const bool train = mode == Mode::train;
    const int L = cfg_.block_count;
    const int drop_blocks = std::min(cfg_.dropout_blocks, L - 1);
    if (train && drop_blocks > 0 && cfg_.dropout_rate > 0.0 && rng == nullptr)
        throw InvalidInput("train-mode generator forward needs a random source for dropout");

    GeneratorTape t;
    t.train = train;
    t.input = x;
    t.enc_in.resize(L);
    t.enc_pre.resize(L);
    t.enc_out.resize(L);
    t.enc_bn.resize(L);
    Tensor h = x;
    for (int j = 0; j < L; ++j) {
        t.enc_in[j] = h;
        Tensor z = enc_[j].forward(h);
        if (enc_bn_[j]) z = train ? enc_bn_[j]->forward(z, true, t.enc_bn[j]) : enc_bn_[j]->infer(z);
        t.enc_pre[j] = z;
        h = nn::leaky_relu(z, j < L - 1 ? kLeakySlope : 0.0);
        t.enc_out[j] = h;
    }

    t.dec_in.resize(L);
    t.dec_pre_drop.resize(L);
    t.dec_out.resize(L);
    t.dec_bn.resize(L);
    t.dropout_masks.resize(L);
    for (int i = 0; i < L; ++i) {
        Tensor in = i == 0 ? t.enc_out[L - 1] : nn::concat_channels(t.dec_out[i - 1], t.enc_out[L - 1 - i]);
        Tensor z = dec_[i].forward(in);
        t.dec_in[i] = std::move(in);
        if (i == L - 1) {
            t.output = nn::tanh_forward(z);
            t.dec_out[i] = t.output;
            break;
        }
        z = train ? dec_bn_[i]->forward(z, true, t.dec_bn[i]) : dec_bn_[i]->infer(z);
        if (train && i < drop_blocks && cfg_.dropout_rate > 0.0)
            z = nn::dropout_forward(z, cfg_.dropout_rate, *rng, t.dropout_masks[i]);
        t.dec_pre_drop[i] = z;
        t.dec_out[i] = nn::leaky_relu(z, 0.0);
    }
    return t;
}

Tensor Generator::predict(const Tensor& x) const {
    if (x.c != 3 || x.h != cfg_.input_size || x.w != cfg_.input_size)
        throw InvalidInput("generator input size mismatch");
    const int L = cfg_.block_count;
    std::vector<Tensor> enc(L);
    Tensor h = x;
    for (int j = 0; j < L; ++j) {
        Tensor z = enc_[j].forward(h);
        if (enc_bn_[j]) z = enc_bn_[j]->infer(z);
        h = nn::leaky_relu(z, j < L - 1 ? kLeakySlope : 0.0);
        enc[j] = h;
    }
    Tensor d;
    for (int i = 0; i < L; ++i) {
        Tensor in = i == 0 ? enc[L - 1] : nn::concat_channels(d, enc[L - 1 - i]);
        Tensor z = dec_[i].forward(in);
        if (i == L - 1) return nn::tanh_forward(z);
        d = nn::leaky_relu(dec_bn_[i]->infer(z), 0.0);
    }
    return d;
}

void Generator::backward(const GeneratorTape& t, const Tensor& d_output) {
    if (!t.train) throw InvalidInput("generator backward needs a train-mode forward pass");
    const int L = cfg_.block_count;
    std::vector<Tensor> g_enc(L);
    Tensor g = d_output;
    for (int i = L - 1; i >= 0; --i) {
        Tensor gz;
        if (i == L - 1) {
            gz = nn::tanh_backward(t.output, g);
        } else {
            Tensor gr = relu_backward(t.dec_pre_drop[i], g);
            if (!t.dropout_masks[i].empty()) gr = nn::dropout_backward(t.dropout_masks[i], gr);
            gz = dec_bn_[i]->backward(t.dec_bn[i], gr);
        }
        Tensor gin = dec_[i].backward(t.dec_in[i], gz, true);
        if (i == 0) {
            add_into(g_enc[L - 1], gin);
        } else {
            Tensor g_prev, g_skip;
            nn::split_channels(gin, t.dec_out[i - 1].c, g_prev, g_skip);
            add_into(g_enc[L - 1 - i], g_skip);
            g = std::move(g_prev);
        }
    }
    for (int j = L - 1; j >= 0; --j) {
        Tensor gz = nn::leaky_relu_backward(t.enc_pre[j], g_enc[j], j < L - 1 ? kLeakySlope : 0.0);
        if (enc_bn_[j]) gz = enc_bn_[j]->backward(t.enc_bn[j], gz);
        Tensor gin = enc_[j].backward(t.enc_in[j], gz, j > 0);
        if (j > 0) add_into(g_enc[j - 1], gin);
    }
}

void Generator::initialize(nn::Rng& rng) {
    for (auto& c : enc_) {
        nn::init_normal(c.weight, 0.0, 0.02, rng);
        std::fill(c.bias.value.begin(), c.bias.value.end(), 0.0);
    }
    for (auto& c : dec_) {
        nn::init_normal(c.weight, 0.0, 0.02, rng);
        std::fill(c.bias.value.begin(), c.bias.value.end(), 0.0);
    }
    for (auto* bns : {&enc_bn_, &dec_bn_})
        for (auto& bn : *bns)
            if (bn) {
                nn::init_normal(bn->gamma, 1.0, 0.02, rng);
                std::fill(bn->beta.value.begin(), bn->beta.value.end(), 0.0);
            }
}

std::vector<nn::Param*> Generator::parameters() {
    std::vector<nn::Param*> out;
    for (std::size_t j = 0; j < enc_.size(); ++j) {
        out.push_back(&enc_[j].weight);
        out.push_back(&enc_[j].bias);
        if (enc_bn_[j]) {
            out.push_back(&enc_bn_[j]->gamma);
            out.push_back(&enc_bn_[j]->beta);
            out.push_back(&enc_bn_[j]->running_mean);
            out.push_back(&enc_bn_[j]->running_var);
        }
    }
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        out.push_back(&dec_[i].weight);
        out.push_back(&dec_[i].bias);
        if (dec_bn_[i]) {
            out.push_back(&dec_bn_[i]->gamma);
            out.push_back(&dec_bn_[i]->beta);
            out.push_back(&dec_bn_[i]->running_mean);
            out.push_back(&dec_bn_[i]->running_var);
        }
    }
    return out;
}

std::vector<const nn::Param*> Generator::parameters() const {
    auto ps = const_cast<Generator*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

void Generator::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int in = 6;
    for (int j = 0; j < cfg_.down_blocks; ++j) {
        const int out = cfg_.channels(j);
        blocks_.emplace_back("disc.block" + std::to_string(j), in, out, 4, 2, 1, 1);
        if (j > 0)
            bn_.emplace_back(nn::BatchNorm2d("disc.block" + std::to_string(j) + ".bn", out));
        else
            bn_.emplace_back(std::nullopt);
        in = out;
    }
    // Stride-1 4x4 with (1, 2) padding keeps the map size.
    final_ = nn::Conv2d("disc.final", in, 1, 4, 1, 1, 2);
}

DiscriminatorTape Discriminator::forward(const Tensor& x, const Tensor& y, Mode mode) {
    if (!x.same_shape(y)) throw InvalidInput("discriminator inputs must have equal dimensions");
    if (x.c != 3 || x.h != cfg_.input_size || x.w != cfg_.input_size)
        throw InvalidInput("discriminator input size mismatch");
    const bool train = mode == Mode::train;
    DiscriminatorTape t;
    t.train = train;
    t.x_channels = x.c;
    t.input = nn::concat_channels(x, y);
    t.block_in.resize(blocks_.size());
    t.block_pre.resize(blocks_.size());
    t.bn.resize(blocks_.size());
    Tensor h = t.input;
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
        t.block_in[j] = h;
        Tensor z = blocks_[j].forward(h);
        if (bn_[j]) z = train ? bn_[j]->forward(z, true, t.bn[j]) : bn_[j]->infer(z);
        t.block_pre[j] = z;
        h = nn::leaky_relu(z, kLeakySlope);
    }
    t.final_in = h;
    t.probs = nn::sigmoid_forward(final_.forward(h));
    return t;
}

Tensor Discriminator::predict(const Tensor& x, const Tensor& y) const {
    if (!x.same_shape(y)) throw InvalidInput("discriminator inputs must have equal dimensions");
    if (x.c != 3 || x.h != cfg_.input_size || x.w != cfg_.input_size)
        throw InvalidInput("discriminator input size mismatch");
    Tensor h = nn::concat_channels(x, y);
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
        Tensor z = blocks_[j].forward(h);
        if (bn_[j]) z = bn_[j]->infer(z);
        h = nn::leaky_relu(z, kLeakySlope);
    }
    return nn::sigmoid_forward(final_.forward(h));
}

Tensor Discriminator::backward(const DiscriminatorTape& t, const Tensor& d_probs, bool accumulate_params) {
    std::vector<std::vector<double>> saved;
    if (!accumulate_params)
        for (auto* p : parameters()) saved.push_back(p->grad);

    Tensor g = nn::sigmoid_backward(t.probs, d_probs);
    g = final_.backward(t.final_in, g, true);
    for (int j = static_cast<int>(blocks_.size()) - 1; j >= 0; --j) {
        Tensor gz = nn::leaky_relu_backward(t.block_pre[j], g, kLeakySlope);
        if (bn_[j]) {
            if (!t.train) throw InvalidInput("discriminator backward needs a train-mode forward pass");
            gz = bn_[j]->backward(t.bn[j], gz);
        }
        g = blocks_[j].backward(t.block_in[j], gz, true);
    }
    Tensor dx, dy;
    nn::split_channels(g, t.x_channels, dx, dy);

    if (!accumulate_params) {
        std::size_t k = 0;
        for (auto* p : parameters()) p->grad = std::move(saved[k++]);
    }
    return dy;
}

void Discriminator::initialize(nn::Rng& rng) {
    for (auto& c : blocks_) {
        nn::init_normal(c.weight, 0.0, 0.02, rng);
        std::fill(c.bias.value.begin(), c.bias.value.end(), 0.0);
    }
    nn::init_normal(final_.weight, 0.0, 0.02, rng);
    std::fill(final_.bias.value.begin(), final_.bias.value.end(), 0.0);
    for (auto& bn : bn_)
        if (bn) {
            nn::init_normal(bn->gamma, 1.0, 0.02, rng);
            std::fill(bn->beta.value.begin(), bn->beta.value.end(), 0.0);
        }
}

std::vector<nn::Param*> Discriminator::parameters() {
    std::vector<nn::Param*> out;
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
        out.push_back(&blocks_[j].weight);
        out.push_back(&blocks_[j].bias);
        if (bn_[j]) {
            out.push_back(&bn_[j]->gamma);
            out.push_back(&bn_[j]->beta);
            out.push_back(&bn_[j]->running_mean);
            out.push_back(&bn_[j]->running_var);
        }
    }
    out.push_back(&final_.weight);
    out.push_back(&final_.bias);
    return out;
}

std::vector<const nn::Param*> Discriminator::parameters() const {
    auto ps = const_cast<Discriminator*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

void Discriminator::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

// ---------------------------------------------------------------------------

namespace {

double clamp_prob(double p) { return std::clamp(p, kLogEpsilon, 1.0 - kLogEpsilon); }
bool clamped(double p) { return p < kLogEpsilon || p > 1.0 - kLogEpsilon; }

void require_finite(const Tensor& t, const char* what) {
    for (double v : t.v)
        if (!std::isfinite(v)) throw InvalidInput(std::string("non-finite values in ") + what);
}

} // namespace

Losses compute_losses(const Tensor& d_real, const Tensor& d_fake, const Tensor& y, const Tensor& g_out,
                      const LossWeights& w, bool saturating) {
    require_finite(d_real, "real-pair probabilities");
    require_finite(d_fake, "fake-pair probabilities");
    require_finite(y, "target image");
    require_finite(g_out, "generator output");
    if (!y.same_shape(g_out)) throw InvalidInput("target and generator output shapes differ");
    if (!d_real.same_shape(d_fake)) throw InvalidInput("probability map shapes differ");

    Losses l;
    for (double p : d_real.v) l.d_real -= std::log(clamp_prob(p));
    l.d_real /= static_cast<double>(d_real.size());
    for (double p : d_fake.v) l.d_fake -= std::log(1.0 - clamp_prob(p));
    l.d_fake /= static_cast<double>(d_fake.size());
    l.d_loss = l.d_real + l.d_fake;

    for (double p : d_fake.v) l.g_adv += saturating ? std::log(1.0 - clamp_prob(p)) : -std::log(clamp_prob(p));
    l.g_adv /= static_cast<double>(d_fake.size());

    for (std::size_t i = 0; i < y.v.size(); ++i) l.g_l1 += std::abs(y.v[i] - g_out.v[i]);
    l.g_l1 /= static_cast<double>(y.size());
    l.g_total = l.g_adv + w.lambda * l.g_l1;
    return l;
}

Tensor grad_d_loss_real(const Tensor& d_real) {
    Tensor g = d_real;
    const double n = static_cast<double>(d_real.size());
    for (double& v : g.v) v = clamped(v) ? 0.0 : -1.0 / (n * v);
    return g;
}

Tensor grad_d_loss_fake(const Tensor& d_fake) {
    Tensor g = d_fake;
    const double n = static_cast<double>(d_fake.size());
    for (double& v : g.v) v = clamped(v) ? 0.0 : 1.0 / (n * (1.0 - v));
    return g;
}

Tensor grad_g_adv(const Tensor& d_fake, bool saturating) {
    Tensor g = d_fake;
    const double n = static_cast<double>(d_fake.size());
    for (double& v : g.v) {
        if (clamped(v))
            v = 0.0;
        else
            v = saturating ? -1.0 / (n * (1.0 - v)) : -1.0 / (n * v);
    }
    return g;
}

Tensor grad_g_l1(const Tensor& y, const Tensor& g_out, double lambda) {
    Tensor g = g_out;
    const double scale = lambda / static_cast<double>(y.size());
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        const double d = g_out.v[i] - y.v[i];
        g.v[i] = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
    }
    return g;
}

// ---------------------------------------------------------------------------

Tensor to_tensor(const ModelImage& m) {
    Tensor t(1, 3, m.height, m.width);
    t.v = m.data;
    return t;
}

Tensor to_tensor(const std::vector<const ModelImage*>& batch) {
    if (batch.empty()) throw InvalidInput("empty batch");
    const int h = batch[0]->height, w = batch[0]->width;
    Tensor t(static_cast<int>(batch.size()), 3, h, w);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i]->height != h || batch[i]->width != w) throw InvalidInput("batch images differ in size");
        std::copy(batch[i]->data.begin(), batch[i]->data.end(), t.sample(static_cast<int>(i)));
    }
    return t;
}

ModelImage to_model_image(const Tensor& t, int index) {
    if (t.c != 3) throw InvalidInput("model image tensors have three channels");
    ModelImage m(t.h, t.w);
    std::copy(t.sample(index), t.sample(index) + m.data.size(), m.data.begin());
    return m;
}

ModelImage generator_forward(Generator& g, const ModelImage& x, Mode mode, nn::Rng* rng) {
    check_finite(g.parameters());
    if (mode == Mode::inference) return to_model_image(g.predict(to_tensor(x)));
    return to_model_image(g.forward(to_tensor(x), mode, rng).output);
}

Tensor discriminator_forward(Discriminator& d, const ModelImage& x, const ModelImage& y) {
    if (x.height != y.height || x.width != y.width) throw InvalidInput("discriminator inputs must have equal dimensions");
    return d.predict(to_tensor(x), to_tensor(y));
}

std::uint64_t config_hash(const GeneratorConfig& g, const DiscriminatorConfig& d) {
    std::ostringstream os;
    os << "G" << g.input_size << ',' << g.block_count << ',' << g.base_filters << ',' << g.filter_cap << ','
       << g.dropout_rate << ',' << g.dropout_blocks << ";D" << d.input_size << ',' << d.down_blocks << ','
       << d.base_filters << ',' << d.filter_cap;
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : os.str()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

NetworkCheckpoint make_networks(const GeneratorConfig& g, const DiscriminatorConfig& d, std::uint64_t seed) {
    if (g.input_size != d.input_size) throw InvalidInput("generator and discriminator input sizes differ");
    NetworkCheckpoint net{Generator(g), Discriminator(d), 0, config_hash(g, d)};
    nn::Rng rng(seed);
    net.generator.initialize(rng);
    net.discriminator.initialize(rng);
    return net;
}

} // namespace meltpool
