#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "meltpool/checkpoint.hpp"
#include "meltpool/model.hpp"
#include "meltpool/png_io.hpp"

using namespace meltpool;
using nn::Tensor;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
    Tensor t(n, c, h, w);
    nn::Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : t.v) v = u(rng);
    return t;
}

Tensor filled(int n, double v) { return Tensor(n, 1, 4, 4, v); }

} // namespace

TEST_CASE("generator and discriminator shapes across input sizes") {
    for (int size : {8, 16, 32, 64, 128, 256}) {
        auto g = generator_config_for(size, 4);
        auto d = discriminator_config_for(size, std::min(4, g.block_count - 1), 4);
        auto net = make_networks(g, d, 1);
        const auto enc = net.generator.encoder_sizes();
        CHECK(enc.back() == 1);
        CHECK(static_cast<int>(enc.size()) == g.block_count);
        const Tensor x = random_tensor(1, 3, size, size, 2);
        const Tensor out = net.generator.predict(x);
        CHECK(out.c == 3);
        CHECK(out.h == size);
        CHECK(out.w == size);
        CHECK(std::all_of(out.v.begin(), out.v.end(), [](double v) { return v >= -1.0 && v <= 1.0; }));
        const Tensor probs = net.discriminator.predict(x, out);
        CHECK(probs.c == 1);
        CHECK(probs.h == d.final_map());
        CHECK(std::all_of(probs.v.begin(), probs.v.end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
    }
    CHECK(generator_config_for(256).block_count == 8);
    CHECK(discriminator_config_for(256, 4).final_map() == 16);
}

TEST_CASE("invalid configurations and inputs are rejected") {
    GeneratorConfig g = generator_config_for(64, 4);
    g.block_count = 5;
    CHECK_THROWS_AS(Generator{g}, InvalidInput);
    g = generator_config_for(48, 4);
    CHECK_THROWS_AS(Generator{g}, InvalidInput);
    auto net = make_networks(generator_config_for(16, 4), discriminator_config_for(16, 2, 4), 3);
    CHECK_THROWS_AS(net.generator.predict(Tensor(1, 3, 8, 8)), InvalidInput);
    CHECK_THROWS_AS(make_networks(generator_config_for(16, 4), discriminator_config_for(32, 2, 4), 3), InvalidInput);
}

TEST_CASE("analytic gradients match central differences") {
    auto p = test::tiny_gan_problem(17);
    const auto gr = test::check_gradients(p.net.generator.parameters(),
                                          [&](bool grad) { return p.generator_objective(grad); });
    INFO("generator worst: " << gr.worst);
    CHECK(gr.checked > 1000);
    CHECK(gr.max_rel_error < 1e-4);

    const auto dr = test::check_gradients(p.net.discriminator.parameters(),
                                          [&](bool grad) { return p.discriminator_objective(grad); });
    INFO("discriminator worst: " << dr.worst);
    CHECK(dr.max_rel_error < 1e-4);
    MESSAGE("max relative error: generator " << gr.max_rel_error << ", discriminator " << dr.max_rel_error);
}

TEST_CASE("loss values on hand-built inputs") {
    const Tensor y = random_tensor(1, 3, 4, 4, 5);
    // A perfect discriminator drives its loss to zero.
    Losses l = compute_losses(filled(1, 1.0), filled(1, 0.0), y, y, {});
    CHECK(l.d_loss < 1e-6);
    CHECK(l.g_l1 == 0.0);
    CHECK(l.d_loss >= 0.0);

    // A uniform 0.1 error contributes lambda * 0.1 = 10.
    Tensor g = y;
    for (double& v : g.v) v += 0.1;
    l = compute_losses(filled(1, 0.5), filled(1, 0.5), y, g, {100.0});
    CHECK(l.g_l1 == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(l.g_total - l.g_adv == doctest::Approx(10.0).epsilon(1e-10));
    CHECK(l.d_loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    // Clamping keeps everything finite at the extremes.
    l = compute_losses(filled(1, 0.0), filled(1, 1.0), y, y, {});
    CHECK(std::isfinite(l.d_loss));
    CHECK(std::isfinite(l.g_adv));
}

TEST_CASE("generator loss falls as the discriminator is fooled") {
    const Tensor y = random_tensor(1, 3, 4, 4, 6);
    double prev = 1e300, prev_sat = 1e300;
    for (double p = 0.05; p < 1.0; p += 0.05) {
        const double adv = compute_losses(filled(1, 0.5), filled(1, p), y, y, {}).g_adv;
        const double sat = compute_losses(filled(1, 0.5), filled(1, p), y, y, {}, true).g_adv;
        CHECK(adv < prev);
        CHECK(sat < prev_sat);
        prev = adv;
        prev_sat = sat;
    }
}

TEST_CASE("dropout makes train mode stochastic and inference deterministic") {
    auto net = make_networks(generator_config_for(16, 4), discriminator_config_for(16, 2, 4), 8);
    const Tensor x = random_tensor(1, 3, 16, 16, 9);
    nn::Rng a(1), b(2), c(1);
    const Tensor ta = net.generator.forward(x, Mode::train, &a).output;
    const Tensor tb = net.generator.forward(x, Mode::train, &b).output;
    const Tensor tc = net.generator.forward(x, Mode::train, &c).output;
    CHECK(ta.v != tb.v);
    CHECK(ta.v == tc.v);
    CHECK(net.generator.predict(x).v == net.generator.predict(x).v);
    CHECK_THROWS_AS(net.generator.forward(x, Mode::train, nullptr), InvalidInput);
}

TEST_CASE("checkpoint round trip is exact and corruption is detected") {
    auto net = make_networks(generator_config_for(16, 4), discriminator_config_for(16, 2, 4), 21);
    net.step = 1234;
    const Tensor x = random_tensor(1, 3, 16, 16, 4);
    const auto bytes = serialize_checkpoint(net);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(back.step == 1234);
    CHECK(back.config_hash == net.config_hash);
    CHECK(back.generator.predict(x).v == net.generator.predict(x).v);
    CHECK(back.discriminator.predict(x, x).v == net.discriminator.predict(x, x).v);

    const auto single = deserialize_checkpoint(serialize_checkpoint(net, TensorPrecision::float32));
    const auto a = single.generator.predict(x), b = net.generator.predict(x);
    for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(std::abs(a.v[i] - b.v[i]) < 1e-3);

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    CHECK_THROWS_AS(deserialize_checkpoint(truncated), CheckpointError);

    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(deserialize_checkpoint(flipped), CheckpointError);

    auto version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(deserialize_checkpoint(version), CheckpointError);

    const auto path = std::filesystem::temp_directory_path() / "meltpool_test.ckpt";
    save_checkpoint(path, net);
    CHECK(load_checkpoint(path).generator.predict(x).v == net.generator.predict(x).v);
    std::filesystem::remove(path);
    CHECK_THROWS(load_checkpoint(path));
}
