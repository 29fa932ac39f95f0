#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "meltpool/png_io.hpp"
#include "meltpool/synthetic.hpp"
#include "meltpool/trainer.hpp"

using namespace meltpool;

namespace {

NetworkCheckpoint tiny_networks(std::uint64_t seed = 3) {
    return make_networks(generator_config_for(16, 4), discriminator_config_for(16, 2, 4), seed);
}

TrainConfig tiny_config(std::int64_t steps) {
    TrainConfig c;
    c.steps = steps;
    c.checkpoint_interval = steps;
    c.seed = 8;
    return c;
}

bool same_weights(const NetworkCheckpoint& a, const NetworkCheckpoint& b) {
    const auto pa = a.generator.parameters(), pb = b.generator.parameters();
    const auto qa = a.discriminator.parameters(), qb = b.discriminator.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->value != pb[i]->value) return false;
    for (std::size_t i = 0; i < qa.size(); ++i)
        if (qa[i]->value != qb[i]->value) return false;
    return true;
}

bool same_history(const LossHistory& a, const LossHistory& b) {
    if (a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const auto &x = a.records[i], &y = b.records[i];
        if (x.step != y.step || x.d_real != y.d_real || x.d_fake != y.d_fake || x.g_total != y.g_total ||
            x.g_adv != y.g_adv || x.g_l1 != y.g_l1)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(TrainConfig{}.validate());
    auto bad = [](auto edit) {
        TrainConfig c;
        edit(c);
        CHECK_THROWS_AS(c.validate(), InvalidInput);
    };
    bad([](TrainConfig& c) { c.steps = 0; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.learning_rate = 0.0; });
    bad([](TrainConfig& c) { c.beta1 = 1.0; });
    bad([](TrainConfig& c) { c.lambda = -1.0; });
    bad([](TrainConfig& c) { c.checkpoint_interval = 0; });
    bad([](TrainConfig& c) { c.checkpoint_interval = c.steps + 1; });
    bad([](TrainConfig& c) { c.prefetch = -1; });
    bad([](TrainConfig& c) { c.decay_fraction = 1.0; });
    bad([](TrainConfig& c) { c.decay_fraction = -0.1; });
}

TEST_CASE("linear decay reaches zero after the last step") {
    TrainConfig c;
    c.steps = 10;
    c.learning_rate = 1.0;
    for (std::int64_t s = 1; s <= 10; ++s) CHECK(c.learning_rate_at(s) == 1.0);
    c.decay_fraction = 0.5;
    for (std::int64_t s = 1; s <= 5; ++s) CHECK(c.learning_rate_at(s) == 1.0);
    CHECK(c.learning_rate_at(6) == doctest::Approx(5.0 / 6.0));
    CHECK(c.learning_rate_at(10) == doctest::Approx(1.0 / 6.0));
    for (std::int64_t s = 6; s <= 10; ++s) CHECK(c.learning_rate_at(s) < c.learning_rate_at(s - 1));
}

TEST_CASE("batch schedule visits every pair once per epoch") {
    TrainConfig c;
    c.steps = 12;
    c.batch_size = 3;
    c.seed = 4;
    const auto s = batch_schedule(7, c); // 2 full batches per epoch, 1 pair dropped
    REQUIRE(s.size() == 12);
    for (std::size_t e = 0; e < 6; ++e) {
        std::set<std::size_t> seen;
        for (std::size_t b = 2 * e; b < 2 * e + 2; ++b) {
            CHECK(s[b].size() == 3);
            seen.insert(s[b].begin(), s[b].end());
        }
        CHECK(seen.size() == 6);
        CHECK(*seen.rbegin() < 7);
    }
    CHECK(batch_schedule(7, c) == s);
    c.seed = 5;
    CHECK(batch_schedule(7, c) != s);
    CHECK_THROWS_AS(batch_schedule(0, c), InvalidInput);
    CHECK_THROWS_AS(batch_schedule(2, c), InvalidInput);
}

TEST_CASE("checkpoint interval arithmetic") {
    const auto data = synthetic_pairs(2, 16, 1);
    TrainConfig c = tiny_config(8);
    c.checkpoint_interval = 2;
    auto r = train(data, tiny_networks(), c);
    CHECK(r.checkpoint_steps == std::vector<std::int64_t>{2, 4, 6, 8});
    CHECK(r.checkpoints.size() == 4);
    CHECK(r.checkpoints[1].step == 4);

    c.steps = 7;
    c.checkpoint_interval = 3;
    int sunk = 0;
    r = train(data, tiny_networks(), c, [&](const NetworkCheckpoint& n) {
        ++sunk;
        CHECK((n.step % 3 == 0 || n.step == 7));
    });
    CHECK(r.checkpoint_steps == std::vector<std::int64_t>{3, 6, 7});
    CHECK(r.checkpoints.empty());
    CHECK(sunk == 3);
    CHECK(r.history.records.size() == 7);
    CHECK(r.history.records.back().step == 7);
}

TEST_CASE("training is bit-reproducible with and without prefetch") {
    const auto data = synthetic_pairs(3, 16, 2);
    const TrainConfig c = tiny_config(6);
    const auto a = train(data, tiny_networks(), c);
    const auto b = train(data, tiny_networks(), c);
    TrainConfig p = c;
    p.prefetch = 2;
    const auto d = train(data, tiny_networks(), p);
    CHECK(same_history(a.history, b.history));
    CHECK(same_history(a.history, d.history));
    CHECK(same_weights(a.final, b.final));
    CHECK(same_weights(a.final, d.final));

    TrainConfig other = c;
    other.seed = 9;
    CHECK_FALSE(same_history(a.history, train(data, tiny_networks(), other).history));
}

TEST_CASE("loss bookkeeping") {
    const auto data = synthetic_pairs(2, 16, 3);
    TrainConfig c = tiny_config(4);
    c.lambda = 0.0;
    for (const auto& r : train(data, tiny_networks(), c).history.records) {
        CHECK(r.g_total == r.g_adv);
        CHECK(r.g_l1 > 0.0);
    }
    c.lambda = 100.0;
    for (const auto& r : train(data, tiny_networks(), c).history.records) {
        CHECK(r.g_total == doctest::Approx(r.g_adv + 100.0 * r.g_l1).epsilon(1e-12));
        CHECK(r.d_real > 0.0);
        CHECK(r.d_fake > 0.0);
    }
}

TEST_CASE("loss history csv round trip") {
    LossHistory h;
    for (int i = 1; i <= 5; ++i) h.records.push_back({i, 0.1 * i + 1e-13, 1.0 / 3.0, std::sqrt(2.0) * i, 0.0, 0.0});
    const auto path = std::filesystem::temp_directory_path() / "meltpool_loss_test.csv";
    h.write_csv(path);
    const auto back = LossHistory::read_csv(path);
    REQUIRE(back.records.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(back.records[i].step == h.records[i].step);
        CHECK(back.records[i].d_real == h.records[i].d_real);
        CHECK(back.records[i].d_fake == h.records[i].d_fake);
        CHECK(back.records[i].g_total == h.records[i].g_total);
    }
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "step,d_real,d_fake,g_total");
    std::filesystem::remove(path);
    CHECK_THROWS_AS(LossHistory::read_csv(path), IoError);
}

TEST_CASE("spike detector") {
    LossHistory h;
    for (int i = 1; i <= 300; ++i) h.records.push_back({i, 0, 0, (i >= 150 && i < 154) ? 50.0 : 1.0, 0, 0});
    CHECK(longest_spike_run(h) == 4);
    h.records[200].g_total = 20.0;
    CHECK(longest_spike_run(h) == 4);
    CHECK(longest_spike_run(LossHistory{}) == 0);
}

TEST_CASE("adam takes a learning-rate sized first step against the gradient") {
    nn::Param p("w", {3}, 0.0);
    p.value = {1.0, -2.0, 0.5};
    p.grad = {4.0, -0.001, 0.0};
    nn::Param frozen("stat", {1}, 7.0, false);
    frozen.grad = {1.0};
    Adam opt({&p, &frozen}, 0.01, 0.5, 0.999);
    opt.step();
    CHECK(opt.iterations() == 1);
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
    CHECK(p.value[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
    CHECK(p.value[2] == 0.5);
    CHECK(frozen.value[0] == 7.0);
    CHECK(opt.moments_finite());
}

TEST_CASE("warm start continues the step counter") {
    const auto data = synthetic_pairs(2, 16, 4);
    const auto first = train(data, tiny_networks(), tiny_config(3)).final;
    CHECK(first.step == 3);
    TrainConfig c = tiny_config(4);
    c.checkpoint_interval = 2;
    const auto second = train(data, first, c);
    CHECK(second.final.step == 7);
    CHECK(second.checkpoint_steps == std::vector<std::int64_t>{5, 7});
    CHECK(second.history.records.front().step == 4);
}

TEST_CASE("bad inputs raise") {
    CHECK_THROWS_AS(train({}, tiny_networks(), tiny_config(2)), InvalidInput);
    CHECK_THROWS_AS(train(synthetic_pairs(1, 32, 1), tiny_networks(), tiny_config(2)), InvalidInput);

    auto data = synthetic_pairs(1, 16, 5);
    data[0].input.data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train(data, tiny_networks(), tiny_config(2)), InvalidInput);

    Trainer t(tiny_networks(), tiny_config(1));
    CHECK_THROWS_AS(t.step(std::vector<const ImagePair*>{}), InvalidInput);
}
