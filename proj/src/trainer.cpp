#include "meltpool/trainer.hpp"

#include "meltpool/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

namespace meltpool {

using nn::Tensor;

void TrainConfig::validate() const {
    if (steps <= 0) throw InvalidInput("steps must be positive");
    if (batch_size <= 0) throw InvalidInput("batch size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw InvalidInput("Adam betas must lie in (0, 1)");
    if (!(lambda >= 0.0)) throw InvalidInput("lambda must be non-negative");
    if (checkpoint_interval <= 0 || checkpoint_interval > steps)
        throw InvalidInput("checkpoint interval must lie in [1, steps]");
    if (prefetch < 0) throw InvalidInput("prefetch depth must be non-negative");
    if (!(decay_fraction >= 0.0 && decay_fraction < 1.0)) throw InvalidInput("decay fraction must lie in [0, 1)");
}

double TrainConfig::learning_rate_at(std::int64_t s) const {
    const auto start = static_cast<std::int64_t>(std::floor(static_cast<double>(steps) * (1.0 - decay_fraction)));
    if (decay_fraction == 0.0 || s <= start) return learning_rate;
    return learning_rate * static_cast<double>(steps - s + 1) / static_cast<double>(steps - start + 1);
}

// ---------------------------------------------------------------------------

void LossHistory::write_csv(const std::filesystem::path& path) const {
    std::ostringstream out;
    out << "step,d_real,d_fake,g_total\n" << std::setprecision(17);
    for (const auto& r : records) out << r.step << ',' << r.d_real << ',' << r.d_fake << ',' << r.g_total << '\n';
    const std::string text = out.str();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

LossHistory LossHistory::read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(f, line) || line.rfind("step,d_real,d_fake,g_total", 0) != 0)
        throw IoError("unexpected loss history header in " + path.string());
    LossHistory h;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        LossRecord r;
        char c1, c2, c3;
        if (!(row >> r.step >> c1 >> r.d_real >> c2 >> r.d_fake >> c3 >> r.g_total))
            throw IoError("malformed loss history row: " + line);
        h.records.push_back(r);
    }
    return h;
}

std::int64_t longest_spike_run(const LossHistory& h, int window, double factor) {
    std::int64_t best = 0, run = 0;
    for (std::size_t i = 0; i < h.records.size(); ++i) {
        if (i < static_cast<std::size_t>(window)) continue;
        std::vector<double> trail;
        for (std::size_t k = i - window; k < i; ++k) trail.push_back(h.records[k].g_total);
        std::nth_element(trail.begin(), trail.begin() + trail.size() / 2, trail.end());
        const double median = trail[trail.size() / 2];
        run = h.records[i].g_total > factor * median ? run + 1 : 0;
        best = std::max(best, run);
    }
    return best;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<nn::Param*> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params) {
        if (!p->trainable) continue;
        params_.push_back(p);
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = b1_ * m[i] + (1.0 - b1_) * g;
            v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
            p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

bool Adam::moments_finite() const {
    for (std::size_t k = 0; k < m_.size(); ++k)
        for (std::size_t i = 0; i < m_[k].size(); ++i)
            if (!std::isfinite(m_[k][i]) || !std::isfinite(v_[k][i])) return false;
    return true;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(NetworkCheckpoint net, const TrainConfig& cfg) : net_(std::move(net)), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    g_opt_ = Adam(net_.generator.parameters(), cfg_.learning_rate, cfg_.beta1, cfg_.beta2);
    d_opt_ = Adam(net_.discriminator.parameters(), cfg_.learning_rate, cfg_.beta1, cfg_.beta2);
}

LossRecord Trainer::step(const std::vector<const ImagePair*>& batch) {
    if (batch.empty()) throw InvalidInput("training batch is empty");
    std::vector<const ModelImage*> xs, ys;
    for (const auto* p : batch) {
        xs.push_back(&p->input);
        ys.push_back(&p->target);
    }
    return step(to_tensor(xs), to_tensor(ys));
}

LossRecord Trainer::step(const Tensor& x, const Tensor& y) {
    auto& G = net_.generator;
    auto& D = net_.discriminator;
    const std::int64_t step_index = net_.step + 1;

    // The generated batch and its dropout mask are shared by both updates.
    const GeneratorTape gt = G.forward(x, Mode::train, &rng_);
    const Tensor& fake = gt.output;

    D.zero_grad();
    const auto real_t = D.forward(x, y, Mode::train);
    const auto fake_t = D.forward(x, fake, Mode::train);
    const Losses dl = compute_losses(real_t.probs, fake_t.probs, y, fake, {cfg_.lambda}, cfg_.saturating);
    if (!std::isfinite(dl.d_loss))
        throw TrainingError("non-finite discriminator loss at step " + std::to_string(step_index));
    D.backward(real_t, grad_d_loss_real(real_t.probs), true);
    D.backward(fake_t, grad_d_loss_fake(fake_t.probs), true);
    d_opt_.step();

    const auto judged = D.forward(x, fake, Mode::train);
    const Losses gl = compute_losses(real_t.probs, judged.probs, y, fake, {cfg_.lambda}, cfg_.saturating);
    if (!std::isfinite(gl.g_total))
        throw TrainingError("non-finite generator loss at step " + std::to_string(step_index));
    G.zero_grad();
    Tensor dy = D.backward(judged, grad_g_adv(judged.probs, cfg_.saturating), false);
    if (cfg_.lambda != 0.0) {
        const Tensor dl1 = grad_g_l1(y, fake, cfg_.lambda);
        for (std::size_t i = 0; i < dy.v.size(); ++i) dy.v[i] += dl1.v[i];
    }
    G.backward(gt, dy);
    g_opt_.step();

    if (!g_opt_.moments_finite() || !d_opt_.moments_finite())
        throw TrainingError("optimizer moments diverged at step " + std::to_string(step_index));
    net_.step = step_index;
    return {step_index, dl.d_real, dl.d_fake, gl.g_total, gl.g_adv, gl.g_l1};
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> batch_schedule(std::size_t dataset_size, const TrainConfig& cfg) {
    if (dataset_size == 0) throw InvalidInput("training dataset is empty");
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    if (bs > dataset_size) throw InvalidInput("batch size exceeds the dataset size");
    nn::Rng rng(cfg.seed ^ 0x5bd1e995ULL);
    std::vector<std::size_t> order(dataset_size);
    std::vector<std::vector<std::size_t>> out;
    out.reserve(static_cast<std::size_t>(cfg.steps));
    while (out.size() < static_cast<std::size_t>(cfg.steps)) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b + bs <= dataset_size && out.size() < static_cast<std::size_t>(cfg.steps); b += bs)
            out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                             order.begin() + static_cast<std::ptrdiff_t>(b + bs));
    }
    return out;
}

namespace {

struct Batch {
    Tensor x, y;
};

Batch assemble(const std::vector<ImagePair>& data, const std::vector<std::size_t>& idx) {
    std::vector<const ModelImage*> xs, ys;
    for (auto i : idx) {
        xs.push_back(&data[i].input);
        ys.push_back(&data[i].target);
    }
    return {to_tensor(xs), to_tensor(ys)};
}

// Bounded single-producer queue; batches come out in schedule order.
class Prefetcher {
public:
    Prefetcher(const std::vector<ImagePair>& data, const std::vector<std::vector<std::size_t>>& schedule,
               std::size_t depth)
        : depth_(depth) {
        worker_ = std::thread([this, &data, &schedule] {
            for (const auto& idx : schedule) {
                Batch b = assemble(data, idx);
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return stop_ || queue_.size() < depth_; });
                if (stop_) return;
                queue_.push_back(std::move(b));
                cv_.notify_all();
            }
        });
    }
    ~Prefetcher() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }
    Batch next() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !queue_.empty(); });
        Batch b = std::move(queue_.front());
        queue_.pop_front();
        cv_.notify_all();
        return b;
    }

private:
    std::size_t depth_;
    std::deque<Batch> queue_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
    std::thread worker_;
};

} // namespace

TrainResult train(const std::vector<ImagePair>& dataset, NetworkCheckpoint init, const TrainConfig& cfg,
                  const CheckpointSink& sink) {
    cfg.validate();
    const auto schedule = batch_schedule(dataset.size(), cfg);
    const int size = init.generator.config().input_size;
    for (const auto& p : dataset)
        if (p.input.height != size || p.input.width != size || p.target.height != size || p.target.width != size)
            throw InvalidInput("training pair does not match the model resolution");
    for (const auto& p : dataset)
        if (!std::all_of(p.input.data.begin(), p.input.data.end(), [](double v) { return std::isfinite(v); }) ||
            !std::all_of(p.target.data.begin(), p.target.data.end(), [](double v) { return std::isfinite(v); }))
            throw InvalidInput("training pair contains non-finite values");

    Trainer trainer(std::move(init), cfg);
    TrainResult result;
    result.history.records.reserve(schedule.size());
    std::optional<Prefetcher> prefetch;
    if (cfg.prefetch > 0) prefetch.emplace(dataset, schedule, static_cast<std::size_t>(cfg.prefetch));

    for (std::int64_t s = 1; s <= cfg.steps; ++s) {
        const Batch b = prefetch ? prefetch->next() : assemble(dataset, schedule[static_cast<std::size_t>(s - 1)]);
        trainer.set_learning_rate(cfg.learning_rate_at(s));
        result.history.records.push_back(trainer.step(b.x, b.y));
        if (s % cfg.checkpoint_interval == 0 || s == cfg.steps) {
            result.checkpoint_steps.push_back(trainer.steps_done());
            if (sink)
                sink(trainer.network());
            else
                result.checkpoints.push_back(trainer.network());
        }
    }
    result.final = trainer.network();
    return result;
}

} // namespace meltpool
