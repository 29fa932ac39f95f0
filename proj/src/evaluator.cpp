#include "meltpool/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "meltpool/checkpoint.hpp"

namespace meltpool {

std::vector<double> ssim_window(int size, double sigma) {
    if (size < 1 || size % 2 == 0) throw InvalidInput("SSIM window must be odd and positive");
    if (!(sigma > 0.0)) throw InvalidInput("SSIM sigma must be positive");
    std::vector<double> g(static_cast<std::size_t>(size));
    const int r = size / 2;
    for (int i = -r; i <= r; ++i) g[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    const double s = std::accumulate(g.begin(), g.end(), 0.0);
    for (double& v : g) v /= s;
    return g;
}

namespace {

int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

std::vector<double> blur(const std::vector<double>& src, int w, int h, const std::vector<double>& g) {
    const int r = static_cast<int>(g.size()) / 2;
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k) s += g[static_cast<std::size_t>(k + r)] * src[static_cast<std::size_t>(y) * w + reflect101(x + k, w)];
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k) s += g[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(reflect101(y + k, h)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    return out;
}

} // namespace

SsimReport ssim_index(const RawImage& a_in, const RawImage& b_in, const SsimOptions& opts) {
    if (a_in.width != b_in.width || a_in.height != b_in.height)
        throw InvalidInput("SSIM inputs must have equal dimensions");
    const RawImage a = to_luminance(a_in), b = to_luminance(b_in);
    const int w = a.width, h = a.height;
    const auto g = ssim_window(opts.window, opts.sigma);

    const std::size_t n = a.data.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a.data[i] * a.data[i];
        bb[i] = b.data[i] * b.data[i];
        ab[i] = a.data[i] * b.data[i];
    }
    const auto mu_a = blur(a.data, w, h, g), mu_b = blur(b.data, w, h, g);
    const auto s_aa = blur(aa, w, h, g), s_bb = blur(bb, w, h, g), s_ab = blur(ab, w, h, g);
    const double c1 = opts.c1(), c2 = opts.c2();

    SsimReport rep;
    rep.map.resize(n);
    rep.contrast_structure.resize(n);
    rep.difference_image = RawImage(w, h, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double va = s_aa[i] - mu_a[i] * mu_a[i];
        const double vb = s_bb[i] - mu_b[i] * mu_b[i];
        const double cov = s_ab[i] - mu_a[i] * mu_b[i];
        const double cs = (2.0 * cov + c2) / (va + vb + c2);
        const double s = (2.0 * mu_a[i] * mu_b[i] + c1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * cs;
        rep.contrast_structure[i] = cs;
        rep.map[i] = s;
        rep.difference_image.data[i] = std::clamp(s, 0.0, 1.0) * 255.0;
    }

    // Average over positions whose window needs no border reflection; fall
    // back to the full map when the image is smaller than one window.
    const int r = opts.window / 2;
    const bool interior = w > 2 * r && h > 2 * r;
    const int y0 = interior ? r : 0, y1 = interior ? h - r : h;
    const int x0 = interior ? r : 0, x1 = interior ? w - r : w;
    double sum = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) sum += rep.map[static_cast<std::size_t>(y) * w + x];
    rep.raw_mean = sum / (double(y1 - y0) * (x1 - x0));
    rep.index = std::clamp(rep.raw_mean, 0.0, 1.0);
    return rep;
}

double pixel_accuracy(const AnnotationMask& a, const AnnotationMask& b) {
    if (a.width != b.width || a.height != b.height) throw InvalidInput("masks must have equal dimensions");
    if (a.labels.empty()) return 1.0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) same += a.labels[i] == b.labels[i];
    return double(same) / a.labels.size();
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

CheckpointScore score_checkpoint(const Generator& g, const std::vector<ImagePair>& validation, const std::string& id,
                                 std::int64_t step) {
    if (validation.empty()) throw InvalidInput("validation set is empty");
    CheckpointScore cs;
    cs.id = id;
    cs.step = step;
    std::vector<double> values;
    double acc = 0.0;
    for (const auto& pair : validation) {
        const ModelImage pred = to_model_image(g.predict(to_tensor(pair.input)));
        const RawImage pred_img = quantize(from_model_range(pred));
        const RawImage target_img = quantize(from_model_range(pair.target));
        ImageScore s;
        s.ssim = ssim_index(pred_img, target_img).index;
        s.pixel_accuracy = pixel_accuracy(classify_overlay(pred_img), classify_overlay(target_img));
        values.push_back(s.ssim);
        acc += s.pixel_accuracy;
        cs.per_image.push_back(s);
    }
    cs.mean_ssim = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    cs.median_ssim = median(values);
    cs.mean_pixel_accuracy = acc / validation.size();
    return cs;
}

void sort_scores(std::vector<CheckpointScore>& scores) {
    std::stable_sort(scores.begin(), scores.end(), [](const CheckpointScore& a, const CheckpointScore& b) {
        if (a.mean_ssim != b.mean_ssim) return a.mean_ssim > b.mean_ssim;
        return a.step > b.step;
    });
}

std::vector<CheckpointScore> rank_checkpoints(const std::vector<NetworkCheckpoint>& checkpoints,
                                              const std::vector<ImagePair>& validation) {
    if (checkpoints.empty()) throw InvalidInput("no checkpoints to rank");
    std::vector<CheckpointScore> scores;
    for (std::size_t k = 0; k < checkpoints.size(); ++k)
        scores.push_back(score_checkpoint(checkpoints[k].generator, validation, std::to_string(k), checkpoints[k].step));
    sort_scores(scores);
    return scores;
}

std::vector<CheckpointScore> rank_checkpoint_files(const std::vector<std::filesystem::path>& files,
                                                   const std::vector<ImagePair>& validation) {
    if (files.empty()) throw InvalidInput("no checkpoints to rank");
    std::vector<CheckpointScore> scores;
    for (const auto& f : files) {
        const NetworkCheckpoint c = load_checkpoint(f);
        scores.push_back(score_checkpoint(c.generator, validation, f.string(), c.step));
    }
    sort_scores(scores);
    return scores;
}

std::string evaluation_report_json(const std::vector<CheckpointScore>& ranked) {
    using nlohmann::json;
    json list = json::array();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& s = ranked[r];
        json images = json::array();
        for (const auto& im : s.per_image) images.push_back({{"ssim", im.ssim}, {"pixel_accuracy", im.pixel_accuracy}});
        list.push_back({{"rank", r + 1},
                        {"id", s.id},
                        {"step", s.step},
                        {"mean_ssim", s.mean_ssim},
                        {"median_ssim", s.median_ssim},
                        {"mean_pixel_accuracy", s.mean_pixel_accuracy},
                        {"images", images}});
    }
    return json{{"checkpoints", list}}.dump(2);
}

} // namespace meltpool
