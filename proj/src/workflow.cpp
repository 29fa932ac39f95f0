#include "meltpool/workflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "meltpool/checkpoint.hpp"
#include "meltpool/png_io.hpp"

namespace meltpool {

using nlohmann::json;

ReviewPending::ReviewPending(int it, std::size_t n)
    : std::runtime_error("iteration " + std::to_string(it) + " is waiting for " + std::to_string(n) +
                         " review(s)"),
      iteration(it),
      pending(n) {}

void WorkflowConfig::validate() const {
    if (tile_size <= 0 || (tile_size & (tile_size - 1)) != 0) throw InvalidInput("tile size must be a power of two");
    if (grid_rows < 0 || grid_cols < 0) throw InvalidInput("grid dimensions must be non-negative");
    if (downscale < 1 || tile_size % downscale != 0) throw InvalidInput("downscale factor must divide the tile size");
    if (model_size() < 8) throw InvalidInput("model resolution must be at least 8");
    if (base_filters < 1) throw InvalidInput("base filters must be positive");
    if (discriminator_blocks < 1) throw InvalidInput("discriminator needs at least one block");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw InvalidInput("validation fraction must lie in (0, 1)");
    TrainConfig t;
    t.steps = train_steps;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.lambda = lambda;
    t.checkpoint_interval = std::min(checkpoint_interval, train_steps);
    t.validate();
    generator_config_for(model_size(), base_filters);
    discriminator_config_for(model_size(), discriminator_blocks, base_filters);
}

std::string to_string(AnnotationStatus s) {
    switch (s) {
    case AnnotationStatus::seed: return "seed";
    case AnnotationStatus::predicted: return "predicted";
    case AnnotationStatus::corrected: return "corrected";
    case AnnotationStatus::approved: return "approved";
    }
    return "unknown";
}

AnnotationStatus annotation_status_from_string(const std::string& s) {
    if (s == "seed") return AnnotationStatus::seed;
    if (s == "predicted") return AnnotationStatus::predicted;
    if (s == "corrected") return AnnotationStatus::corrected;
    if (s == "approved") return AnnotationStatus::approved;
    throw InvalidInput("unknown annotation status '" + s + "'");
}

std::string to_string(IterationState s) {
    switch (s) {
    case IterationState::awaiting_review: return "awaiting_review";
    case IterationState::training: return "training";
    case IterationState::complete: return "complete";
    }
    return "unknown";
}

namespace {

IterationState iteration_state_from_string(const std::string& s) {
    if (s == "awaiting_review") return IterationState::awaiting_review;
    if (s == "training") return IterationState::training;
    if (s == "complete") return IterationState::complete;
    throw InvalidInput("unknown iteration state '" + s + "'");
}

template <class T, class F>
const T* find_by(const std::vector<T>& v, F pred) {
    const auto it = std::find_if(v.begin(), v.end(), pred);
    return it == v.end() ? nullptr : &*it;
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json config_json(const WorkflowConfig& c) {
    return {{"tile_size", c.tile_size},
            {"grid_rows", c.grid_rows},
            {"grid_cols", c.grid_cols},
            {"downscale", c.downscale},
            {"base_filters", c.base_filters},
            {"discriminator_blocks", c.discriminator_blocks},
            {"train_steps", c.train_steps},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"lambda", c.lambda},
            {"checkpoint_interval", c.checkpoint_interval},
            {"validation_fraction", c.validation_fraction},
            {"seed", c.seed}};
}

WorkflowConfig config_from_json(const json& j) {
    WorkflowConfig c;
    c.tile_size = j.at("tile_size");
    c.grid_rows = j.at("grid_rows");
    c.grid_cols = j.at("grid_cols");
    c.downscale = j.at("downscale");
    c.base_filters = j.at("base_filters");
    c.discriminator_blocks = j.at("discriminator_blocks");
    c.train_steps = j.at("train_steps");
    c.batch_size = j.at("batch_size");
    c.learning_rate = j.at("learning_rate");
    c.lambda = j.at("lambda");
    c.checkpoint_interval = j.at("checkpoint_interval");
    c.validation_fraction = j.at("validation_fraction");
    c.seed = j.at("seed");
    return c;
}

json point_json(const CorrectionPoint& p) {
    return {{"kind", to_string(p.kind)},
            {"x", p.position.x},
            {"y", p.position.y},
            {"author", p.author},
            {"created_at", p.created_at},
            {"image_id", p.image_id}};
}

CorrectionPoint point_from_json(const json& j) {
    CorrectionPoint p;
    p.kind = correction_kind_from_string(j.at("kind"));
    p.position = {j.at("x").get<int>(), j.at("y").get<int>()};
    p.author = j.value("author", "");
    p.created_at = j.value("created_at", "");
    p.image_id = j.value("image_id", "");
    return p;
}

json iteration_json(const IterationRecord& r) {
    json ranks = json::array();
    for (const auto& e : r.rankings)
        ranks.push_back({{"checkpoint", e.checkpoint},
                         {"step", e.step},
                         {"mean_ssim", e.mean_ssim},
                         {"median_ssim", e.median_ssim},
                         {"mean_pixel_accuracy", e.mean_pixel_accuracy}});
    return {{"index", r.index},
            {"state", to_string(r.state)},
            {"batch", r.batch},
            {"rankings", ranks},
            {"selected_checkpoint", r.selected_checkpoint},
            {"mean_ssim", r.mean_ssim},
            {"newly_annotated", r.newly_annotated},
            {"corrected", r.corrected},
            {"before", r.before},
            {"after", r.after},
            {"train_set_size", r.train_set_size},
            {"statistics", r.statistics}};
}

IterationRecord iteration_from_json(const json& j) {
    IterationRecord r;
    r.index = j.at("index");
    r.state = iteration_state_from_string(j.at("state"));
    r.batch = j.at("batch").get<std::vector<std::string>>();
    for (const auto& e : j.at("rankings"))
        r.rankings.push_back({e.at("checkpoint"), e.at("step"), e.at("mean_ssim"), e.at("median_ssim"),
                              e.at("mean_pixel_accuracy")});
    r.selected_checkpoint = j.at("selected_checkpoint");
    r.mean_ssim = j.at("mean_ssim");
    r.newly_annotated = j.at("newly_annotated");
    r.corrected = j.at("corrected");
    r.before = j.at("before");
    r.after = j.at("after");
    r.train_set_size = j.at("train_set_size");
    r.statistics = j.at("statistics");
    return r;
}

TrainConfig train_config(const WorkflowConfig& c, std::uint64_t seed) {
    TrainConfig t;
    t.steps = c.train_steps;
    t.batch_size = c.batch_size;
    t.learning_rate = c.learning_rate;
    t.lambda = c.lambda;
    t.checkpoint_interval = std::min(c.checkpoint_interval, c.train_steps);
    t.seed = seed;
    return t;
}

void write_text(const std::filesystem::path& p, const std::string& s) { write_file_atomic(p, s.data(), s.size()); }

} // namespace

std::string iteration_to_json(const IterationRecord& r) { return iteration_json(r).dump(2); }
std::string correction_point_json(const CorrectionPoint& p) { return point_json(p).dump(); }

// ---------------------------------------------------------------------------

const TileRecord* DatasetManifest::find_tile(const std::string& id) const {
    return find_by(tiles, [&](const TileRecord& t) { return t.id == id; });
}
const AnnotationRecord* DatasetManifest::find_annotation(const std::string& tile_id) const {
    return find_by(annotations, [&](const AnnotationRecord& a) { return a.tile_id == tile_id; });
}
AnnotationRecord* DatasetManifest::find_annotation(const std::string& tile_id) {
    return const_cast<AnnotationRecord*>(std::as_const(*this).find_annotation(tile_id));
}
const CorrectionRecord* DatasetManifest::find_correction(const std::string& request_id) const {
    return find_by(corrections, [&](const CorrectionRecord& c) { return c.request_id == request_id; });
}
const CheckpointRecord* DatasetManifest::find_checkpoint(const std::string& id) const {
    return find_by(checkpoints, [&](const CheckpointRecord& c) { return c.id == id; });
}

std::vector<std::string> DatasetManifest::problems() const {
    std::vector<std::string> out;
    auto bad = [&](std::string s) { out.push_back(std::move(s)); };
    if (version != 1) bad("unsupported manifest version " + std::to_string(version));
    try {
        config.validate();
    } catch (const std::exception& e) {
        bad(std::string("config: ") + e.what());
    }

    std::set<std::string> ids;
    std::map<std::string, const ImageRecord*> image_by_id;
    for (const auto& im : images) {
        if (im.id.empty() || !ids.insert("image:" + im.id).second) bad("duplicate or empty image id '" + im.id + "'");
        image_by_id[im.id] = &im;
    }
    for (const auto& t : tiles) {
        if (t.id.empty() || !ids.insert("tile:" + t.id).second) bad("duplicate or empty tile id '" + t.id + "'");
        const auto it = image_by_id.find(t.image_id);
        if (it == image_by_id.end()) {
            bad("tile " + t.id + " points to unknown image " + t.image_id);
            continue;
        }
        if (t.origin_row < 0 || t.origin_col < 0 || t.origin_row + t.size > it->second->height ||
            t.origin_col + t.size > it->second->width)
            bad("tile " + t.id + " lies outside its image");
    }
    std::set<std::string> annotated;
    for (const auto& a : annotations) {
        if (!find_tile(a.tile_id)) bad("annotation points to unknown tile " + a.tile_id);
        if (!annotated.insert(a.tile_id).second) bad("tile " + a.tile_id + " has two annotations");
        if (a.iteration < 0 || a.iteration > static_cast<int>(iterations.size()))
            bad("annotation of " + a.tile_id + " names iteration " + std::to_string(a.iteration));
    }
    std::set<std::string> requests;
    for (const auto& c : corrections) {
        if (c.request_id.empty() || !requests.insert(c.request_id).second)
            bad("duplicate or empty request id '" + c.request_id + "'");
        if (!find_tile(c.tile_id)) bad("correction " + c.request_id + " points to unknown tile " + c.tile_id);
    }
    for (const auto& c : checkpoints) {
        if (c.id.empty() || !ids.insert("checkpoint:" + c.id).second) bad("duplicate or empty checkpoint id '" + c.id + "'");
        if (c.iteration < 0 || c.iteration >= static_cast<int>(iterations.size()))
            bad("checkpoint " + c.id + " names iteration " + std::to_string(c.iteration));
    }
    std::set<std::string> held;
    for (const auto& v : validation) {
        const auto* a = find_annotation(v);
        if (!a || a->status != AnnotationStatus::approved) bad("validation tile " + v + " is not approved");
        if (!held.insert(v).second) bad("validation tile " + v + " listed twice");
    }
    for (std::size_t i = 0; i < iterations.size(); ++i) {
        const auto& r = iterations[i];
        if (r.index != static_cast<int>(i)) bad("iteration indices are not contiguous at position " + std::to_string(i));
        if (r.state != IterationState::complete && i + 1 != iterations.size())
            bad("iteration " + std::to_string(r.index) + " is unfinished but not the latest");
        if (i > 0 && r.before != iterations[i - 1].train_set_size)
            bad("iteration " + std::to_string(r.index) + " does not start from the previous training set");
        if (r.state == IterationState::complete) {
            if (i > 0 && r.train_set_size < iterations[i - 1].train_set_size)
                bad("train_set_size decreased at iteration " + std::to_string(r.index));
            if (r.after != r.before + r.newly_annotated) bad("iteration " + std::to_string(r.index) + ": after != before + new");
            if (r.after != r.train_set_size) bad("iteration " + std::to_string(r.index) + ": after != train_set_size");
        }
        if (!r.selected_checkpoint.empty() && !find_checkpoint(r.selected_checkpoint))
            bad("iteration " + std::to_string(r.index) + " selects unknown checkpoint " + r.selected_checkpoint);
        for (const auto& b : r.batch)
            if (!find_tile(b)) bad("iteration " + std::to_string(r.index) + " batch names unknown tile " + b);
    }
    if (!iterations.empty() && validation.empty()) bad("iterations exist without a validation split");
    return out;
}

void DatasetManifest::validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid manifest:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ManifestError(msg);
}

std::string manifest_to_json(const DatasetManifest& m) {
    json images = json::array(), tiles = json::array(), ann = json::array(), corr = json::array(),
         ckpt = json::array(), its = json::array();
    for (const auto& i : m.images)
        images.push_back({{"id", i.id},
                          {"path", i.path},
                          {"width", i.width},
                          {"height", i.height},
                          {"channels", i.channels},
                          {"provenance", i.provenance}});
    for (const auto& t : m.tiles)
        tiles.push_back({{"id", t.id},
                         {"image_id", t.image_id},
                         {"origin", {t.origin_row, t.origin_col}},
                         {"size", t.size},
                         {"path", t.path}});
    for (const auto& a : m.annotations)
        ann.push_back({{"tile_id", a.tile_id},
                       {"mask", a.mask},
                       {"status", to_string(a.status)},
                       {"iteration", a.iteration},
                       {"prediction", a.prediction}});
    for (const auto& c : m.corrections) {
        json pts = json::array();
        for (const auto& p : c.points) pts.push_back(point_json(p));
        corr.push_back({{"request_id", c.request_id},
                        {"tile_id", c.tile_id},
                        {"points", pts},
                        {"approve", c.approve},
                        {"response", c.response}});
    }
    for (const auto& c : m.checkpoints)
        ckpt.push_back({{"id", c.id}, {"path", c.path}, {"step", c.step}, {"iteration", c.iteration}});
    for (const auto& r : m.iterations) its.push_back(iteration_json(r));
    const json doc = {{"version", m.version},
                      {"config", config_json(m.config)},
                      {"images", images},
                      {"tiles", tiles},
                      {"annotations", ann},
                      {"corrections", corr},
                      {"checkpoints", ckpt},
                      {"iterations", its},
                      {"validation", m.validation}};
    return doc.dump(2);
}

DatasetManifest manifest_from_json(const std::string& text) {
    DatasetManifest m;
    try {
        const json j = json::parse(text);
        m.version = j.at("version");
        m.config = config_from_json(j.at("config"));
        for (const auto& i : j.at("images"))
            m.images.push_back({i.at("id"), i.at("path"), i.at("width"), i.at("height"), i.at("channels"),
                                i.at("provenance")});
        for (const auto& t : j.at("tiles"))
            m.tiles.push_back({t.at("id"), t.at("image_id"), t.at("origin")[0], t.at("origin")[1], t.at("size"),
                               t.at("path")});
        for (const auto& a : j.at("annotations"))
            m.annotations.push_back({a.at("tile_id"), a.at("mask"), annotation_status_from_string(a.at("status")),
                                     a.at("iteration"), a.at("prediction")});
        for (const auto& c : j.at("corrections")) {
            CorrectionRecord r{c.at("request_id"), c.at("tile_id"), {}, c.at("approve"), c.at("response")};
            for (const auto& p : c.at("points")) r.points.push_back(point_from_json(p));
            m.corrections.push_back(std::move(r));
        }
        for (const auto& c : j.at("checkpoints"))
            m.checkpoints.push_back({c.at("id"), c.at("path"), c.at("step"), c.at("iteration")});
        for (const auto& r : j.at("iterations")) m.iterations.push_back(iteration_from_json(r));
        m.validation = j.at("validation").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ManifestError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------

StatisticsResult statistics_for_masks(const std::vector<AnnotationMask>& masks, const PoolAnalysisOptions& opts) {
    StatisticsResult r;
    for (const auto& mask : masks)
        for (auto& p : analyze_mask(mask, opts).pools) {
            p.id = static_cast<int>(r.pools.size());
            r.pools.push_back(std::move(p));
        }
    r.report = summarize_distributions(r.pools);
    r.json = statistics_json(r.report, r.pools);
    return r;
}

// ---------------------------------------------------------------------------

Workflow::Workflow(std::filesystem::path dir, DatasetManifest m) : dir_(std::move(dir)), m_(std::move(m)) {}

Workflow::Workflow(const std::filesystem::path& dir) : dir_(dir) {
    const auto path = dir_ / "manifest.json";
    if (!std::filesystem::exists(path)) throw NotFound("no manifest in " + dir_.string());
    const auto bytes = read_file(path);
    m_ = manifest_from_json(std::string(bytes.begin(), bytes.end()));
    m_.validate();
}

Workflow::Workflow(Workflow&& o) noexcept : dir_(std::move(o.dir_)), m_(std::move(o.m_)), training_(o.training_) {}

Workflow Workflow::create(const std::filesystem::path& dir, const WorkflowConfig& cfg) {
    cfg.validate();
    if (std::filesystem::exists(dir / "manifest.json")) throw Conflict("a workspace already exists in " + dir.string());
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    m.config = cfg;
    Workflow w(dir, DatasetManifest{});
    w.commit(std::move(m));
    return w;
}

DatasetManifest Workflow::snapshot() const {
    std::lock_guard lock(mu_);
    return m_;
}

void Workflow::commit(DatasetManifest next) {
    next.validate();
    write_text(dir_ / "manifest.json", manifest_to_json(next));
    m_ = std::move(next);
}

std::string Workflow::store_mask(const AnnotationMask& mask) {
    const auto bytes = encode_mask_png(mask);
    const std::string rel = "masks/" + hex64(fnv1a64(bytes.data(), bytes.size())) + ".png";
    if (!std::filesystem::exists(dir_ / rel)) write_file_atomic(dir_ / rel, bytes.data(), bytes.size());
    return rel;
}

std::string Workflow::store_png(const std::string& folder, const RawImage& img) {
    const auto bytes = encode_png(quantize(img));
    const std::string rel = folder + "/" + hex64(fnv1a64(bytes.data(), bytes.size())) + ".png";
    if (!std::filesystem::exists(dir_ / rel)) write_file_atomic(dir_ / rel, bytes.data(), bytes.size());
    return rel;
}

std::string Workflow::store_checkpoint(const NetworkCheckpoint& net, int) {
    const auto bytes = serialize_checkpoint(net);
    const std::string rel = "checkpoints/" + hex64(fnv1a64(bytes.data(), bytes.size())) + ".mpck";
    if (!std::filesystem::exists(dir_ / rel)) write_file_atomic(dir_ / rel, bytes.data(), bytes.size());
    return rel;
}

void Workflow::save_loss(const LossHistory& h, int iteration) const {
    std::filesystem::create_directories(dir_ / "reports");
    h.write_csv(dir_ / ("reports/loss-" + std::to_string(iteration) + ".csv"));
}

std::vector<std::string> Workflow::add_image(const RawImage& img, const std::string& provenance, const std::string& id_in) {
    img.validate();
    if (provenance != "raw" && provenance != "synthetic") throw InvalidInput("provenance must be raw or synthetic");
    std::lock_guard lock(mu_);
    const auto& cfg = m_.config;
    std::string id = id_in;
    if (id.empty()) {
        std::ostringstream s;
        s << "img" << std::setw(4) << std::setfill('0') << m_.images.size();
        id = s.str();
    }
    if (id.find('/') != std::string::npos || id.find("..") != std::string::npos) throw InvalidInput("bad image id '" + id + "'");
    if (find_by(m_.images, [&](const ImageRecord& r) { return r.id == id; })) throw Conflict("image " + id + " exists");

    auto cover = [&](int dim, int fixed) {
        return fixed > 0 ? fixed : std::max(1, (dim + cfg.tile_size - 1) / cfg.tile_size);
    };
    const int rows = cover(img.height, cfg.grid_rows), cols = cover(img.width, cfg.grid_cols);
    const auto tiles = tile_image(img, cfg.tile_size, rows, cols, id);

    DatasetManifest next = m_;
    next.images.push_back({id, store_png("images", img), img.width, img.height, img.channels, provenance});
    std::vector<std::string> out;
    for (std::size_t k = 0; k < tiles.size(); ++k) {
        const Tile& t = tiles[k];
        std::ostringstream s;
        s << id << "-r" << k / cols << "c" << k % cols;
        next.tiles.push_back({s.str(), id, t.row, t.col, t.size, store_png("tiles", downscale(t, cfg.downscale))});
        out.push_back(s.str());
    }
    commit(std::move(next));
    return out;
}

void Workflow::set_annotation(const std::string& tile_id, const AnnotationMask& mask, AnnotationStatus status) {
    std::lock_guard lock(mu_);
    if (!m_.find_tile(tile_id)) throw NotFound("unknown tile " + tile_id);
    if (m_.find_annotation(tile_id)) throw Conflict("tile " + tile_id + " is already annotated");
    const int n = m_.config.model_size();
    if (mask.width != n || mask.height != n) throw InvalidInput("annotation must match the model resolution");
    DatasetManifest next = m_;
    next.annotations.push_back({tile_id, store_mask(mask), status, static_cast<int>(m_.iterations.size()), {}});
    commit(std::move(next));
}

std::vector<std::string> Workflow::seed_tiles(std::vector<std::string> ids, bool approve, const SeedOptions& opts) {
    if (ids.empty()) ids = unseen_tiles();
    for (const auto& id : ids) set_annotation(id, seed_annotation(load_tile(id), opts),
                                              approve ? AnnotationStatus::approved : AnnotationStatus::seed);
    return ids;
}

std::vector<std::string> Workflow::unseen_tiles() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& t : m_.tiles)
        if (!m_.find_annotation(t.id)) out.push_back(t.id);
    return out;
}

RawImage Workflow::load_tile(const std::string& tile_id) const {
    std::string path;
    {
        std::lock_guard lock(mu_);
        const auto* t = m_.find_tile(tile_id);
        if (!t) throw NotFound("unknown tile " + tile_id);
        path = t->path;
    }
    return read_png(dir_ / path);
}

AnnotationMask Workflow::load_mask(const std::string& tile_id) const {
    std::string path;
    {
        std::lock_guard lock(mu_);
        if (!m_.find_tile(tile_id)) throw NotFound("unknown tile " + tile_id);
        const auto* a = m_.find_annotation(tile_id);
        if (!a) throw NotFound("tile " + tile_id + " has no annotation");
        path = a->mask;
    }
    return read_mask_png(dir_ / path);
}

NetworkCheckpoint Workflow::load_network(const std::string& id) const {
    std::string path;
    {
        std::lock_guard lock(mu_);
        const auto* c = m_.find_checkpoint(id);
        if (!c) throw NotFound("unknown checkpoint " + id);
        path = c->path;
    }
    return load_checkpoint(dir_ / path);
}

std::vector<ImagePair> Workflow::pairs_for(const std::vector<std::string>& ids) const {
    std::vector<ImagePair> out;
    out.reserve(ids.size());
    for (const auto& id : ids)
        out.push_back({to_model_range(load_tile(id)), to_model_range(encode_overlay(load_mask(id)))});
    return out;
}

std::vector<std::string> Workflow::training_tiles() const {
    std::set<std::string> held(m_.validation.begin(), m_.validation.end());
    std::vector<std::string> out;
    for (const auto& a : m_.annotations)
        if (a.status == AnnotationStatus::approved && !held.count(a.tile_id)) out.push_back(a.tile_id);
    return out;
}

std::vector<CheckpointScore> Workflow::rank_checkpoints() const {
    DatasetManifest m = snapshot();
    if (m.checkpoints.empty()) throw Conflict("no checkpoints to rank");
    const auto val = pairs_for(m.validation);
    std::vector<CheckpointScore> scores;
    for (const auto& c : m.checkpoints)
        scores.push_back(score_checkpoint(load_checkpoint(dir_ / c.path).generator, val, c.id, c.step));
    sort_scores(scores);
    return scores;
}

IterationRecord Workflow::bootstrap() {
    std::unique_lock lock(mu_);
    if (!m_.iterations.empty()) throw Conflict("workspace is already bootstrapped");
    if (training_) throw Conflict("a training job is already running");
    std::vector<std::string> approved;
    for (const auto& a : m_.annotations)
        if (a.status == AnnotationStatus::approved) approved.push_back(a.tile_id);
    if (approved.size() < 2) throw InvalidInput("bootstrap needs at least two approved tiles");

    const auto& cfg = m_.config;
    std::mt19937_64 rng(cfg.seed ^ 0x76616c6964ULL);
    auto shuffled = approved;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.validation_fraction * approved.size())), 1, approved.size() - 1);
    std::vector<std::string> validation(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
    std::set<std::string> held(validation.begin(), validation.end());
    std::vector<std::string> train_ids;
    for (const auto& id : approved)
        if (!held.count(id)) train_ids.push_back(id);

    training_ = true;
    lock.unlock();
    std::vector<CheckpointRecord> saved;
    double val_ssim = 0.0;
    try {
        const auto data = pairs_for(train_ids);
        const auto init = make_networks(generator_config_for(cfg.model_size(), cfg.base_filters),
                                        discriminator_config_for(cfg.model_size(), cfg.discriminator_blocks, cfg.base_filters),
                                        cfg.seed);
        const auto res = train(data, init, train_config(cfg, cfg.seed), [&](const NetworkCheckpoint& n) {
            saved.push_back({"i0-s" + std::to_string(n.step), store_checkpoint(n, 0), n.step, 0});
        });
        save_loss(res.history, 0);
        val_ssim = score_checkpoint(res.final.generator, pairs_for(validation)).mean_ssim;
    } catch (...) {
        lock.lock();
        training_ = false;
        throw;
    }
    lock.lock();
    training_ = false;
    DatasetManifest next = m_;
    next.validation = validation;
    next.checkpoints.insert(next.checkpoints.end(), saved.begin(), saved.end());
    IterationRecord r;
    r.index = 0;
    r.state = IterationState::complete;
    r.selected_checkpoint = saved.back().id;
    r.mean_ssim = val_ssim;
    r.newly_annotated = train_ids.size();
    r.after = r.train_set_size = train_ids.size();
    next.iterations.push_back(r);
    commit(std::move(next));
    return r;
}

void Workflow::check_batch(const std::vector<std::string>& batch) const {
    std::lock_guard lock(mu_);
    check_batch_locked(batch);
}

void Workflow::check_batch_locked(const std::vector<std::string>& batch) const {
    if (batch.empty()) throw InvalidInput("batch is empty");
    if (m_.iterations.empty()) throw Conflict("workspace has no trained model yet; bootstrap first");
    if (m_.iterations.back().state != IterationState::complete)
        throw Conflict("iteration " + std::to_string(m_.iterations.back().index) + " is still open");
    if (training_) throw Conflict("a training job is already running");
    if (m_.checkpoints.empty()) throw Conflict("no checkpoints available");
    std::set<std::string> seen;
    for (const auto& id : batch) {
        if (!seen.insert(id).second) throw InvalidInput("tile " + id + " appears twice in the batch");
        if (!m_.find_tile(id)) throw NotFound("unknown tile " + id);
        if (m_.find_annotation(id)) throw Conflict("tile " + id + " is already annotated");
    }
}

IterationRecord Workflow::advance_iteration(const std::vector<std::string>& batch, const AdvanceOptions& opts) {
    std::unique_lock lock(mu_);
    check_batch_locked(batch);
    const DatasetManifest m = m_;
    training_ = true;
    lock.unlock();

    IterationRecord r;
    std::vector<AnnotationRecord> predicted;
    try {
        const auto val = pairs_for(m.validation);
        std::vector<CheckpointScore> scores;
        for (const auto& c : m.checkpoints)
            scores.push_back(score_checkpoint(load_checkpoint(dir_ / c.path).generator, val, c.id, c.step));
        sort_scores(scores);
        r.index = static_cast<int>(m.iterations.size());
        r.state = IterationState::awaiting_review;
        r.batch = batch;
        for (const auto& s : scores)
            r.rankings.push_back({s.id, s.step, s.mean_ssim, s.median_ssim, s.mean_pixel_accuracy});
        r.selected_checkpoint = scores.front().id;
        r.mean_ssim = scores.front().mean_ssim;
        r.before = m.iterations.back().train_set_size;

        const Generator g = load_network(r.selected_checkpoint).generator;
        for (const auto& id : batch) {
            const RawImage out = quantize(from_model_range(to_model_image(g.predict(to_tensor(to_model_range(load_tile(id)))))));
            predicted.push_back({id, store_mask(classify_overlay(out)), AnnotationStatus::predicted, r.index,
                                 store_png("predictions", out)});
        }
    } catch (...) {
        lock.lock();
        training_ = false;
        throw;
    }
    lock.lock();
    training_ = false;
    DatasetManifest next = m_;
    next.annotations.insert(next.annotations.end(), predicted.begin(), predicted.end());
    next.iterations.push_back(r);
    commit(std::move(next));
    return finish_iteration(lock, opts);
}

IterationRecord Workflow::resume_iteration(const AdvanceOptions& opts) {
    std::unique_lock lock(mu_);
    if (m_.iterations.empty() || m_.iterations.back().state == IterationState::complete)
        throw Conflict("no open iteration to resume");
    if (training_) throw Conflict("a training job is already running");
    return finish_iteration(lock, opts);
}

IterationRecord Workflow::finish_iteration(std::unique_lock<std::mutex>& lock, const AdvanceOptions& opts) {
    const int index = m_.iterations.back().index;
    auto pending = [&] {
        std::size_t n = 0;
        for (const auto& id : m_.iterations.back().batch) {
            const auto* a = m_.find_annotation(id);
            n += !(a && (a->status == AnnotationStatus::approved || a->status == AnnotationStatus::corrected));
        }
        return n;
    };

    if (m_.iterations.back().state == IterationState::awaiting_review) {
        if (opts.auto_approve && pending() > 0) {
            DatasetManifest next = m_;
            for (const auto& id : next.iterations.back().batch) {
                auto* a = next.find_annotation(id);
                if (a->status != AnnotationStatus::corrected) a->status = AnnotationStatus::approved;
            }
            commit(std::move(next));
        }
        if (!reviewed_.wait_for(lock, opts.timeout, [&] { return pending() == 0; })) throw ReviewPending(index, pending());

        DatasetManifest next = m_;
        IterationRecord& r = next.iterations.back();
        r.corrected = 0;
        for (const auto& id : r.batch) {
            next.find_annotation(id)->status = AnnotationStatus::approved;
            r.corrected += std::any_of(next.corrections.begin(), next.corrections.end(), [&](const CorrectionRecord& c) {
                return c.tile_id == id && !c.points.empty();
            });
        }
        r.newly_annotated = r.batch.size();
        r.state = IterationState::training;
        commit(std::move(next));
    }
    if (training_) throw Conflict("a training job is already running");

    const auto cfg = m_.config;
    const auto train_ids = training_tiles();
    const std::string selected = m_.iterations.back().selected_checkpoint;
    const std::string selected_path = m_.find_checkpoint(selected)->path;
    training_ = true;
    lock.unlock();
    std::vector<CheckpointRecord> saved;
    try {
        const auto data = pairs_for(train_ids);
        const NetworkCheckpoint init = load_checkpoint(dir_ / selected_path);
        const std::uint64_t seed = cfg.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(index);
        const auto res = train(data, init, train_config(cfg, seed), [&](const NetworkCheckpoint& n) {
            saved.push_back({"i" + std::to_string(index) + "-s" + std::to_string(n.step), store_checkpoint(n, index),
                             n.step, index});
        });
        save_loss(res.history, index);
    } catch (...) {
        lock.lock();
        training_ = false;
        throw;
    }
    lock.lock();
    training_ = false;
    DatasetManifest next = m_;
    for (const auto& c : saved)
        if (!next.find_checkpoint(c.id)) next.checkpoints.push_back(c);
    IterationRecord& r = next.iterations.back();
    r.after = r.before + r.newly_annotated;
    r.train_set_size = train_ids.size();
    r.state = IterationState::complete;
    const IterationRecord out = r;
    commit(std::move(next));
    return out;
}

std::string Workflow::ingest_corrections(const std::string& tile_id, const std::vector<CorrectionPoint>& points_in,
                                         const std::string& request_id, bool approve) {
    std::unique_lock lock(mu_);
    if (request_id.empty()) throw InvalidInput("request_id is required");
    if (const auto* prior = m_.find_correction(request_id)) return prior->response;
    if (!m_.find_tile(tile_id)) throw NotFound("unknown tile " + tile_id);
    const auto* ann = m_.find_annotation(tile_id);
    if (!ann) throw Conflict("tile " + tile_id + " has no annotation to correct");
    if (ann->status == AnnotationStatus::approved) throw Conflict("tile " + tile_id + " is already approved");

    const AnnotationMask mask = read_mask_png(dir_ / ann->mask);
    std::vector<CorrectionPoint> points = points_in;
    for (auto& p : points) {
        if (p.position.x < 0 || p.position.y < 0 || p.position.x >= mask.width || p.position.y >= mask.height)
            throw InvalidInput("correction point (" + std::to_string(p.position.x) + ", " +
                               std::to_string(p.position.y) + ") lies outside the tile");
        if (p.image_id.empty()) p.image_id = tile_id;
    }

    const BinaryMask before = region_mask(mask);
    AnnotationMask corrected = mask;
    if (!points.empty()) corrected = merge_region_mask(mask, before, apply_corrections(before, points));
    const BinaryMask after = region_mask(corrected);

    DatasetManifest next = m_;
    auto* a = next.find_annotation(tile_id);
    a->mask = store_mask(corrected);
    if (approve)
        a->status = AnnotationStatus::approved;
    else if (!points.empty())
        a->status = AnnotationStatus::corrected;
    const json reply = {{"request_id", request_id},
                        {"tile_id", tile_id},
                        {"status", to_string(a->status)},
                        {"mask", a->mask},
                        {"points_applied", points.size()},
                        {"regions_before", label_components(before, false).count},
                        {"regions_after", label_components(after, false).count}};
    next.corrections.push_back({request_id, tile_id, points, approve, reply.dump()});
    commit(std::move(next));
    reviewed_.notify_all();
    return m_.corrections.back().response;
}

StatisticsResult Workflow::run_statistics(int iteration) {
    std::vector<std::string> ids;
    {
        std::lock_guard lock(mu_);
        if (iteration < 0 || iteration >= static_cast<int>(m_.iterations.size()))
            throw NotFound("unknown iteration " + std::to_string(iteration));
        for (const auto& a : m_.annotations)
            if (a.iteration == iteration && a.status == AnnotationStatus::approved) ids.push_back(a.tile_id);
    }
    if (ids.empty()) throw Conflict("iteration " + std::to_string(iteration) + " has no approved annotations");
    std::vector<AnnotationMask> masks;
    for (const auto& id : ids) masks.push_back(load_mask(id));
    StatisticsResult res;
    try {
        res = statistics_for_masks(masks);
    } catch (const InvalidInput& e) {
        // Stored masks are well formed, so this means too few measurable pools.
        throw Conflict("iteration " + std::to_string(iteration) + ": " + e.what());
    }

    const std::string base = "reports/stats-" + std::to_string(iteration);
    write_text(dir_ / (base + ".json"), res.json);
    write_text(dir_ / (base + "-pools.csv"), pools_csv(res.pools));
    write_text(dir_ / (base + "-histograms.csv"), histogram_csv(res.report));
    std::lock_guard lock(mu_);
    DatasetManifest next = m_;
    next.iterations[static_cast<std::size_t>(iteration)].statistics = base + ".json";
    commit(std::move(next));
    return res;
}

} // namespace meltpool
