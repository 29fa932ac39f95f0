// Command-line front end over a workspace directory.
#include <CLI11.hpp>
#include <csignal>
#include <iostream>
#include <json.hpp>

#include "meltpool/png_io.hpp"
#include "meltpool/server.hpp"
#include "meltpool/synthetic.hpp"
#include "meltpool/workflow.hpp"

using namespace meltpool;
namespace fs = std::filesystem;

namespace {

constexpr int kReviewPendingExit = 3;

Workflow open_or_create(const fs::path& dir, const WorkflowConfig& cfg) {
    if (fs::exists(dir / "manifest.json")) return Workflow(dir);
    return Workflow::create(dir, cfg);
}

void add_config_options(CLI::App* app, WorkflowConfig& c) {
    app->add_option("--tile-size", c.tile_size, "Tile side in source pixels (new workspace)");
    app->add_option("--grid-rows", c.grid_rows, "Tile rows, 0 = cover the image");
    app->add_option("--grid-cols", c.grid_cols, "Tile columns, 0 = cover the image");
    app->add_option("--downscale", c.downscale, "Tile reduction factor before the model");
    app->add_option("--base-filters", c.base_filters);
    app->add_option("--disc-blocks", c.discriminator_blocks);
    app->add_option("--steps", c.train_steps, "Training steps per iteration");
    app->add_option("--batch-size", c.batch_size);
    app->add_option("--lr", c.learning_rate);
    app->add_option("--lambda", c.lambda);
    app->add_option("--checkpoint-interval", c.checkpoint_interval);
    app->add_option("--validation", c.validation_fraction, "Held-out fraction of the bootstrap set");
    app->add_option("--seed", c.seed);
}

// Input for the generator: a tile at source or model resolution.
RawImage model_input(const RawImage& img, const WorkflowConfig& c) {
    if (img.width != img.height) throw InvalidInput("prediction input must be square");
    if (img.width == c.model_size()) return img;
    if (img.width == c.tile_size) return downscale(img, c.downscale);
    throw InvalidInput("prediction input must be " + std::to_string(c.tile_size) + " or " +
                       std::to_string(c.model_size()) + " pixels wide");
}

Server* running_server = nullptr;
void on_signal(int) {
    if (running_server) running_server->shutdown();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Melt-pool segmentation workflow"};
    app.require_subcommand(1);
    fs::path ws = "workspace";
    app.add_option("-w,--workspace", ws, "Workspace directory")->capture_default_str();
    WorkflowConfig cfg;

    auto* synth = app.add_subcommand("synth", "Add synthetic scenes with their true annotations");
    int synth_count = 2, synth_size = 512, synth_approve = -1;
    std::uint64_t synth_seed = 0;
    synth->add_option("-n,--count", synth_count)->check(CLI::PositiveNumber);
    synth->add_option("--size", synth_size, "Scene side in pixels");
    synth->add_option("--scene-seed", synth_seed);
    synth->add_option("--approve", synth_approve, "Approve the truth for this many tiles (default all)");
    add_config_options(synth, cfg);

    auto* pre = app.add_subcommand("preprocess", "Tile raw micrographs into the workspace");
    std::vector<fs::path> pre_images;
    std::string provenance = "raw";
    pre->add_option("images", pre_images, "PNG micrographs")->required()->check(CLI::ExistingFile);
    pre->add_option("--provenance", provenance)->check(CLI::IsMember({"raw", "synthetic"}));
    add_config_options(pre, cfg);

    auto* seed = app.add_subcommand("seed", "Thresholding annotations for unannotated tiles");
    std::vector<std::string> seed_tiles;
    bool seed_approve = false;
    seed->add_option("--tiles", seed_tiles, "Tile ids (default: all unannotated)");
    seed->add_flag("--approve", seed_approve, "Mark the seeds as approved");

    app.add_subcommand("train", "Bootstrap: fix the validation split and train iteration 0");

    auto* predict = app.add_subcommand("predict", "Run a checkpoint on one tile image");
    std::string predict_ckpt;
    fs::path predict_in, predict_out, predict_mask;
    predict->add_option("--checkpoint", predict_ckpt, "Checkpoint id (default: latest selection)");
    predict->add_option("--image", predict_in)->required()->check(CLI::ExistingFile);
    predict->add_option("-o,--out", predict_out, "Overlay PNG")->required();
    predict->add_option("--mask", predict_mask, "Also write the class mask PNG");

    auto* evaluate = app.add_subcommand("evaluate", "Rank checkpoints on the validation split");
    fs::path eval_out;
    evaluate->add_option("-o,--out", eval_out, "Write the JSON report here instead of stdout");

    auto* iterate = app.add_subcommand("iterate", "Predict a batch, wait for review, retrain");
    std::vector<std::string> batch;
    std::size_t next_n = 0;
    bool auto_approve = false, resume = false;
    double timeout_s = 0.0;
    auto* batch_opt = iterate->add_option("--batch", batch, "Tile ids to annotate");
    auto* next_opt = iterate->add_option("--next", next_n, "Take the next N unannotated tiles");
    auto* resume_opt = iterate->add_flag("--resume", resume, "Continue a suspended iteration");
    batch_opt->excludes(next_opt)->excludes(resume_opt);
    next_opt->excludes(resume_opt);
    iterate->add_flag("--auto-approve", auto_approve, "Accept the predictions without review");
    iterate->add_option("--timeout", timeout_s, "Seconds to wait for reviews before suspending");

    auto* stats = app.add_subcommand("stats", "Melt-pool geometry statistics");
    int stats_iter = -1;
    std::vector<fs::path> stats_masks;
    fs::path stats_out;
    auto* it_opt = stats->add_option("--iteration", stats_iter, "Approved annotations of one iteration");
    auto* mask_opt = stats->add_option("--mask", stats_masks, "Mask PNGs outside a workspace")->check(CLI::ExistingFile);
    it_opt->excludes(mask_opt);
    stats->add_option("-o,--out", stats_out, "Directory for JSON and CSV reports (with --mask)");

    auto* serve = app.add_subcommand("serve", "HTTP API and static annotation UI");
    ServerOptions sopts;
    serve->add_option("--host", sopts.host)->capture_default_str();
    serve->add_option("--port", sopts.port)->capture_default_str();
    serve->add_option("--static", sopts.static_dir, "Directory served at /");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            Workflow w = open_or_create(ws, cfg);
            const auto c = w.snapshot().config;
            int approved = 0;
            fs::create_directories(ws / "truth");
            for (int k = 0; k < synth_count; ++k) {
                SceneSpec spec = small_scene_spec(synth_size, synth_seed + static_cast<std::uint64_t>(k));
                const Scene scene = generate_scene(spec);
                const auto ids = w.add_image(scene.image, "synthetic");
                const auto m = w.snapshot();
                const std::string image_id = m.find_tile(ids[0])->image_id;
                write_file_atomic(ws / "truth" / (image_id + ".json"), truth_to_json(scene.truth, spec));
                write_mask_png(ws / "truth" / (image_id + ".png"), scene.truth.mask);
                // Tiles past the approval budget stay unannotated for later iterations.
                for (const auto& id : ids) {
                    if (synth_approve >= 0 && approved >= synth_approve) break;
                    const auto* t = m.find_tile(id);
                    w.set_annotation(id, downscale_mask(crop_mask(scene.truth.mask, t->origin_row, t->origin_col, t->size),
                                                        c.downscale),
                                     AnnotationStatus::approved);
                    ++approved;
                }
                std::cout << image_id << ": " << ids.size() << " tiles, " << scene.truth.visible_pool_count()
                          << " visible pools\n";
            }
        } else if (pre->parsed()) {
            Workflow w = open_or_create(ws, cfg);
            for (const auto& p : pre_images) {
                const auto ids = w.add_image(read_png(p), provenance);
                std::cout << p.string() << ": " << ids.size() << " tiles\n";
            }
        } else if (seed->parsed()) {
            Workflow w(ws);
            const auto ids = w.seed_tiles(seed_tiles, seed_approve);
            std::cout << "seeded " << ids.size() << " tiles\n";
        } else if (app.got_subcommand("train")) {
            Workflow w(ws);
            std::cout << iteration_to_json(w.bootstrap()) << "\n";
        } else if (predict->parsed()) {
            Workflow w(ws);
            const auto m = w.snapshot();
            if (predict_ckpt.empty()) {
                if (m.iterations.empty()) throw Conflict("no trained model; run train first");
                predict_ckpt = m.iterations.back().selected_checkpoint;
            }
            const Generator g = w.load_network(predict_ckpt).generator;
            const RawImage in = model_input(read_png(predict_in), m.config);
            const RawImage out = quantize(from_model_range(to_model_image(g.predict(to_tensor(to_model_range(in))))));
            write_png(predict_out, out);
            if (!predict_mask.empty()) write_mask_png(predict_mask, classify_overlay(out));
        } else if (evaluate->parsed()) {
            Workflow w(ws);
            const std::string report = evaluation_report_json(w.rank_checkpoints());
            if (eval_out.empty())
                std::cout << report << "\n";
            else
                write_file_atomic(eval_out, report);
        } else if (iterate->parsed()) {
            Workflow w(ws);
            AdvanceOptions o;
            o.auto_approve = auto_approve;
            o.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(timeout_s * 1000.0));
            if (next_n > 0) {
                batch = w.unseen_tiles();
                if (batch.size() > next_n) batch.resize(next_n);
            }
            try {
                const IterationRecord r = resume ? w.resume_iteration(o) : w.advance_iteration(batch, o);
                std::cout << iteration_to_json(r) << "\n";
            } catch (const ReviewPending& e) {
                std::cerr << e.what() << "; review the batch, then run iterate --resume\n";
                return kReviewPendingExit;
            }
        } else if (stats->parsed()) {
            StatisticsResult r;
            if (!stats_masks.empty()) {
                std::vector<AnnotationMask> masks;
                for (const auto& p : stats_masks) masks.push_back(read_mask_png(p));
                r = statistics_for_masks(masks);
                if (!stats_out.empty()) {
                    fs::create_directories(stats_out);
                    write_file_atomic(stats_out / "statistics.json", r.json);
                    write_file_atomic(stats_out / "pools.csv", pools_csv(r.pools));
                    write_file_atomic(stats_out / "histograms.csv", histogram_csv(r.report));
                }
            } else {
                Workflow w(ws);
                if (stats_iter < 0) {
                    const auto m = w.snapshot();
                    if (m.iterations.empty()) throw Conflict("no iterations yet");
                    stats_iter = m.iterations.back().index;
                }
                r = w.run_statistics(stats_iter);
            }
            std::cout << r.json << "\n";
        } else if (serve->parsed()) {
            Workflow w(ws);
            Server server(w, sopts);
            const int port = server.bind();
            running_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cout << "serving " << ws.string() << " on http://" << sopts.host << ":" << port << "/" << std::endl;
            server.listen();
            running_server = nullptr;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
