#include "meltpool/server.hpp"

#include <atomic>
#include <httplib.h>
#include <json.hpp>
#include <thread>

#include "meltpool/png_io.hpp"

namespace meltpool {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_png(httplib::Response& res, const std::vector<std::uint8_t>& bytes) {
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
}

int status_for(std::exception_ptr ep, std::string& message) {
    try {
        std::rethrow_exception(ep);
    } catch (const json::exception& e) {
        message = std::string("malformed request body: ") + e.what();
        return 400;
    } catch (const InvalidInput& e) {
        message = e.what();
        return 400;
    } catch (const NotFound& e) {
        message = e.what();
        return 404;
    } catch (const Conflict& e) {
        message = e.what();
        return 409;
    } catch (const ReviewPending& e) {
        message = e.what();
        return 409;
    } catch (const CorrectionError& e) {
        message = e.what();
        return 422;
    } catch (const std::exception& e) {
        message = e.what();
        return 500;
    } catch (...) {
        message = "unknown error";
        return 500;
    }
}

int parse_index(const std::string& s) {
    try {
        std::size_t used = 0;
        const int i = std::stoi(s, &used);
        if (used == s.size() && i >= 0) return i;
    } catch (const std::exception&) {
    }
    throw InvalidInput("bad iteration index '" + s + "'");
}

json tiles_json(const DatasetManifest& m) {
    json out = json::array();
    for (const auto& t : m.tiles) {
        json j = {{"id", t.id}, {"image_id", t.image_id}, {"origin", {t.origin_row, t.origin_col}}, {"size", t.size},
                  {"status", nullptr}, {"iteration", nullptr}, {"has_prediction", false}};
        if (const auto* a = m.find_annotation(t.id)) {
            j["status"] = to_string(a->status);
            j["iteration"] = a->iteration;
            j["has_prediction"] = !a->prediction.empty();
        }
        out.push_back(j);
    }
    return out;
}

json checkpoints_json(const DatasetManifest& m) {
    const std::vector<RankingEntry>* ranks = nullptr;
    for (auto it = m.iterations.rbegin(); it != m.iterations.rend() && !ranks; ++it)
        if (!it->rankings.empty()) ranks = &it->rankings;
    json out = json::array();
    for (const auto& c : m.checkpoints) {
        json j = {{"id", c.id}, {"step", c.step}, {"iteration", c.iteration}, {"rank", nullptr}, {"mean_ssim", nullptr}};
        if (ranks)
            for (std::size_t r = 0; r < ranks->size(); ++r)
                if ((*ranks)[r].checkpoint == c.id) {
                    j["rank"] = r + 1;
                    j["mean_ssim"] = (*ranks)[r].mean_ssim;
                    j["median_ssim"] = (*ranks)[r].median_ssim;
                }
        out.push_back(j);
    }
    return out;
}

} // namespace

struct Server::Impl {
    Workflow& wf;
    ServerOptions opts;
    httplib::Server http;
    std::thread listener;
    bool bound = false;

    std::mutex job_mu;
    std::thread job;
    bool job_running = false;
    int job_index = -1;
    std::string job_error;
    std::atomic<bool> stopping{false};

    Impl(Workflow& w, ServerOptions o) : wf(w), opts(std::move(o)) { routes(); }

    void run_job(std::vector<std::string> batch, bool auto_approve) {
        AdvanceOptions o{auto_approve, opts.review_poll};
        std::string error;
        try {
            bool done = false;
            try {
                if (batch.empty())
                    wf.resume_iteration(o);
                else
                    wf.advance_iteration(batch, o);
                done = true;
            } catch (const ReviewPending&) {
            }
            while (!done && !stopping) {
                try {
                    wf.resume_iteration(o);
                    done = true;
                } catch (const ReviewPending&) {
                }
            }
        } catch (const std::exception& e) {
            error = e.what();
        }
        std::lock_guard lock(job_mu);
        job_running = false;
        job_error = error;
    }

    // Caller holds job_mu.
    void launch(std::vector<std::string> batch, bool auto_approve, int index) {
        if (job.joinable()) job.join();
        job_running = true;
        job_index = index;
        job_error.clear();
        job = std::thread([this, b = std::move(batch), auto_approve] { run_job(b, auto_approve); });
    }

    void resume_open_iteration() {
        const auto m = wf.snapshot();
        if (m.iterations.empty() || m.iterations.back().state == IterationState::complete) return;
        std::lock_guard lock(job_mu);
        launch({}, false, m.iterations.back().index);
    }

    void routes() {
        http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string msg;
            const int status = status_for(ep, msg);
            send_json(res, {{"error", msg}}, status);
        });

        http.Get("/api/tiles", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, tiles_json(wf.snapshot()));
        });

        http.Get(R"(/api/tiles/([^/]+)/(image|prediction|overlay))", [this](const httplib::Request& req,
                                                                           httplib::Response& res) {
            const std::string id = req.matches[1], kind = req.matches[2];
            const auto m = wf.snapshot();
            const auto* t = m.find_tile(id);
            if (!t) throw NotFound("unknown tile " + id);
            if (kind == "image") return send_png(res, read_file(wf.resolve(t->path)));
            const auto* a = m.find_annotation(id);
            if (!a) throw NotFound("tile " + id + " has no annotation");
            if (kind == "prediction") {
                if (a->prediction.empty()) throw NotFound("tile " + id + " has no prediction");
                return send_png(res, read_file(wf.resolve(a->prediction)));
            }
            send_png(res, encode_png(encode_overlay(read_mask_png(wf.resolve(a->mask)))));
        });

        http.Post(R"(/api/tiles/([^/]+)/corrections)", [this](const httplib::Request& req, httplib::Response& res) {
            const json body = json::parse(req.body);
            if (!body.is_object()) throw InvalidInput("body must be a JSON object");
            std::vector<CorrectionPoint> points;
            for (const auto& p : body.value("points", json::array())) {
                CorrectionPoint c;
                c.kind = correction_kind_from_string(p.at("kind").get<std::string>());
                c.position = {p.at("x").get<int>(), p.at("y").get<int>()};
                c.author = p.value("author", "");
                c.created_at = p.value("created_at", "");
                c.image_id = p.value("image_id", "");
                points.push_back(std::move(c));
            }
            const std::string reply = wf.ingest_corrections(req.matches[1], points, body.value("request_id", ""),
                                                            body.value("approve", false));
            res.set_content(reply, "application/json");
        });

        http.Post("/api/iterations", [this](const httplib::Request& req, httplib::Response& res) {
            const json body = json::parse(req.body);
            if (!body.is_object() || !body.contains("batch")) throw InvalidInput("body must carry a batch array");
            const auto batch = body.at("batch").get<std::vector<std::string>>();
            const bool auto_approve = body.value("auto_approve", false);
            std::lock_guard lock(job_mu);
            if (job_running) throw Conflict("an iteration job is already running");
            wf.check_batch(batch);
            const int index = static_cast<int>(wf.snapshot().iterations.size());
            launch(batch, auto_approve, index);
            send_json(res, {{"index", index}, {"state", "running"}, {"batch", batch}}, 202);
        });

        http.Get(R"(/api/iterations/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            const int i = parse_index(req.matches[1]);
            const auto m = wf.snapshot();
            std::lock_guard lock(job_mu);
            const bool is_job = i == job_index;
            json job = {{"running", is_job && job_running}, {"error", is_job && !job_error.empty() ? json(job_error) : json()}};
            if (i < static_cast<int>(m.iterations.size())) {
                json j = json::parse(iteration_to_json(m.iterations[static_cast<std::size_t>(i)]));
                j["job"] = job;
                return send_json(res, j);
            }
            if (!is_job) throw NotFound("unknown iteration " + std::to_string(i));
            send_json(res, {{"index", i}, {"state", job_running ? "running" : "failed"}, {"job", job}},
                      job_running ? 202 : 500);
        });

        http.Get(R"(/api/stats/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            const int i = parse_index(req.matches[1]);
            const auto m = wf.snapshot();
            if (i >= static_cast<int>(m.iterations.size())) throw NotFound("unknown iteration " + std::to_string(i));
            const auto& path = m.iterations[static_cast<std::size_t>(i)].statistics;
            if (!path.empty() && std::filesystem::exists(wf.resolve(path))) {
                const auto bytes = read_file(wf.resolve(path));
                return res.set_content(std::string(bytes.begin(), bytes.end()), "application/json");
            }
            res.set_content(wf.run_statistics(i).json, "application/json");
        });

        http.Get("/api/checkpoints", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, checkpoints_json(wf.snapshot()));
        });

        if (!opts.static_dir.empty() && !http.set_mount_point("/", opts.static_dir.string()))
            throw InvalidInput("static directory " + opts.static_dir.string() + " does not exist");
    }
};

Server::Server(Workflow& workflow, ServerOptions opts) : impl_(std::make_unique<Impl>(workflow, std::move(opts))) {}

Server::~Server() { stop(); }

int Server::bind() {
    if (impl_->bound) return impl_->opts.port;
    int port = impl_->opts.port;
    if (port == 0) {
        port = impl_->http.bind_to_any_port(impl_->opts.host);
        if (port < 0) throw IoError("cannot bind " + impl_->opts.host);
    } else if (!impl_->http.bind_to_port(impl_->opts.host, port)) {
        throw IoError("cannot bind " + impl_->opts.host + ":" + std::to_string(port));
    }
    impl_->opts.port = port;
    impl_->bound = true;
    impl_->resume_open_iteration();
    return port;
}

void Server::listen() {
    bind();
    impl_->http.listen_after_bind();
}

int Server::start() {
    const int port = bind();
    impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return port;
}

void Server::shutdown() {
    impl_->stopping = true;
    impl_->http.stop();
}

void Server::stop() {
    shutdown();
    if (impl_->listener.joinable()) impl_->listener.join();
    if (impl_->job.joinable()) impl_->job.join();
}

} // namespace meltpool
