#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "meltpool/workflow.hpp"

namespace meltpool {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080; // 0 picks a free port
    std::filesystem::path static_dir; // served at / when set
    /// Poll period of a background iteration while it waits for reviews.
    std::chrono::milliseconds review_poll{200};
};

/// HTTP front of a Workflow. Iterations requested over the API run on one
/// background job thread; corrections and reads are served concurrently.
class Server {
public:
    Server(Workflow& workflow, ServerOptions opts = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds the socket and returns the port in use.
    int bind();
    /// Serves until stop(); binds first if needed.
    void listen();
    /// bind() plus listen() on an internal thread.
    int start();
    /// Stops serving and joins the listener and any job thread.
    void stop();
    /// Asks the listener and job to wind down without joining; usable from
    /// a signal handler on the listening thread.
    void shutdown();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace meltpool
