#pragma once

// HTTP interface over a running (or resumed) pipeline. All handlers share
// one mutex with the tick driver; decisions and containment requests go
// through the pipeline's command channel and apply at the next tick.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "soar/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace soar {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::optional<std::string> token;  // bearer token required on every request
    int tick_ms = 100;                 // wall-clock pause between ticks; < 0 disables the driver
    std::filesystem::path runs_root = "runs";  // where POST /api/runs creates run directories
    std::optional<RunMetrics> baseline_metrics;  // enables the comparison in /api/metrics
    std::optional<nlohmann::json> default_policy;  // used by POST /api/runs without a policy
};

// "host:port" from $SOAR_BIND, when set.
void apply_bind_override(ServiceOptions& opts);

class ApiServer {
public:
    explicit ApiServer(ServiceOptions opts);
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    void attach(std::unique_ptr<Pipeline> p);
    // Binds and serves on a background thread; returns the bound port.
    // Throws Io on bind failure.
    int start();
    void stop();
    // Blocks until stop() is called from another thread.
    void wait();

    // Runs `fn` under the pipeline lock (tests and the CLI driver).
    void with_pipeline(const std::function<void(Pipeline&)>& fn);
    // Advances up to n ticks now, independent of the driver.
    void step(int n);

    int port() const noexcept { return port_; }

private:
    void routes();
    void drive();
    bool authorized(const std::string& header) const;

    ServiceOptions opts_;
    std::unique_ptr<httplib::Server> server_;
    std::unique_ptr<Pipeline> pipeline_;
    std::mutex mu_;
    std::condition_variable appended_;
    std::thread listener_;
    std::thread driver_;
    std::atomic<bool> stopping_{false};
    int port_ = 0;
    int run_counter_ = 0;
};

}  // namespace soar
