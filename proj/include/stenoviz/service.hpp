#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "stenoviz/infer.hpp"

namespace httplib {
class Server;
}

namespace stenoviz::service {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    /// Checkpoints are looked up as <model_dir>/<model id>.ckpt.
    std::filesystem::path model_dir = ".";
    std::size_t upload_limit_bytes = std::size_t{512} << 20;
    double snap_radius = 5.0;
    std::optional<infer::TileSize> tile;
    std::size_t memory_limit_bytes = std::size_t{4} << 30;

    /// STENOVIZ_PORT, STENOVIZ_HOST, STENOVIZ_MODEL_DIR, STENOVIZ_UPLOAD_LIMIT
    /// (bytes), STENOVIZ_SNAP_RADIUS override the defaults.
    static ServiceConfig from_env();
};

struct Session;

class Service {
public:
    explicit Service(ServiceConfig cfg);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Make a model available under `id` without a checkpoint file.
    void register_model(const std::string& id, std::shared_ptr<const infer::PatchModel> model);

    /// Install all routes on `srv`.
    void mount(httplib::Server& srv);

    const ServiceConfig& config() const { return cfg_; }

    // Used by the route handlers.
    std::shared_ptr<Session> find(const std::string& id) const;
    std::shared_ptr<Session> create(std::shared_ptr<const ImageVolume> volume);
    bool erase(const std::string& id);
    std::shared_ptr<const infer::PatchModel> model(const std::string& id);
    std::vector<std::string> model_ids() const;

private:
    ServiceConfig cfg_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<const infer::PatchModel>> models_;
    std::uint64_t counter_ = 0;
};

/// Build a server with the routes mounted and run it until stopped.
int serve(const ServiceConfig& cfg);

}  // namespace stenoviz::service
