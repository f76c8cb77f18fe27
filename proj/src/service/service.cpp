#include "stenoviz/service.hpp"

#include <atomic>
#include <cstdlib>
#include <random>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stenoviz/geodesic.hpp"
#include "stenoviz/render.hpp"
#include "stenoviz/segment.hpp"
#include "stenoviz/volume_io.hpp"
#include "stenoviz/volume_ops.hpp"

namespace stenoviz::service {

using nlohmann::json;

struct Segment {
    int id = 0;
    segment::SegmentMask mask;
    geodesic::EndpointPair ends;
    Volume<float> coloring;
};

// Immutable once published; readers keep whichever one they grabbed.
struct Snapshot {
    std::shared_ptr<const ImageVolume> volume;
    render::Window window;
    std::shared_ptr<const ImageVolume> prob;
    std::shared_ptr<const segment::ComponentLabeling> labeling;
    std::vector<std::shared_ptr<const Segment>> segments;
    json infer_params;
};

struct Session {
    std::string id;
    mutable std::mutex mu;
    std::shared_ptr<const Snapshot> snap;
    std::string status = "created";  // created, queued, running, done, failed
    std::string error;
    int done = 0, total = 0;
    bool busy = false;
    int next_segment = 1;
    std::thread worker;

    ~Session() {
        if (worker.joinable())
            worker.join();
    }
    std::shared_ptr<const Snapshot> snapshot() const {
        std::lock_guard lk(mu);
        return snap;
    }
};

namespace {

struct HttpError {
    int status;
    std::string code;
    std::string message;
};

void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, {{"code", code}, {"message", message}}, status);
}

// Runs a handler and turns library exceptions into error bodies.
template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const HttpError& e) {
            send_error(res, e.status, e.code, e.message);
        } catch (const SelectionMiss& e) {
            send_error(res, 404, "selection_miss", e.what());
        } catch (const ParseError& e) {
            send_error(res, 400, "malformed_volume", e.what());
        } catch (const IntegrityError& e) {
            send_error(res, 400, "malformed_volume", e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, "bad_request", e.what());
        } catch (const ParameterError& e) {
            send_error(res, 400, "bad_request", e.what());
        } catch (const ShapeError& e) {
            send_error(res, 400, "bad_request", e.what());
        } catch (const StateError& e) {
            send_error(res, 409, "conflict", e.what());
        } catch (const ResourceError& e) {
            send_error(res, 413, "too_large", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

json vox(VoxelIndex v) { return json::array({v.x, v.y, v.z}); }

json vec(Vec3 v) { return json::array({v.x, v.y, v.z}); }

std::string segment_url(const std::string& sid, int id) {
    return "/sessions/" + sid + "/segments/" + std::to_string(id);
}

json segment_json(const std::string& sid, const Segment& s) {
    return {{"segment_id", s.id},
            {"component_id", s.mask.component_id},
            {"click", vox(s.mask.click)},
            {"snapped", vox(s.mask.snapped)},
            {"endpoint_a", vox(s.ends.endpoint_a)},
            {"endpoint_b", vox(s.ends.endpoint_b)},
            {"span_mm", s.ends.span_mm},
            {"is_cyclic_suspect", s.ends.is_cyclic_suspect},
            {"coloring", segment_url(sid, s.id) + "/coloring"},
            {"mesh", segment_url(sid, s.id) + "/mesh"}};
}

json session_json(const Session& s) {
    std::shared_ptr<const Snapshot> snap;
    json j;
    {
        std::lock_guard lk(s.mu);
        snap = s.snap;
        j = {{"id", s.id}, {"status", s.status}, {"progress", {{"done", s.done}, {"total", s.total}}}};
        if (!s.error.empty())
            j["error"] = s.error;
    }
    const auto& v = *snap->volume;
    j["dims"] = json::array({v.dims().x, v.dims().y, v.dims().z});
    j["spacing"] = vec(v.spacing());
    j["origin"] = vec(v.origin());
    if (snap->labeling)
        j["components"] = segment::component_table(*snap->labeling);
    if (!snap->infer_params.is_null())
        j["infer"] = snap->infer_params;
    j["segments"] = json::array();
    for (const auto& seg : snap->segments)
        j["segments"].push_back(segment_json(s.id, *seg));
    return j;
}

std::shared_ptr<Session> need_session(const Service& svc, const std::string& id) {
    auto s = svc.find(id);
    if (!s)
        throw HttpError{404, "not_found", "no session " + id};
    return s;
}

std::shared_ptr<const Segment> need_segment(const Snapshot& snap, const std::string& sid, int id) {
    for (const auto& s : snap.segments)
        if (s->id == id)
            return s;
    throw HttpError{404, "not_found", "no segment " + std::to_string(id) + " in session " + sid};
}

json body_json(const httplib::Request& req) {
    if (req.body.empty())
        return json::object();
    auto j = json::parse(req.body);
    if (!j.is_object())
        throw HttpError{400, "bad_request", "request body must be a JSON object"};
    return j;
}

int to_int(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size())
            return v;
    } catch (const std::exception&) {
    }
    throw HttpError{400, "bad_request", std::string("bad ") + what + ": " + s};
}

bool valid_model_id(const std::string& id) {
    static const std::regex ok("[A-Za-z0-9_.-]+");
    return std::regex_match(id, ok) && id.find("..") == std::string::npos;
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? v : fallback;
}

// Upload body -> isotropic intensity volume.
std::shared_ptr<const ImageVolume> load_upload(const httplib::Request& req) {
    AnyVolume any;
    const auto ctype = req.get_header_value("Content-Type");
    if (ctype.rfind("application/json", 0) == 0) {
        const auto j = body_json(req);
        if (!j.contains("path"))
            throw HttpError{400, "bad_request", "JSON body needs a \"path\" to a volume"};
        const std::filesystem::path p = j.at("path").get<std::string>();
        if (!std::filesystem::exists(p))
            throw HttpError{400, "bad_request", "no volume at " + p.string()};
        any = read_any_volume(p);
    } else {
        if (req.body.empty())
            throw HttpError{400, "malformed_volume", "empty upload"};
        std::string fmt = req.has_param("format") ? req.get_param_value("format") : "";
        if (fmt.empty())
            fmt = req.body.rfind("NRRD", 0) == 0 ? "nrrd" : "mha";
        any = parse_volume_bytes(req.body, format_from_string(fmt));
    }
    auto v = convert_volume<float>(any);
    v.set_kind(ElementKind::Intensity);
    const auto& s = v.spacing();
    if (!(s.x == s.y && s.y == s.z))
        v = resample_isotropic(v, default_isotropic_spacing(v));
    return std::make_shared<const ImageVolume>(std::move(v));
}

void run_infer(Session* s, std::shared_ptr<const infer::PatchModel> model, double threshold, int open_radius,
               infer::InferOptions opt, json params) {
    std::shared_ptr<const Snapshot> base;
    {
        std::lock_guard lk(s->mu);
        s->status = "running";
        base = s->snap;
    }
    try {
        opt.progress = [s](int done, int total) {
            std::lock_guard lk(s->mu);
            s->done = done;
            s->total = total;
        };
        auto prob = std::make_shared<const ImageVolume>(infer::infer_volume(*model, *base->volume, opt));
        auto lab = std::make_shared<const segment::ComponentLabeling>(segment::postprocess(*prob, threshold, open_radius));
        auto next = std::make_shared<Snapshot>(*base);
        next->prob = std::move(prob);
        next->labeling = std::move(lab);
        next->segments.clear();  // old selections referred to the old labeling
        next->infer_params = std::move(params);
        std::lock_guard lk(s->mu);
        s->snap = std::move(next);
        s->status = "done";
        s->busy = false;
    } catch (const std::exception& e) {
        std::lock_guard lk(s->mu);
        s->status = "failed";
        s->error = e.what();
        s->busy = false;
    }
}

}  // namespace

ServiceConfig ServiceConfig::from_env() {
    ServiceConfig c;
    c.host = env_or("STENOVIZ_HOST", c.host);
    c.port = std::stoi(env_or("STENOVIZ_PORT", std::to_string(c.port)));
    c.model_dir = env_or("STENOVIZ_MODEL_DIR", c.model_dir.string());
    c.upload_limit_bytes = std::stoull(env_or("STENOVIZ_UPLOAD_LIMIT", std::to_string(c.upload_limit_bytes)));
    c.snap_radius = std::stod(env_or("STENOVIZ_SNAP_RADIUS", std::to_string(c.snap_radius)));
    return c;
}

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

Service::~Service() {
    std::map<std::string, std::shared_ptr<Session>> doomed;
    {
        std::lock_guard lk(mu_);
        doomed.swap(sessions_);
    }
    // Session destructors join any running inference.
}

void Service::register_model(const std::string& id, std::shared_ptr<const infer::PatchModel> model) {
    if (!valid_model_id(id))
        throw ParameterError("bad model id " + id);
    std::lock_guard lk(mu_);
    models_[id] = std::move(model);
}

std::shared_ptr<Session> Service::find(const std::string& id) const {
    std::lock_guard lk(mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::shared_ptr<Session> Service::create(std::shared_ptr<const ImageVolume> volume) {
    auto s = std::make_shared<Session>();
    auto snap = std::make_shared<Snapshot>();
    snap->window = render::full_range(*volume);
    snap->volume = std::move(volume);
    s->snap = std::move(snap);
    static thread_local std::mt19937_64 rng(std::random_device{}());
    std::lock_guard lk(mu_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04llx%012llx", static_cast<unsigned long long>(++counter_ & 0xffff),
                  static_cast<unsigned long long>(rng() & 0xffffffffffffULL));
    s->id = buf;
    sessions_[s->id] = s;
    return s;
}

bool Service::erase(const std::string& id) {
    std::shared_ptr<Session> s;
    {
        std::lock_guard lk(mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end())
            return false;
        s = it->second;
        std::lock_guard slk(s->mu);
        if (s->busy)
            throw StateError("session " + id + " is busy");
        sessions_.erase(it);
    }
    return true;
}

std::shared_ptr<const infer::PatchModel> Service::model(const std::string& id) {
    if (!valid_model_id(id))
        return nullptr;
    {
        std::lock_guard lk(mu_);
        if (auto it = models_.find(id); it != models_.end())
            return it->second;
    }
    const auto path = cfg_.model_dir / (id + ".ckpt");
    if (!std::filesystem::is_regular_file(path))
        return nullptr;
    auto m = std::make_shared<const infer::UNetModel>(unet::model_from_checkpoint(unet::load_checkpoint(path)));
    std::lock_guard lk(mu_);
    return models_.emplace(id, std::move(m)).first->second;
}

std::vector<std::string> Service::model_ids() const {
    std::vector<std::string> ids;
    {
        std::lock_guard lk(mu_);
        for (const auto& [id, m] : models_)
            ids.push_back(id);
    }
    std::error_code ec;
    for (const auto& e : std::filesystem::directory_iterator(cfg_.model_dir, ec))
        if (e.path().extension() == ".ckpt" && valid_model_id(e.path().stem().string()))
            ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

void Service::mount(httplib::Server& srv) {
    srv.set_payload_max_length(cfg_.upload_limit_bytes);
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty())
            return httplib::Server::HandlerResponse::Unhandled;
        const std::string code = res.status == 413 ? "too_large" : res.status == 404 ? "not_found" : "http_error";
        send_error(res, res.status, code, httplib::status_message(res.status));
        return httplib::Server::HandlerResponse::Handled;
    });

    srv.Get("/health", guarded([](const auto&, auto& res) { send_json(res, {{"ok", true}}); }));

    srv.Get("/models", guarded([this](const auto&, auto& res) { send_json(res, {{"models", model_ids()}}); }));

    srv.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        if (req.body.size() > cfg_.upload_limit_bytes)
            throw HttpError{413, "too_large", "upload exceeds " + std::to_string(cfg_.upload_limit_bytes) + " bytes"};
        auto s = create(load_upload(req));
        res.set_header("Location", "/sessions/" + s->id);
        send_json(res, session_json(*s), 201);
    }));

    srv.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, session_json(*need_session(*this, req.matches[1])));
    }));

    srv.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        if (!erase(req.matches[1]))
            throw HttpError{404, "not_found", "no session " + std::string(req.matches[1])};
        res.status = 204;
    }));

    srv.Post(R"(/sessions/([^/]+)/infer)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto s = need_session(*this, req.matches[1]);
        const auto j = body_json(req);
        if (!j.contains("model"))
            throw HttpError{400, "bad_request", "missing \"model\""};
        const auto model_id = j.at("model").get<std::string>();
        const double t = j.value("threshold", 0.5);
        const int open_radius = j.value("open_radius", 1);
        if (!(t > 0.0 && t < 1.0))
            throw HttpError{400, "bad_request", "threshold must lie strictly between 0 and 1"};
        if (open_radius < 0)
            throw HttpError{400, "bad_request", "open_radius must be >= 0"};
        infer::InferOptions opt;
        opt.tile = cfg_.tile;
        opt.memory_limit_bytes = cfg_.memory_limit_bytes;
        if (j.contains("tile")) {
            const auto tile = j.at("tile").get<std::vector<int>>();
            if (tile.size() != 2)
                throw HttpError{400, "bad_request", "tile must be [x, y]"};
            opt.tile = infer::TileSize{tile[0], tile[1]};
            if (tile[0] < 32 || tile[1] < 32 || tile[0] % 32 || tile[1] % 32)
                throw HttpError{400, "bad_request", "tile sizes must be positive multiples of 32"};
        }
        auto model = this->model(model_id);
        if (!model)
            throw HttpError{404, "unknown_model", "no model " + model_id};
        json params = {{"model", model_id}, {"threshold", t}, {"open_radius", open_radius}};
        {
            std::lock_guard lk(s->mu);
            if (s->busy)
                throw HttpError{409, "conflict", "session " + s->id + " is already processing"};
            s->busy = true;
            s->status = "queued";
            s->error.clear();
            s->done = 0;
            s->total = 0;
        }
        if (s->worker.joinable())
            s->worker.join();  // the previous job has finished; busy was clear
        s->worker = std::thread(run_infer, s.get(), std::move(model), t, open_radius, std::move(opt), params);
        send_json(res, {{"id", s->id}, {"status", "queued"}}, 202);
    }));

    srv.Post(R"(/sessions/([^/]+)/select)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto s = need_session(*this, req.matches[1]);
        const auto j = body_json(req);
        for (const char* k : {"x", "y", "z"})
            if (!j.contains(k) || !j.at(k).is_number_integer())
                throw HttpError{400, "bad_request", std::string("missing integer \"") + k + "\""};
        const VoxelIndex click{j.at("x").get<int>(), j.at("y").get<int>(), j.at("z").get<int>()};
        const double snap_radius = j.value("snap_radius", cfg_.snap_radius);

        std::shared_ptr<const Snapshot> snap;
        {
            std::lock_guard lk(s->mu);
            if (s->busy)
                throw HttpError{409, "conflict", "session " + s->id + " is busy"};
            if (!s->snap->labeling)
                throw HttpError{409, "not_ready", "run inference before selecting"};
            s->busy = true;
            snap = s->snap;
        }
        struct Release {
            Session& s;
            ~Release() {
                std::lock_guard lk(s.mu);
                s.busy = false;
            }
        } release{*s};

        auto mask = segment::select_segment(*snap->labeling, click, snap_radius);
        for (const auto& seg : snap->segments)
            if (seg->mask.component_id == mask.component_id) {
                send_json(res, segment_json(s->id, *seg));
                return;
            }
        auto seg = std::make_shared<Segment>();
        seg->ends = geodesic::find_endpoints(mask.mask, mask.snapped);
        seg->coloring = geodesic::color_segment(mask.mask, seg->ends);
        seg->mask = std::move(mask);
        auto next = std::make_shared<Snapshot>(*snap);
        {
            std::lock_guard lk(s->mu);
            seg->id = s->next_segment++;
            next->segments.push_back(seg);
            s->snap = std::move(next);
        }
        send_json(res, segment_json(s->id, *seg), 201);
    }));

    srv.Get(R"(/sessions/([^/]+)/segments)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto s = need_session(*this, req.matches[1]);
        json out = json::array();
        for (const auto& seg : s->snapshot()->segments)
            out.push_back(segment_json(s->id, *seg));
        send_json(res, {{"segments", out}});
    }));

    srv.Get(R"(/sessions/([^/]+)/segments/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto s = need_session(*this, req.matches[1]);
        send_json(res, segment_json(s->id, *need_segment(*s->snapshot(), s->id, to_int(req.matches[2], "segment"))));
    }));

    srv.Get(R"(/sessions/([^/]+)/segments/(\d+)/coloring)",
            guarded([this](const httplib::Request& req, httplib::Response& res) {
                auto s = need_session(*this, req.matches[1]);
                const auto seg = need_segment(*s->snapshot(), s->id, to_int(req.matches[2], "segment"));
                res.set_content(serialize_volume(seg->coloring, VolumeFormat::Nrrd), "application/octet-stream");
            }));

    srv.Get(R"(/sessions/([^/]+)/segments/(\d+)/mesh)",
            guarded([this](const httplib::Request& req, httplib::Response& res) {
                auto s = need_session(*this, req.matches[1]);
                const auto seg = need_segment(*s->snapshot(), s->id, to_int(req.matches[2], "segment"));
                auto j = render::to_json(render::surface_nets(seg->mask.mask, &seg->coloring));
                j["endpoint_a"] = vox(seg->ends.endpoint_a);
                j["endpoint_b"] = vox(seg->ends.endpoint_b);
                send_json(res, j);
            }));

    srv.Get(R"(/sessions/([^/]+)/slices/(-?\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto s = need_session(*this, req.matches[1]);
        const auto snap = s->snapshot();
        const int z = to_int(req.matches[2], "slice");
        const auto layer = req.has_param("layer") ? req.get_param_value("layer") : "intensity";
        render::RgbImage img;
        if (layer == "intensity") {
            img = render::gray_slice(*snap->volume, z, snap->window);
        } else if (layer == "prob") {
            if (!snap->prob)
                throw HttpError{409, "not_ready", "no probabilities yet"};
            img = render::gray_slice(*snap->prob, z, {0.0f, 1.0f});
        } else if (layer == "labels") {
            if (!snap->labeling)
                throw HttpError{409, "not_ready", "no labeling yet"};
            img = render::label_slice(snap->labeling->labels, z);
        } else if (layer == "coloring") {
            img = render::gray_slice(*snap->volume, z, snap->window);
            for (const auto& seg : snap->segments)
                render::blend_coloring(img, seg->coloring, z, 0.7);
        } else {
            throw HttpError{400, "bad_request", "unknown layer " + layer};
        }
        res.set_content(render::encode_png(img), "image/png");
    }));
}

int serve(const ServiceConfig& cfg) {
    Service svc(cfg);
    httplib::Server srv;
    svc.mount(srv);
    if (!srv.listen(cfg.host, cfg.port))
        return 1;
    return 0;
}

}  // namespace stenoviz::service
