#include "retseg/service.hpp"

#include "retseg/image_io.hpp"
#include "retseg/metrics.hpp"
#include "retseg/protocol.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>

namespace retseg {

using nlohmann::json;

namespace {

Reply json_reply(int status, const json& body)
{
    return {status, "application/json", body.dump()};
}

Reply error_reply(int status, const std::string& code, const std::string& message)
{
    return json_reply(status, error_json(code, message));
}

Reply unknown_session(const std::string& id)
{
    return error_reply(404, "not_found", "unknown session '" + id + "'");
}

bool valid_video_id(const std::string& id)
{
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

std::optional<Index> parse_index(const std::string& s)
{
    Index v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) return std::nullopt;
    return v;
}

std::vector<std::string> split_path(const std::string& path)
{
    std::vector<std::string> parts;
    std::size_t at = 0;
    while (at <= path.size()) {
        const std::size_t next = std::min(path.find('/', at), path.size());
        if (next > at) parts.push_back(path.substr(at, next - at));
        at = next + 1;
    }
    return parts;
}

json video_json(const std::string& id, const KeyValues& meta, bool has_gt)
{
    auto num = [&](const char* key) { return std::stoll(meta.at(key)); };
    return {{"id", id},
            {"frame_count", num("frame_count")},
            {"height", num("height")},
            {"width", num("width")},
            {"object_count", num("K")},
            {"has_ground_truth", has_gt}};
}

json event_json(const std::string& id, const SessionEvent& e)
{
    json j{{"session_id", id}, {"version", e.version}};
    if (e.kind == "masks") j["changed_frames"] = e.changed_frames;
    return j;
}

}  // namespace

void ServiceConfig::validate() const
{
    if (port < 0 || port > 65535) throw Error("port out of range");
    if (max_sessions <= 0) throw Error("max_sessions must be positive");
    if (max_video_pixels <= 0) throw Error("max_video_pixels must be positive");
}

SessionService::SessionService(ServiceConfig config, Model model) : config_(std::move(config)), model_(std::move(model))
{
    config_.validate();
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) const
{
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

Index SessionService::session_count() const
{
    std::lock_guard lock(mutex_);
    return static_cast<Index>(sessions_.size());
}

void SessionService::publish(Entry& entry, SessionEvent event)
{
    {
        std::lock_guard lock(entry.event_mutex);
        if (event.version <= entry.last_event.version) return;
        entry.last_event = std::move(event);
    }
    entry.event_cv.notify_all();
}

Reply SessionService::list_videos() const
{
    json videos = json::array();
    std::error_code ec;
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(config_.data_dir, ec))
        if (e.is_directory() && std::filesystem::exists(e.path() / "meta.txt")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        const std::string id = dir.filename().string();
        if (!valid_video_id(id)) continue;
        try {
            videos.push_back(video_json(id, read_key_values(dir / "meta.txt"), std::filesystem::exists(dir / mask_file_name(0))));
        } catch (const std::exception&) {
            // unreadable metadata: not offered
        }
    }
    return json_reply(200, {{"videos", videos}});
}

Reply SessionService::create_session(const std::string& body)
{
    json req;
    try {
        req = json::parse(body);
    } catch (const json::exception&) {
        return error_reply(400, "bad_request", "request body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("video") || !req["video"].is_string())
        return error_reply(400, "bad_request", "field 'video' (string) is required");
    const std::string video = req["video"].get<std::string>();
    SessionConfig cfg;
    cfg.embed = model_.embed;
    if (req.contains("k")) {
        if (!req["k"].is_number_integer() || req["k"].get<Index>() < 1)
            return error_reply(400, "bad_request", "field 'k' must be a positive integer");
        cfg.k = req["k"].get<Index>();
    }
    if (!valid_video_id(video)) return error_reply(400, "bad_request", "invalid video id '" + video + "'");
    const auto dir = config_.data_dir / video;
    if (!std::filesystem::exists(dir / "meta.txt")) return error_reply(404, "not_found", "unknown video '" + video + "'");

    Sequence seq;
    try {
        const KeyValues meta = read_key_values(dir / "meta.txt");
        const Index pixels = std::stoll(meta.at("frame_count")) * std::stoll(meta.at("height")) * std::stoll(meta.at("width"));
        if (pixels > config_.max_video_pixels)
            return error_reply(413, "video_too_large",
                               "video has " + std::to_string(pixels) + " pixels, limit is " +
                                   std::to_string(config_.max_video_pixels));
        seq = load_sequence(dir);
    } catch (const std::exception& e) {
        return error_reply(422, "bad_video", e.what());
    }
    cfg.object_count = std::max<std::int32_t>(1, seq.object_count);

    {
        std::lock_guard lock(mutex_);
        if (static_cast<Index>(sessions_.size()) >= config_.max_sessions)
            return error_reply(429, "session_limit", "at most " + std::to_string(config_.max_sessions) + " sessions");
    }
    auto entry = std::make_shared<Entry>();
    entry->video = video;
    entry->gt = std::move(seq.masks);
    try {
        entry->session = std::make_unique<InteractiveSession>(std::move(seq.video), model_.head, cfg);
    } catch (const std::exception& e) {
        return error_reply(422, "bad_video", e.what());
    }
    const auto& s = *entry->session;
    {
        std::lock_guard lock(mutex_);
        if (static_cast<Index>(sessions_.size()) >= config_.max_sessions)
            return error_reply(429, "session_limit", "at most " + std::to_string(config_.max_sessions) + " sessions");
        entry->id = "s" + std::to_string(next_id_++);
        sessions_[entry->id] = entry;
    }
    return json_reply(201, {{"session_id", entry->id},
                            {"video", video},
                            {"frame_count", s.frame_count()},
                            {"height", s.height()},
                            {"width", s.width()},
                            {"object_count", s.config().object_count},
                            {"k", s.config().k},
                            {"stride", s.config().embed.stride},
                            {"has_ground_truth", !entry->gt.empty()}});
}

Reply SessionService::delete_session(const std::string& id)
{
    std::shared_ptr<Entry> entry;
    {
        std::lock_guard lock(mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) return unknown_session(id);
        entry = it->second;
        sessions_.erase(it);
    }
    entry->event_cv.notify_all();
    return json_reply(200, {{"session_id", id}, {"deleted", true}});
}

Reply SessionService::get_frame(const std::string& id, Index frame) const
{
    const auto entry = find(id);
    if (!entry) return unknown_session(id);
    const auto& video = entry->session->video();
    if (frame >= video.frame_count())
        return error_reply(404, "not_found", "frame " + std::to_string(frame) + " out of range");
    const auto png = encode_png(video.frames[frame]);
    return {200, "image/png", std::string(png.begin(), png.end())};
}

Reply SessionService::post_click(const std::string& id, const std::string& body)
{
    const auto entry = find(id);
    if (!entry) return unknown_session(id);
    Annotation a;
    try {
        const json req = json::parse(body);
        a.frame = req.at("frame").get<Index>();
        a.row = req.at("row").get<Index>();
        a.col = req.at("col").get<Index>();
        a.label = req.at("label").get<std::int32_t>();
        a.kind = annotation_kind_from_string(req.value("kind", std::string("click")));
    } catch (const json::exception&) {
        return error_reply(400, "bad_request", "click needs integer fields frame, row, col, label");
    } catch (const Error& e) {
        return error_reply(400, "bad_request", e.what());
    }
    ClickResult result;
    try {
        result = entry->session->add_click(a);
    } catch (const Error& e) {
        return error_reply(400, "invalid_click", e.what());
    }
    publish(*entry, {result.version, "masks", result.changed_frames});
    return json_reply(200, {{"session_id", id},
                            {"version", result.version},
                            {"changed_cells", result.changed_cells},
                            {"changed_frames", result.changed_frames},
                            {"distance_evaluations", result.distance_evaluations},
                            {"ready", entry->session->ready()}});
}

Reply SessionService::get_masks(const std::string& id, std::optional<Index> frame) const
{
    const auto entry = find(id);
    if (!entry) return unknown_session(id);
    const auto& s = *entry->session;
    if (frame && *frame >= s.frame_count())
        return error_reply(404, "not_found", "frame " + std::to_string(*frame) + " out of range");
    const MaskSnapshot snap = s.snapshot();
    json masks = json::array();
    for (Index j = 0; j < static_cast<Index>(snap.masks.size()); ++j)
        if (!frame || *frame == j) masks.push_back({{"frame", j}, {"rle", rle_to_json(rle_encode(snap.masks[j]))}});
    return json_reply(200, {{"session_id", id}, {"version", snap.version}, {"ready", snap.ready}, {"masks", masks}});
}

Reply SessionService::get_metrics(const std::string& id) const
{
    const auto entry = find(id);
    if (!entry) return unknown_session(id);
    if (entry->gt.empty()) return error_reply(404, "no_ground_truth", "video '" + entry->video + "' has no ground truth");
    const MaskSnapshot snap = entry->session->snapshot();
    if (!snap.ready) return error_reply(409, "insufficient_references", "insufficient references");
    const Index tol = default_boundary_tolerance(entry->session->height(), entry->session->width());
    const SequenceScore score = evaluate_sequence(snap.masks, entry->gt, entry->session->config().object_count, {false, tol});
    json frames = json::array();
    for (std::size_t i = 0; i < score.frames.size(); ++i)
        frames.push_back({{"frame", score.frames[i]}, {"J", score.per_frame_j[i]}, {"F", score.per_frame_f[i]}});
    return json_reply(200, {{"session_id", id},
                            {"version", snap.version},
                            {"tolerance_px", tol},
                            {"mean_J", score.mean_j},
                            {"mean_F", score.mean_f},
                            {"frames", frames}});
}

Reply SessionService::reset(const std::string& id)
{
    const auto entry = find(id);
    if (!entry) return unknown_session(id);
    entry->session->reset();
    const std::uint64_t version = entry->session->version();
    publish(*entry, {version, "reset", {}});
    return json_reply(200, {{"session_id", id}, {"version", version}});
}

Reply SessionService::stats(const std::string& id) const
{
    const auto entry = find(id);
    if (!entry) return unknown_session(id);
    const auto& s = *entry->session;
    return json_reply(200, {{"session_id", id},
                            {"video", entry->video},
                            {"forward_passes", s.forward_passes()},
                            {"clicks", s.click_log().size()},
                            {"pool_size", s.pool_size()},
                            {"version", s.version()},
                            {"total_cells", s.total_cells()},
                            {"frame_count", s.frame_count()}});
}

Reply SessionService::dispatch(const std::string& method, const std::string& path, const std::string& body)
{
    const std::string route = path.substr(0, path.find('?'));
    const auto parts = split_path(route);
    const auto n = parts.size();
    auto bad_index = [](const std::string& s) {
        return error_reply(400, "bad_request", "'" + s + "' is not a non-negative integer");
    };
    if (n == 1 && parts[0] == "videos" && method == "GET") return list_videos();
    if (n >= 1 && parts[0] == "sessions") {
        if (n == 1 && method == "POST") return create_session(body);
        if (n == 2 && method == "DELETE") return delete_session(parts[1]);
        if (n == 3) {
            const std::string& id = parts[1];
            const std::string& what = parts[2];
            if (what == "clicks" && method == "POST") return post_click(id, body);
            if (what == "masks" && method == "GET") return get_masks(id);
            if (what == "metrics" && method == "GET") return get_metrics(id);
            if (what == "reset" && method == "POST") return reset(id);
            if (what == "stats" && method == "GET") return stats(id);
        }
        if (n == 4 && method == "GET" && (parts[2] == "frames" || parts[2] == "masks")) {
            const auto frame = parse_index(parts[3]);
            if (!frame) return bad_index(parts[3]);
            return parts[2] == "frames" ? get_frame(parts[1], *frame) : get_masks(parts[1], *frame);
        }
    }
    return error_reply(404, "not_found", "no route for " + method + " " + route);
}

std::optional<SessionEvent> SessionService::wait_event(const std::string& id, std::uint64_t after_version,
                                                       std::chrono::milliseconds timeout) const
{
    const auto entry = find(id);
    if (!entry) throw Error("unknown session '" + id + "'");
    std::unique_lock lock(entry->event_mutex);
    const bool got = entry->event_cv.wait_for(lock, timeout, [&] {
        std::lock_guard service_lock(mutex_);
        return stopping_ || entry->last_event.version > after_version || !sessions_.count(id);
    });
    if (!got || entry->last_event.version <= after_version) return std::nullopt;
    return entry->last_event;
}

void SessionService::shutdown()
{
    std::vector<std::shared_ptr<Entry>> entries;
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
        for (const auto& [id, e] : sessions_) entries.push_back(e);
    }
    for (const auto& e : entries) {
        std::lock_guard lock(e->event_mutex);
        e->event_cv.notify_all();
    }
}

bool SessionService::stopping() const
{
    std::lock_guard lock(mutex_);
    return stopping_;
}

HttpFrontend::HttpFrontend(SessionService& service) : service_(service), server_(std::make_unique<httplib::Server>())
{
    auto& srv = *server_;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    // SO_REUSEADDR only: a second server on a busy port must fail to bind
    srv.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });

    srv.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        std::uint64_t after = 0;
        if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
        try {
            (void)service_.wait_event(id, std::numeric_limits<std::uint64_t>::max(), std::chrono::milliseconds(0));
        } catch (const Error& e) {
            res.status = 404;
            res.set_content(error_json("not_found", e.what()).dump(), "application/json");
            return;
        }
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, id, after](std::size_t, httplib::DataSink& sink) mutable {
            if (service_.stopping()) {
                sink.done();
                return true;
            }
            std::optional<SessionEvent> event;
            try {
                event = service_.wait_event(id, after, std::chrono::milliseconds(1000));
            } catch (const Error&) {
                sink.done();
                return true;
            }
            std::string chunk;
            if (event) {
                after = event->version;
                chunk = "event: " + event->kind + "\ndata: " + event_json(id, *event).dump() + "\n\n";
            } else {
                chunk = ": keepalive\n\n";
            }
            if (!sink.write(chunk.data(), chunk.size())) return false;
            if (!sink.is_writable()) return false;
            return true;
        });
    });

    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        const Reply reply = service_.dispatch(req.method, req.path, req.body);
        res.status = reply.status;
        res.set_content(reply.body, reply.content_type);
    };
    srv.Get(".*", forward);
    srv.Post(".*", forward);
    srv.Delete(".*", forward);
    srv.Options(".*", [](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
}

HttpFrontend::~HttpFrontend()
{
    stop();
}

int HttpFrontend::bind(const std::string& host, int port)
{
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound <= 0) throw Error("cannot listen on " + host + ":" + std::to_string(port) + " (port in use?)");
    return bound;
}

void HttpFrontend::serve()
{
    server_->listen_after_bind();
}

void HttpFrontend::stop()
{
    service_.shutdown();
    if (server_) server_->stop();
}

}  // namespace retseg
