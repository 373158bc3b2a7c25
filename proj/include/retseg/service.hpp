#pragma once

#include "retseg/session.hpp"
#include "retseg/train.hpp"

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace retseg {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path data_dir;
    std::filesystem::path model_path;
    Index max_sessions = 16;
    Index max_video_pixels = 64 * 64 * 500;  // frames * height * width

    void validate() const;
};

/// Transport-independent response.
struct Reply {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    nlohmann::json json() const { return nlohmann::json::parse(body); }
};

/// Pending push notification for one session.
struct SessionEvent {
    std::uint64_t version = 0;
    std::string kind;  // "masks" or "reset"
    std::vector<Index> changed_frames;
};

/// All session state behind the wire protocol documented in docs/protocol.md.
/// Every method is safe to call concurrently; clicks on one session are
/// serialized by the session itself.
class SessionService {
public:
    SessionService(ServiceConfig config, Model model);

    Reply list_videos() const;
    Reply create_session(const std::string& body);
    Reply delete_session(const std::string& id);
    Reply get_frame(const std::string& id, Index frame) const;
    Reply post_click(const std::string& id, const std::string& body);
    Reply get_masks(const std::string& id, std::optional<Index> frame = std::nullopt) const;
    Reply get_metrics(const std::string& id) const;
    Reply reset(const std::string& id);
    Reply stats(const std::string& id) const;

    /// Routes "METHOD /path" to the methods above. Unknown routes give 404.
    Reply dispatch(const std::string& method, const std::string& path, const std::string& body = {});

    /// Blocks until the session's version exceeds after_version or the
    /// timeout passes. nullopt on timeout; throws Error for unknown sessions.
    std::optional<SessionEvent> wait_event(const std::string& id, std::uint64_t after_version,
                                           std::chrono::milliseconds timeout) const;

    /// Wakes every waiter; subsequent waits return immediately.
    void shutdown();
    bool stopping() const;

    const ServiceConfig& config() const { return config_; }
    Index session_count() const;

private:
    struct Entry {
        std::string id;
        std::string video;
        std::unique_ptr<InteractiveSession> session;
        std::vector<LabelMask> gt;

        mutable std::mutex event_mutex;
        mutable std::condition_variable event_cv;
        SessionEvent last_event;
    };

    std::shared_ptr<Entry> find(const std::string& id) const;
    void publish(Entry& entry, SessionEvent event);

    ServiceConfig config_;
    Model model_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::uint64_t next_id_ = 1;
    bool stopping_ = false;
};

/// HTTP binding of a SessionService, including the text/event-stream push
/// channel at GET /sessions/{id}/events.
class HttpFrontend {
public:
    explicit HttpFrontend(SessionService& service);
    ~HttpFrontend();

    /// Binds host:port and returns the bound port. Throws Error when the
    /// port is unavailable.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void serve();
    void stop();

private:
    SessionService& service_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace retseg
