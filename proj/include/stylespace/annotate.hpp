#pragma once

// Annotation service: hands out unlabeled triplets under a lease and appends
// the annotator's choices to a label file. AnnotationService is the state
// machine; AnnotationServer puts it behind HTTP.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylespace/data.hpp"
#include "stylespace/errors.hpp"

#include <httplib.h>
// <resolv.h>, pulled in by httplib, defines _res as a macro, which clashes
// with Eigen parameter names in anything included later.
#ifdef _res
#undef _res
#endif

namespace stylespace {

inline constexpr int kDefaultAnnotatePort = 8377;
inline constexpr std::int64_t kLeaseSeconds = 600;

// Carries the HTTP status the server should answer with.
class ServiceError : public std::runtime_error {
   public:
    ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const { return status_; }

   private:
    int status_;
};

struct AnnotationTask {
    std::string task_id;
    std::string anchor;
    std::string left;
    std::string right;
    std::int64_t issued_at = 0;
};

struct Progress {
    std::size_t labeled = 0;
    std::size_t total = 0;
};

using Clock = std::function<std::int64_t()>;

inline std::int64_t unix_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

class AnnotationService {
   public:
    // Without a queue every task request fails with 409.
    AnnotationService() = default;

    AnnotationService(Manifest manifest, std::vector<Triplet> queue, fs::path label_file, std::uint64_t seed,
                      Clock clock = unix_now)
        : manifest_(std::move(manifest)),
          queue_(std::move(queue)),
          label_file_(std::move(label_file)),
          rng_(seed),
          clock_(std::move(clock)),
          loaded_(true) {
        auto ids = index_by_id(manifest_);
        std::set<std::string> anchors;
        for (std::size_t i = 0; i < queue_.size(); ++i) {
            const auto& t = queue_[i];
            validate_label({t.anchor, t.first, t.second, "", 0}, &ids);
            if (!anchors.insert(t.anchor).second) throw DataError("anchor '" + t.anchor + "' appears twice in the queue");
            by_anchor_[t.anchor] = i;
        }
        labeled_.assign(queue_.size(), false);
        // recover progress from an existing label file
        if (fs::exists(label_file_)) {
            for (const auto& l : load_labels(label_file_, &manifest_)) {
                auto it = by_anchor_.find(l.anchor);
                if (it != by_anchor_.end() && !labeled_[it->second]) {
                    labeled_[it->second] = true;
                    ++n_labeled_;
                }
            }
        }
    }

    // The first unlabeled triplet not leased to another session; a session
    // asking again gets its own open task back.
    std::optional<AnnotationTask> next_task(const std::string& session) {
        std::lock_guard lock(mutex_);
        if (!loaded_) throw ServiceError(409, "no triplet queue loaded");
        const auto now = clock_();
        for (std::size_t i = 0; i < queue_.size(); ++i) {
            if (labeled_[i]) continue;
            auto lease = lease_by_index_.find(i);
            if (lease != lease_by_index_.end()) {
                auto& open = open_.at(lease->second);
                bool live = now - open.task.issued_at < kLeaseSeconds;
                if (live && open.session != session) continue;
                if (live) return open.task;
                open_.erase(lease->second);
                lease_by_index_.erase(lease);
            }
            const auto& t = queue_[i];
            bool swap = std::uniform_int_distribution<int>(0, 1)(rng_) == 1;
            AnnotationTask task{make_task_id(), t.anchor, swap ? t.second : t.first, swap ? t.first : t.second, now};
            open_[task.task_id] = {task, session, i};
            lease_by_index_[i] = task.task_id;
            return task;
        }
        return std::nullopt;
    }

    // Records the choice and appends it to the label file.
    TripletLabel submit_label(const std::string& task_id, const std::string& choice, const std::string& annotator) {
        if (choice != "left" && choice != "right") throw ServiceError(400, "choice must be \"left\" or \"right\"");
        if (annotator.empty()) throw ServiceError(400, "annotator is required");
        std::lock_guard lock(mutex_);
        if (!loaded_) throw ServiceError(409, "no triplet queue loaded");
        auto done = completed_.find(task_id);
        if (done != completed_.end()) {
            if (done->second.choice == choice && done->second.label.annotator == annotator) return done->second.label;
            throw ServiceError(410, "task " + task_id + " was already labeled");
        }
        auto it = open_.find(task_id);
        if (it == open_.end()) throw ServiceError(410, "unknown or expired task " + task_id);
        const auto now = clock_();
        if (now - it->second.task.issued_at >= kLeaseSeconds) {
            lease_by_index_.erase(it->second.index);
            open_.erase(it);
            throw ServiceError(410, "task " + task_id + " lease expired");
        }
        const auto& task = it->second.task;
        TripletLabel label{task.anchor, choice == "left" ? task.left : task.right,
                           choice == "left" ? task.right : task.left, annotator, now};
        append(label);
        labeled_[it->second.index] = true;
        ++n_labeled_;
        lease_by_index_.erase(it->second.index);
        completed_[task_id] = {choice, label};
        open_.erase(it);
        return label;
    }

    Progress progress() const {
        std::lock_guard lock(mutex_);
        return {n_labeled_, queue_.size()};
    }

    // Path of the image for `id`, if it is in the manifest.
    std::optional<std::string> image_path(const std::string& id) const {
        for (const auto& r : manifest_)
            if (r.id == id) return r.path;
        return std::nullopt;
    }

   private:
    struct Open {
        AnnotationTask task;
        std::string session;
        std::size_t index = 0;
    };
    struct Done {
        std::string choice;
        TripletLabel label;
    };

    std::string make_task_id() {
        char buf[40];
        std::snprintf(buf, sizeof buf, "t%06llu-%08llx", static_cast<unsigned long long>(++issued_),
                      static_cast<unsigned long long>(rng_() & 0xffffffffULL));
        return buf;
    }

    // Whole record in one write, flushed before the lock is released.
    void append(const TripletLabel& label) {
        std::ofstream out(label_file_, std::ios::app | std::ios::binary);
        if (!out) throw ServiceError(500, "cannot open label file " + label_file_.string());
        std::string line = label_json(label).dump() + "\n";
        out.write(line.data(), static_cast<std::streamsize>(line.size()));
        out.flush();
        if (!out) throw ServiceError(500, "failed writing label file " + label_file_.string());
    }

    Manifest manifest_;
    std::vector<Triplet> queue_;
    fs::path label_file_;
    std::mt19937_64 rng_;
    Clock clock_ = unix_now;
    bool loaded_ = false;

    mutable std::mutex mutex_;
    std::map<std::string, std::size_t> by_anchor_;
    std::vector<bool> labeled_;
    std::size_t n_labeled_ = 0;
    std::map<std::string, Open> open_;
    std::map<std::size_t, std::string> lease_by_index_;
    std::map<std::string, Done> completed_;
    std::uint64_t issued_ = 0;
};

namespace detail {

inline const char* kFallbackPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>stylespace annotation</title></head>
<body>
<p>The annotation UI assets are not installed. Start the server with a static
directory to serve them. The JSON API is available:</p>
<ul>
<li>GET /api/task?session=NAME</li>
<li>POST /api/label {"task_id", "choice": "left"|"right", "annotator"}</li>
<li>GET /api/progress</li>
<li>GET /images/ID</li>
</ul>
</body></html>
)";

inline void json_reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

}  // namespace detail

class AnnotationServer {
   public:
    AnnotationServer(AnnotationService& service, std::string static_dir = {}) : service_(service) {
        using nlohmann::json;
        server_.Get("/api/task", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                std::string session = req.has_param("session") ? req.get_param_value("session") : "default";
                auto task = service_.next_task(session);
                if (!task) {
                    res.status = 204;
                    return;
                }
                detail::json_reply(res, 200,
                                   {{"task_id", task->task_id},
                                    {"anchor", task->anchor},
                                    {"left", task->left},
                                    {"right", task->right}});
            });
        });
        server_.Post("/api/label", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                json body = json::parse(req.body, nullptr, false);
                if (body.is_discarded() || !body.is_object()) throw ServiceError(400, "body is not a JSON object");
                auto field = [&](const char* name) {
                    if (!body.contains(name) || !body[name].is_string()) {
                        throw ServiceError(400, std::string("missing string field '") + name + "'");
                    }
                    return body[name].get<std::string>();
                };
                auto label = service_.submit_label(field("task_id"), field("choice"), field("annotator"));
                detail::json_reply(res, 201, label_json(label));
            });
        });
        server_.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                auto p = service_.progress();
                detail::json_reply(res, 200, {{"labeled", p.labeled}, {"total", p.total}});
            });
        });
        server_.Get(R"(/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto path = service_.image_path(req.matches[1]);
                std::ifstream in(path.value_or(""), std::ios::binary);
                if (!path || !in) throw ServiceError(404, "no image '" + std::string(req.matches[1]) + "'");
                std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
                res.set_content(std::move(bytes), "image/png");
            });
        });
        if (!static_dir.empty() && server_.set_mount_point("/", static_dir)) {
            has_static_ = true;
        } else {
            server_.Get("/", [](const httplib::Request&, httplib::Response& res) {
                res.set_content(detail::kFallbackPage, "text/html; charset=utf-8");
            });
        }
    }

    // Binds to `port` (0 picks a free one) and returns the bound port.
    int bind(const std::string& host, int port) {
        int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw DataError("cannot bind " + host + ":" + std::to_string(port));
        return bound;
    }

    // Blocks until stop().
    void serve() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }
    bool serving_static() const { return has_static_; }

   private:
    template <typename F>
    static void guarded(httplib::Response& res, F&& f) {
        try {
            f();
        } catch (const ServiceError& e) {
            detail::json_reply(res, e.status(), {{"error", e.what()}});
        } catch (const std::exception& e) {
            detail::json_reply(res, 500, {{"error", e.what()}});
        }
    }

    AnnotationService& service_;
    httplib::Server server_;
    bool has_static_ = false;
};

}  // namespace stylespace
