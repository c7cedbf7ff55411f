#pragma once

// Session-scoped plan/observe protocol behind a transport-neutral request
// handler. One session is one training run: it owns a prompt set, the kernel
// built over it, the current belief and an append-only audit log.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "vip/allocator.hpp"
#include "vip/belief.hpp"
#include "vip/error.hpp"
#include "vip/prompt_space.hpp"

namespace vip::service {

using json = nlohmann::json;

inline constexpr int kSnapshotVersion = 1;
inline constexpr const char* kServiceVersion = "0.1.0";

struct SessionConfig {
  Family family = Family::rloo;
  std::int64_t budget = 0;
  std::int64_t min = 3;
  std::int64_t max = 16;
  std::size_t batch_size = 0;  // 0: not declared; budgets are checked per plan
  double clip_eps = kDefaultClipEps;
  double sigma_z2 = 1.0;
  Link link = Link::sigmoid;
  bool strict = true;          // reward counts must equal the planned n_int
  bool allow_overrides = true; // per-request budget / bounds
};

struct PendingPlan {
  std::vector<std::size_t> batch;
  std::vector<std::int64_t> n_int;
};

struct Session {
  std::string id;
  SessionConfig config;
  std::shared_ptr<const PromptSet> prompts;
  std::shared_ptr<const KernelMatrix> kernel;
  BeliefState belief;
  std::int64_t iteration = 0;
  std::optional<PendingPlan> pending;
  std::vector<json> audit;
  mutable std::mutex mu;

  Session(std::string id, SessionConfig cfg, std::shared_ptr<const PromptSet> prompts,
          std::shared_ptr<const KernelMatrix> kernel, BeliefState belief)
      : id(std::move(id)), config(cfg), prompts(std::move(prompts)), kernel(std::move(kernel)),
        belief(std::move(belief)) {}
};

struct Response {
  int status = 200;
  std::string body;
};

class SessionManager {
 public:
  /// `snapshot_dir` empty: snapshots are returned in the response only.
  explicit SessionManager(std::string snapshot_dir = {});

  // Typed operations; each throws vip::Error on failure.
  json create(const json& body);
  json plan(const std::string& id, const json& body);
  json observe(const std::string& id, const json& body);
  json beliefs(const std::string& id) const;
  json audit(const std::string& id) const;
  json snapshot(const std::string& id);
  json restore(const json& body);
  json health() const;

  /// Routes a request to the operations above and maps failures onto status
  /// codes with {"error": {"code", "message"}} bodies.
  Response handle(const std::string& method, const std::string& path, const std::string& body);

 private:
  std::shared_ptr<Session> find(const std::string& id) const;
  std::string next_id();

  std::string snapshot_dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

/// HTTP status and machine-readable code for an error.
std::pair<int, const char*> error_status(ErrorCode code) noexcept;

/// Replays the observations of an audit log (as returned by audit()) through
/// the library from a zero-mean belief.
BeliefState replay_audit(const json& audit, std::shared_ptr<const PromptSet> prompts,
                         std::shared_ptr<const KernelMatrix> kernel, Link link, double clip_eps);

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string snapshot_dir;
};

/// Parses "host:port" into cfg.
void set_bind(ServerConfig& cfg, const std::string& bind);

/// Reads a JSON config file ({"bind": "host:port", "snapshot_dir": ...}; an
/// empty path means defaults), then applies VIP_BIND and VIP_SNAPSHOT_DIR.
ServerConfig load_server_config(const std::string& path);

/// HTTP front end over a SessionManager.
class HttpServer {
 public:
  explicit HttpServer(SessionManager& manager);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Binds and serves until the process is stopped. Returns false if the socket
/// could not be bound.
bool serve(const ServerConfig& cfg);

}  // namespace vip::service
