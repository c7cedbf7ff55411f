#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vip/formats.hpp"
#include "vip/service.hpp"

// Last: <resolv.h>, pulled in by httplib, defines a `_res` macro that clashes
// with parameter names inside Eigen.
#include "httplib.h"

namespace vip::service {

void set_bind(ServerConfig& cfg, const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) fail(ErrorCode::invalid_input, "bind: expected host:port, got '" + bind + "'");
  cfg.host = bind.substr(0, colon);
  try {
    std::size_t used = 0;
    cfg.port = std::stoi(bind.substr(colon + 1), &used);
    if (used != bind.size() - colon - 1) throw std::invalid_argument(bind);
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_input, "bind: bad port in '" + bind + "'");
  }
  if (cfg.port < 0 || cfg.port > 65535) fail(ErrorCode::invalid_input, "bind: port out of range");
}

ServerConfig load_server_config(const std::string& path) {
  ServerConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const json j = parse_json(ss.str(), path);
    if (!j.is_object()) fail(ErrorCode::invalid_input, path + ": must be a JSON object");
    if (j.contains("bind")) set_bind(cfg, j.at("bind").get<std::string>());
    if (j.contains("snapshot_dir")) cfg.snapshot_dir = j.at("snapshot_dir").get<std::string>();
  }
  if (const char* bind = std::getenv("VIP_BIND"); bind && *bind) set_bind(cfg, bind);
  if (const char* dir = std::getenv("VIP_SNAPSHOT_DIR"); dir && *dir) cfg.snapshot_dir = dir;
  return cfg;
}

struct HttpServer::Impl {
  SessionManager& manager;
  httplib::Server server;

  explicit Impl(SessionManager& m) : manager(m) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      const Response r = manager.handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server.Get(".*", route);
    server.Post(".*", route);
  }
};

HttpServer::HttpServer(SessionManager& manager) : impl_(std::make_unique<Impl>(manager)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  impl_->server.wait_until_ready();
  impl_->server.stop();
}

bool serve(const ServerConfig& cfg) {
  SessionManager manager(cfg.snapshot_dir);
  HttpServer server(manager);
  if (server.bind(cfg.host, cfg.port) < 0) return false;
  return server.listen();
}

}  // namespace vip::service
