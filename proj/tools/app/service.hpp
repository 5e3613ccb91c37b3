#pragma once

#include <map>
#include <string>

#include "config.hpp"
#include "session.hpp"

namespace httplib {
class Server;
}

namespace heparin::app {

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// HTTP/JSON recommendation service. Routes (bodies and responses are JSON,
/// every response carries "schema"):
///   GET  /health
///   POST /sessions                         {id?, weight_kg?, bleed_risk?, noise_scale?}
///   GET  /sessions/{id}
///   POST /sessions/{id}/observations       {hour, aptt, supersedes?}
///   POST /sessions/{id}/doses              {hour, dose, supersedes?}
///   GET  /sessions/{id}/estimate
///   GET  /sessions/{id}/recommendation     ?horizon=n&loss=median|band|indicator
///   POST /sessions/{id}/whatif             {doses: [...], loss?}
///   GET  /sessions/{id}/trajectory         ?horizon=n&loss=...
///   GET  /sessions/{id}/audit
///   GET  /sessions/{id}/chart              text/csv
/// Errors: 400 malformed body or query, 404 unknown route or session, 409
/// out-of-order hour, 422 too few readings, 503 planning budget exceeded.
class Service {
 public:
  explicit Service(AppConfig config);

  Response handle(const Request& request);
  const AppConfig& config() const { return config_; }

 private:
  AppConfig config_;
  SessionStore store_;
};

/// Routes every request on `server` through `service`.
void mount(httplib::Server& server, Service& service);

}  // namespace heparin::app
