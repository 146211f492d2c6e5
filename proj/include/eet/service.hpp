#pragma once

// HTTP JSON API over an immutable session:
//   GET  /api/dictionary   POST /api/edit   POST /api/generate
//   GET  /api/model/info   GET  /api/metrics
// Malformed requests answer 400 with {"error": {"code", "message"}};
// unknown resources answer 404.

#include <memory>
#include <string>

#include "json.hpp"

#include "eet/pipeline.hpp"

namespace eet::service {

// Payload builders shared by the HTTP handlers. Request parsing failures
// throw pipeline::RequestError.
nlohmann::json dictionary_payload(const pipeline::Session& s);
nlohmann::json model_info_payload(const pipeline::Session& s);
nlohmann::json edit_payload(const pipeline::Session& s, const nlohmann::json& body);
nlohmann::json generate_payload(const pipeline::Session& s, const nlohmann::json& body);
pipeline::GenerateRequest parse_generate_request(const pipeline::Session& s, const nlohmann::json& body);

class Server {
 public:
  explicit Server(std::shared_ptr<const pipeline::Session> session);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds to host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace eet::service
