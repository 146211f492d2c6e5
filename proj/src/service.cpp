#include "eet/service.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "httplib.h"

#include "eet/io.hpp"

namespace eet::service {

using nlohmann::json;
using pipeline::RequestError;

namespace {

std::vector<manifold::Edit> parse_edits(const json& body) {
  std::vector<manifold::Edit> edits;
  if (!body.contains("edits")) return edits;
  const auto& arr = body.at("edits");
  if (!arr.is_array()) throw RequestError("invalid_request", "edits must be an array");
  for (const auto& e : arr) {
    if (!e.is_object() || !e.contains("alpha") || !e.at("alpha").is_number()) {
      throw RequestError("invalid_request", "each edit needs a numeric alpha");
    }
    manifold::Edit edit;
    edit.alpha = e.at("alpha").get<double>();
    auto index = [&](const char* key) {
      const auto& v = e.at(key);
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw RequestError("bad_edit_index", std::string("edit field ") + key + " must be a nonnegative integer");
      }
      return v.get<std::size_t>();
    };
    if (e.contains("k")) {
      edit.direction = index("k");
    } else if (e.contains("i") && e.contains("j")) {
      edit.direction = std::make_pair(index("i"), index("j"));
    } else {
      throw RequestError("invalid_request", "each edit needs k, or i and j");
    }
    edits.push_back(edit);
  }
  return edits;
}

std::vector<double> parse_embedding(const json& v) {
  if (!v.is_array()) throw RequestError("invalid_request", "embedding must be an array of numbers");
  std::vector<double> e;
  for (const auto& x : v) {
    if (!x.is_number()) throw RequestError("invalid_request", "embedding must be an array of numbers");
    e.push_back(x.get<double>());
  }
  return e;
}

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    reply(res, 200, f());
  } catch (const RequestError& e) {
    reply(res, 400, error_body(e.code(), e.what()));
  } catch (const json::exception& e) {
    reply(res, 400, error_body("invalid_request", e.what()));
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    reply(res, 500, error_body("internal", e.what()));
  }
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw RequestError("invalid_request", "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw RequestError("invalid_json", e.what());
  }
}

}  // namespace

json dictionary_payload(const pipeline::Session& s) {
  json j = json::parse(manifold::dictionary_to_json(s.dictionary));
  j["centroids"] = json::array();
  for (std::size_t k = 0; k < s.checkpoint.centroids.rows(); ++k) j["centroids"].push_back(s.checkpoint.centroids.row_vector(k));
  return j;
}

json model_info_payload(const pipeline::Session& s) {
  return {{"vertices", s.model.vertex_count()},
          {"faces", s.model.faces.size()},
          {"n_id", s.model.n_id()},
          {"n_exp", s.model.n_exp()},
          {"n_pose", s.model.n_pose()},
          {"param_dim", s.model.param_dim()},
          {"d_emo", s.dictionary.dim()},
          {"K", s.dictionary.class_count()},
          {"class_names", s.dictionary.class_names},
          {"identities", s.checkpoint.identities.rows()},
          {"frames_default", s.config.synth.frames},
          {"fps", s.config.fps},
          {"diffusion_steps", s.schedule.steps()},
          {"checkpoint_sha256", s.checkpoint_sha256},
          {"classifier_digest", s.dictionary.classifier_digest}};
}

json edit_payload(const pipeline::Session& s, const json& body) {
  if (!body.contains("embedding")) throw RequestError("invalid_request", "embedding is required");
  pipeline::GenerateRequest req;
  req.embedding = parse_embedding(body.at("embedding"));
  req.edits = parse_edits(body);
  return {{"embedding", pipeline::resolve_embedding(s, req)}};
}

pipeline::GenerateRequest parse_generate_request(const pipeline::Session& s, const json& body) {
  pipeline::GenerateRequest req;
  req.frames = s.config.synth.frames;
  if (body.contains("label")) {
    if (!body.at("label").is_string()) throw RequestError("invalid_request", "label must be a string");
    req.label = body.at("label").get<std::string>();
  }
  if (body.contains("embedding")) req.embedding = parse_embedding(body.at("embedding"));
  req.edits = parse_edits(body);
  if (body.contains("frames")) {
    const auto& f = body.at("frames");
    if (!f.is_number_integer() || f.get<long long>() < 1) throw RequestError("invalid_frames", "frames must be a positive integer");
    req.frames = f.get<std::size_t>();
  }
  if (body.contains("seed")) {
    const auto& v = body.at("seed");
    if (!v.is_number_integer() || v.get<long long>() < 0) throw RequestError("invalid_request", "seed must be a nonnegative integer");
    req.seed = v.get<std::uint64_t>();
  }
  if (body.contains("deterministic")) {
    if (!body.at("deterministic").is_boolean()) throw RequestError("invalid_request", "deterministic must be a boolean");
    req.deterministic = body.at("deterministic").get<bool>();
  }
  if (body.contains("identity")) {
    const auto& v = body.at("identity");
    if (!v.is_number_integer() || v.get<long long>() < 0) throw RequestError("bad_identity", "identity must be a nonnegative integer");
    req.identity = v.get<std::size_t>();
  }
  return req;
}

json generate_payload(const pipeline::Session& s, const json& body) {
  const auto r = pipeline::generate(s, parse_generate_request(s, body));
  json faces = json::array();
  for (const auto& f : s.model.faces) faces.push_back({f[0], f[1], f[2]});
  return {{"manifest", json::parse(r.manifest_json)},
          {"vertices_b64", io::base64_encode(r.vertices)},
          {"faces", std::move(faces)},
          {"embedding", r.embedding}};
}

struct Server::Impl {
  std::shared_ptr<const pipeline::Session> session;
  httplib::Server http;
};

Server::Server(std::shared_ptr<const pipeline::Session> session) : impl_(std::make_unique<Impl>()) {
  if (!session) throw Error("service needs a session");
  impl_->session = std::move(session);
  auto& http = impl_->http;
  const pipeline::Session* s = impl_->session.get();

  http.Get("/api/dictionary", [s](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { return dictionary_payload(*s); });
  });
  http.Get("/api/model/info", [s](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { return model_info_payload(*s); });
  });
  http.Get("/api/metrics", [s](const httplib::Request&, httplib::Response& res) {
    if (!s->metrics_json) {
      reply(res, 404, error_body("no_metrics", "no metrics report was loaded"));
      return;
    }
    guarded(res, [&] { return json::parse(*s->metrics_json); });
  });
  http.Post("/api/edit", [s](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return edit_payload(*s, parse_body(req)); });
  });
  http.Post("/api/generate", [s](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return generate_payload(*s, parse_body(req)); });
  });
  http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) {
      res.set_content(error_body("not_found", "no resource at " + req.path).dump(), "application/json");
    } else if (res.body.empty()) {
      res.set_content(error_body("http_" + std::to_string(res.status), "request failed").dump(), "application/json");
    }
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind to " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) throw Error("cannot bind to " + host + ":" + std::to_string(port));
  return port;
}

void Server::run() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void Server::wait_until_ready() const { impl_->http.wait_until_ready(); }

}  // namespace eet::service
