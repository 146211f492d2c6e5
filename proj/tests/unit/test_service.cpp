#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "util.hpp"

#include "eet/io.hpp"
#include "eet/service.hpp"

using namespace eet;
using nlohmann::json;

namespace {

std::shared_ptr<const pipeline::Session> tiny_session(bool with_metrics) {
  static const pipeline::Session base = [] {
    auto cfg = test::tiny_config();
    const auto ds = synth::gen_dataset(cfg.synth, cfg.model);
    auto out = pipeline::train(cfg, ds);
    return pipeline::make_session(out.checkpoint, out.dictionary, ds.model);
  }();
  auto s = std::make_shared<pipeline::Session>(base);
  if (with_metrics) s->metrics_json = R"({"ve_mm": 1.0})";
  return s;
}

// Runs a server on a free local port for the lifetime of the object.
struct Running {
  service::Server server;
  int port;
  std::thread thread;

  explicit Running(std::shared_ptr<const pipeline::Session> s)
      : server(std::move(s)), port(server.bind("127.0.0.1", 0)), thread([this] { server.run(); }) {
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

std::string error_code(const httplib::Result& r) { return json::parse(r->body).at("error").at("code"); }

}  // namespace

TEST_CASE("service: read-only endpoints") {
  const auto session = tiny_session(false);
  Running srv(session);
  auto cli = srv.client();

  auto dict = cli.Get("/api/dictionary");
  REQUIRE(dict);
  CHECK(dict->status == 200);
  const auto dj = json::parse(dict->body);
  CHECK(dj == service::dictionary_payload(*session));
  auto expected = json::parse(manifold::dictionary_to_json(session->dictionary));
  for (auto it = expected.begin(); it != expected.end(); ++it) CHECK(dj.at(it.key()) == it.value());
  CHECK(dj.at("centroids").size() == session->dictionary.class_count());

  auto info = cli.Get("/api/model/info");
  REQUIRE(info);
  const auto ij = json::parse(info->body);
  CHECK(ij.at("vertices") == session->model.vertex_count());
  CHECK(ij.at("checkpoint_sha256") == session->checkpoint_sha256);

  auto metrics = cli.Get("/api/metrics");
  REQUIRE(metrics);
  CHECK(metrics->status == 404);
  CHECK(error_code(metrics) == "no_metrics");

  auto missing = cli.Get("/api/nothing");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(error_code(missing) == "not_found");
}

TEST_CASE("service: metrics endpoint serves the stored report") {
  Running srv(tiny_session(true));
  auto r = srv.client().Get("/api/metrics");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(json::parse(r->body).at("ve_mm") == 1.0);
}

TEST_CASE("service: edit endpoint") {
  const auto session = tiny_session(false);
  Running srv(session);
  auto cli = srv.client();
  const auto base = session->checkpoint.centroids.row_vector(0);

  json body = {{"embedding", base}, {"edits", {{{"k", 1}, {"alpha", 0.0}}, {{"i", 0}, {"j", 2}, {"alpha", 0.0}}}}};
  auto r = cli.Post("/api/edit", body.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(json::parse(r->body).at("embedding").get<std::vector<double>>() == base);

  body["edits"] = {{{"k", 1}, {"alpha", 0.5}}};
  r = cli.Post("/api/edit", body.dump(), "application/json");
  REQUIRE(r);
  auto expected = base;
  const auto v = manifold::direction_vector(session->dictionary, std::size_t{1});
  for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += 0.5 * v[i];
  const auto got = json::parse(r->body).at("embedding").get<std::vector<double>>();
  REQUIRE(got.size() == expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("service: generate matches the library and repeats exactly") {
  const auto session = tiny_session(false);
  Running srv(session);
  auto cli = srv.client();
  const json body = {{"label", "sad"}, {"frames", 5}, {"seed", 4}, {"edits", {{{"k", 0}, {"alpha", 1.0}}}}};
  auto a = cli.Post("/api/generate", body.dump(), "application/json");
  auto b = cli.Post("/api/generate", body.dump(), "application/json");
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->status == 200);
  CHECK(a->body == b->body);

  const auto j = json::parse(a->body);
  const auto lib = pipeline::generate(*session, service::parse_generate_request(*session, body));
  CHECK(io::base64_decode(j.at("vertices_b64").get<std::string>()) == lib.vertices);
  CHECK(j.at("manifest") == json::parse(lib.manifest_json));
  CHECK(j.at("faces").size() == session->model.faces.size());
  CHECK(lib.vertices.size() == 5 * session->model.vertex_count() * 3 * 4);

  const auto defaults = service::parse_generate_request(*session, json::object());
  CHECK(defaults.frames == session->config.synth.frames);
  CHECK(defaults.seed == 0);
}

TEST_CASE("service: malformed requests answer 400 with an error code") {
  Running srv(tiny_session(false));
  auto cli = srv.client();
  auto post = [&](const char* path, const std::string& body) {
    auto r = cli.Post(path, body, "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    return error_code(r);
  };
  CHECK(post("/api/generate", "{not json") == "invalid_json");
  CHECK(post("/api/generate", "[1, 2]") == "invalid_request");
  CHECK(post("/api/generate", "{}") == "missing_base");
  CHECK(post("/api/generate", R"({"label": "nobody"})") == "unknown_label");
  CHECK(post("/api/generate", R"({"label": "sad", "embedding": [0, 0, 0, 0]})") == "ambiguous_base");
  CHECK(post("/api/generate", R"({"embedding": [0, 0]})") == "dimension_mismatch");
  CHECK(post("/api/generate", R"({"label": "sad", "frames": 0})") == "invalid_frames");
  CHECK(post("/api/generate", R"({"label": "sad", "frames": 100000})") == "invalid_frames");
  CHECK(post("/api/generate", R"({"label": "sad", "identity": 50})") == "bad_identity");
  CHECK(post("/api/generate", R"({"label": "sad", "edits": [{"k": 9, "alpha": 1}]})") == "bad_edit_index");
  CHECK(post("/api/generate", R"({"label": "sad", "edits": [{"k": -1, "alpha": 1}]})") == "bad_edit_index");
  CHECK(post("/api/generate", R"({"label": "sad", "edits": [{"k": 1}]})") == "invalid_request");
  CHECK(post("/api/generate", R"({"label": 3})") == "invalid_request");
  CHECK(post("/api/edit", R"({"edits": []})") == "invalid_request");
  CHECK(post("/api/edit", R"({"embedding": [0, "x", 0, 0]})") == "invalid_request");
  CHECK(post("/api/edit", R"({"embedding": [0, 0, 0, 0], "edits": [{"i": 0, "j": 0, "alpha": 1}]})") ==
        "bad_edit_index");
}
