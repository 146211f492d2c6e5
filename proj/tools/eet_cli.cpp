// eet: command-line front end (synth-data, train, generate, eval, serve).

#include <cstdlib>
#include <iostream>
#include <optional>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "eet/io.hpp"
#include "eet/pipeline.hpp"
#include "eet/service.hpp"

namespace fs = std::filesystem;
using namespace eet;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("eet");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("EET_LOG_LEVEL")) {
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::string(level) != "off") {
      throw Error(std::string("unknown EET_LOG_LEVEL '") + level + "'");
    }
    spdlog::set_level(parsed);
  }
}

pipeline::PipelineConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    pipeline::PipelineConfig cfg;
    cfg.derive_dims();
    cfg.validate();
    return cfg;
  }
  return pipeline::load_config(path);
}

struct SessionPaths {
  std::string checkpoint, dictionary, model, metrics;
};

void add_session_options(CLI::App* cmd, SessionPaths& p) {
  cmd->add_option("--checkpoint", p.checkpoint, "Checkpoint file (checkpoint.eetk)")->required();
  cmd->add_option("--dictionary", p.dictionary, "Dictionary JSON (default: next to the checkpoint)");
  cmd->add_option("--model", p.model, "Face model file (default: next to the checkpoint)");
}

pipeline::Session open(const SessionPaths& p, const std::string& config_path, std::optional<std::uint64_t> seed) {
  const fs::path ck(p.checkpoint);
  const fs::path dict = p.dictionary.empty() ? ck.parent_path() / "dictionary.json" : fs::path(p.dictionary);
  const fs::path model = p.model.empty() ? ck.parent_path() / "model.eetm" : fs::path(p.model);
  auto session = pipeline::open_session(ck, dict, model);
  if (!config_path.empty()) {
    const auto cfg = pipeline::load_config(config_path);
    if (pipeline::config_digest(cfg) != pipeline::config_digest(session.config)) {
      throw Error("--config does not match the configuration stored in the checkpoint");
    }
  }
  if (seed) session.config.seed = *seed;
  if (!p.metrics.empty()) session.metrics_json = io::read_text(p.metrics);
  return session;
}

std::vector<double> read_embedding(const std::string& path) {
  const auto j = nlohmann::json::parse(io::read_text(path));
  const auto& arr = j.is_object() ? j.at("embedding") : j;
  return arr.get<std::vector<double>>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous emotion editing for speech-driven 3D facial animation"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* cmd, bool out_required) {
    cmd->add_option("--config", config_path, "Pipeline config JSON");
    cmd->add_option("--seed", seed, "Seed override");
    auto* o = cmd->add_option("--out", out, "Output path");
    if (out_required) o->required();
  };

  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic dataset");
  common(synth_cmd, true);
  bool force = false;
  synth_cmd->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* train_cmd = app.add_subcommand("train", "Train classifier, dictionary and diffusion model");
  common(train_cmd, true);
  std::string data_dir;
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();

  auto* gen_cmd = app.add_subcommand("generate", "Generate an edited animation");
  common(gen_cmd, true);
  SessionPaths gen_paths;
  add_session_options(gen_cmd, gen_paths);
  std::string label, embedding_file;
  std::vector<std::string> edits;
  std::size_t frames = 0, identity = 0;
  bool deterministic = false;
  auto* label_opt = gen_cmd->add_option("--label", label, "Base class label");
  auto* emb_opt = gen_cmd->add_option("--embedding", embedding_file, "Base embedding JSON file");
  label_opt->excludes(emb_opt);
  gen_cmd->add_option("--edit", edits, "Edit k:alpha or i>j:alpha (repeatable)");
  gen_cmd->add_option("--frames", frames, "Frame count (default: training length)");
  gen_cmd->add_option("--identity", identity, "Identity index");
  gen_cmd->add_flag("--deterministic", deterministic, "Zero-noise sampler");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate on the held-out split");
  common(eval_cmd, true);
  SessionPaths eval_paths;
  add_session_options(eval_cmd, eval_paths);
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();

  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  common(serve_cmd, false);
  SessionPaths serve_paths;
  add_session_options(serve_cmd, serve_paths);
  serve_cmd->add_option("--metrics", serve_paths.metrics, "Metrics report to expose at /api/metrics");
  std::string bind = "127.0.0.1:8080";
  serve_cmd->add_option("--bind", bind, "host:port (port 0 picks a free port)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    setup_logging();
    if (*synth_cmd) {
      auto cfg = config_or_default(config_path);
      if (seed) cfg.synth.seed = *seed;
      pipeline::cmd_synth_data(cfg, out, force);
    } else if (*train_cmd) {
      auto cfg = config_or_default(config_path);
      if (seed) cfg.seed = *seed;
      const auto a = pipeline::cmd_train(cfg, data_dir, out);
      std::cout << pipeline::artifacts_to_json(a).dump(1) << '\n';
    } else if (*gen_cmd) {
      const auto session = open(gen_paths, config_path, std::nullopt);
      pipeline::GenerateRequest req;
      if (*label_opt) req.label = label;
      if (*emb_opt) req.embedding = read_embedding(embedding_file);
      for (const auto& e : edits) req.edits.push_back(pipeline::parse_edit(e));
      req.frames = frames ? frames : session.config.synth.frames;
      req.seed = seed.value_or(0);
      req.deterministic = deterministic;
      req.identity = identity;
      pipeline::cmd_generate(session, req, out);
    } else if (*eval_cmd) {
      const auto session = open(eval_paths, config_path, seed);
      const auto report = pipeline::cmd_eval(session, data_dir, out);
      std::cout << metrics::report_to_json(report) << '\n';
    } else if (*serve_cmd) {
      auto session = std::make_shared<const pipeline::Session>(open(serve_paths, config_path, seed));
      const auto colon = bind.rfind(':');
      if (colon == std::string::npos) throw Error("--bind must be host:port");
      const std::string host = bind.substr(0, colon);
      const int port = std::stoi(bind.substr(colon + 1));
      service::Server server(session);
      const int bound = server.bind(host, port);
      if (!out.empty()) io::write_text(out, nlohmann::json{{"host", host}, {"port", bound}}.dump());
      spdlog::info("serving on {}:{}", host, bound);
      server.run();
    }
  } catch (const pipeline::RequestError& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
