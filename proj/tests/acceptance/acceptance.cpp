// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// nonzero when any criterion fails. All tolerances are fixed below.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "httplib.h"

#include "../unit/naive_oracles.hpp"
#include "../unit/util.hpp"
#include "eet/io.hpp"
#include "eet/service.hpp"

using namespace eet;
using nlohmann::json;

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kEditTol = 1e-9;
constexpr std::size_t kEditCases = 100;
constexpr double kScanAlphaMax = 3.0;
constexpr double kScanStep = 0.05;
constexpr double kMetricTol = 1e-12;
constexpr std::size_t kMetricCases = 50;
constexpr double kInvarianceTol = 1e-9;
constexpr double kLossTol = 1e-12;
constexpr double kReconRatio = 0.2;
constexpr double kTrainMinutes = 10.0;
constexpr std::size_t kSteeringNeeded = 8;
constexpr double kCalibrationFactor = 2.0;
constexpr std::size_t kModeDraws = 10000;
constexpr double kModeLo = 0.487, kModeHi = 0.513;
constexpr std::size_t kShortEpochs = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared trained artifacts for the criteria that need a full run.
struct Runs {
  pipeline::PipelineConfig cfg;
  synth::Dataset ds;
  pipeline::TrainOutput full, untrained, no_emo;
  pipeline::Session full_session;
  pipeline::EvalOutput full_eval, untrained_eval, no_emo_eval;
  double train_seconds = 0.0;
};

const Runs& runs() {
  static const Runs r = [] {
    Runs x;
    x.cfg.derive_dims();
    x.cfg.validate();
    x.ds = synth::gen_dataset(x.cfg.synth, x.cfg.model);
    const auto t0 = std::chrono::steady_clock::now();
    x.full = pipeline::train(x.cfg, x.ds);
    x.train_seconds = seconds_since(t0);
    x.full_session = pipeline::make_session(x.full.checkpoint, x.full.dictionary, x.ds.model);
    x.full_eval = pipeline::evaluate(x.full_session, x.ds);

    auto untrained_cfg = x.cfg;
    untrained_cfg.epochs = 0;
    untrained_cfg.zero_output_init = false;
    x.untrained = pipeline::train(untrained_cfg, x.ds);
    x.untrained_eval =
        pipeline::evaluate(pipeline::make_session(x.untrained.checkpoint, x.untrained.dictionary, x.ds.model), x.ds);

    const auto no_emo_cfg = pipeline::ablation_config(x.cfg, pipeline::Ablation::NoEmoLoss);
    x.no_emo = pipeline::train(no_emo_cfg, x.ds);
    x.no_emo_eval =
        pipeline::evaluate(pipeline::make_session(x.no_emo.checkpoint, x.no_emo.dictionary, x.ds.model), x.ds);
    return x;
  }();
  return r;
}

Outcome gradient_certification() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = test::tiny_config();
  const auto ds = synth::gen_dataset(cfg.synth, cfg.model);
  ParamStore params;
  Rng rng(3);
  diffusion::init_denoiser(params, cfg.denoiser, rng, false);
  losses::init_mapping(params, {cfg.model.n_exp, cfg.mapping_hidden, cfg.synth.d_emo}, rng);
  const Matrix basis = ds.model.stacked_basis();
  const auto schedule = diffusion::build_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
  const auto dict =
      manifold::build_dictionary(manifold::train_classifier(ds.embeddings(ds.train_indices), {}), cfg.synth.class_names);
  std::vector<diffusion::Conditioning> conds;
  conds.reserve(2);
  std::vector<diffusion::TrainSample> batch;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& s = ds.samples[i];
    conds.push_back({s.audio, s.e_gt, ds.world.identities.row_vector(s.identity)});
    batch.push_back({&s.params_gt, &conds.back(), s.mask});
  }
  const diffusion::TrainContext ctx{&cfg.denoiser, &ds.model, &basis, &dict, &schedule};
  double worst = 0.0;
  for (auto mode : {losses::TrainMode::Original, losses::TrainMode::Edited}) {
    diffusion::TrainConfig tc;
    tc.force_mode = mode;
    tc.train_mapping = true;
    Rng draw_rng(6);
    const auto draws = diffusion::draw_batch(batch, ctx, tc, draw_rng);
    const GradObjective obj = [&](ParamStore& p) {
      return diffusion::evaluate_batch(p, batch, draws, ctx, tc, diffusion::Execution::Serial).loss;
    };
    worst = std::max(worst, grad_check(obj, params, 1e-4));
  }
  const double secs = seconds_since(t0);
  return {worst <= kGradTol && secs < kGradSeconds,
          "max relative error " + fmt(worst) + " (limit " + fmt(kGradTol) + "), " + fmt(secs) + " s (limit " +
              fmt(kGradSeconds) + " s)"};
}

Outcome edit_algebra() {
  Rng rng(41);
  std::uniform_real_distribution<double> alpha(-3.0, 3.0);
  double worst = 0.0;
  auto track = [&](const manifold::Embedding& a, const manifold::Embedding& b) {
    for (std::size_t c = 0; c < a.size(); ++c) worst = std::max(worst, std::abs(a[c] - b[c]));
  };
  for (std::size_t trial = 0; trial < kEditCases; ++trial) {
    manifold::LinearClassifier clf;
    clf.W = gaussian(3, 5, 1.0, rng);
    clf.b = gaussian(1, 3, 1.0, rng).row_vector(0);
    const auto dict = manifold::build_dictionary(clf, {"a", "b", "c"});
    const auto base = test::random_vector(5, rng);
    const std::size_t k = trial % 3;
    const double a1 = alpha(rng), a2 = alpha(rng);
    track(manifold::edit({base, {{k, 0.0}}}, dict), base);
    track(manifold::edit({base, {{k, a1}, {k, -a1}}}, dict), base);
    track(manifold::edit({manifold::edit({base, {{k, a1}}}, dict), {{k, a2}}}, dict),
          manifold::edit({base, {{k, a1 + a2}}}, dict));
    const double shift = clf.score(k, manifold::edit({base, {{k, a1}}}, dict)) - clf.score(k, base);
    worst = std::max(worst, std::abs(shift - a1 * dict.w_norms[k]));
  }
  return {worst <= kEditTol,
          std::to_string(kEditCases) + " cases, max deviation " + fmt(worst) + " (limit " + fmt(kEditTol) + ")"};
}

Outcome argmax_crossover() {
  const auto& r = runs();
  const auto& s = r.full_session;
  std::size_t ok = 0, total = 0;
  std::string path;
  for (std::size_t i = 0; i < s.dictionary.class_count(); ++i)
    for (std::size_t j = 0; j < s.dictionary.class_count(); ++j) {
      if (i == j) continue;
      ++total;
      const auto scan = manifold::scan_crossover(s.dictionary, s.checkpoint.centroids.row_span(i), i, j, kScanAlphaMax,
                                                 kScanStep);
      if (scan.crossover_alpha && !scan.returned_to_source) {
        ++ok;
        path += " " + std::to_string(i) + ">" + std::to_string(j) + "@" + fmt(*scan.crossover_alpha);
      } else {
        path += " " + std::to_string(i) + ">" + std::to_string(j) + "@none";
      }
    }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " ordered pairs cross over:" + path};
}

Outcome metric_oracles() {
  using namespace metrics;
  Rng rng(2);
  double worst = 0.0, worst_inv = 0.0;
  auto subset = [&](std::size_t v) {
    std::vector<std::uint32_t> all(v);
    std::iota(all.begin(), all.end(), 0u);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(1 + rng() % (v - 1));
    return all;
  };
  for (std::size_t trial = 0; trial < kMetricCases; ++trial) {
    const std::size_t T = 2 + rng() % 6, V = 3 + rng() % 8;
    const face::MeshSequence p{gaussian(T, 3 * V, 2.0, rng)}, g{gaussian(T, 3 * V, 2.0, rng)};
    const auto lips = subset(V), sub = subset(V);
    const auto u = static_cast<std::uint32_t>(rng() % V), l = static_cast<std::uint32_t>(rng() % V);
    worst = std::max(worst, std::abs(ve(p, g) - test::naive_ve(p, g)));
    worst = std::max(worst, std::abs(lve(p, g, lips) - test::naive_lve(p, g, lips)));
    worst = std::max(worst, std::abs(mouth_opening_deviation(p, g, u, l) - test::naive_mod(p, g, u, l)));
    worst = std::max(worst, std::abs(fdd(p, g, sub) - test::naive_fdd(p, g, sub)));

    const std::size_t K = 2 + rng() % 3, N = K + 2 + rng() % 10;
    const Matrix x = gaussian(N, 3, 1.0, rng);
    std::vector<std::size_t> labels(N);
    for (std::size_t i = 0; i < N; ++i) labels[i] = i % K;
    const double c = ch_index(x, labels), o = test::naive_ch(x, labels);
    worst = std::max(worst, std::abs(c - o) / std::max(1.0, o));

    std::vector<std::size_t> relabeled;
    for (auto lab : labels) relabeled.push_back((lab + 1) % K);
    Matrix moved = x, scaled = x;
    const auto shift = test::random_vector(3, rng, 100.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        moved(i, j) += shift[j];
        scaled(i, j) *= 3.5;
      }
    for (double v : {ch_index(x, relabeled), ch_index(moved, labels), ch_index(scaled, labels)})
      worst_inv = std::max(worst_inv, std::abs(v - c) / c);
  }
  const auto& r = runs();
  std::vector<Matrix> gt;
  std::vector<std::size_t> labels;
  for (auto i : r.ds.eval_indices) {
    gt.push_back(r.ds.samples[i].params_gt);
    labels.push_back(r.ds.samples[i].label);
  }
  const std::size_t b = r.ds.model.n_id();
  const Matrix means = sequence_expression_means(gt, b, b + r.ds.model.n_exp());
  const double self = delta_ch(means, labels, means, labels);
  return {worst <= kMetricTol && worst_inv <= kInvarianceTol && self == 0.0,
          std::to_string(kMetricCases) + " instances, max oracle deviation " + fmt(worst) + " (limit " +
              fmt(kMetricTol) + "), CH invariance " + fmt(worst_inv) + " (limit " + fmt(kInvarianceTol) +
              "), dCH(gt,gt) = " + fmt(self)};
}

Outcome loss_analytic_cases() {
  using namespace losses;
  Rng rng(1);
  double worst = 0.0;
  const Matrix gt = test::random_matrix(6, 4, rng);
  Matrix off = gt;
  for (auto& x : off.data()) x += 0.5;
  worst = std::max(worst, std::abs(recon_loss(off, gt, full_mask(6)) - 0.25));

  const face::MeshSequence a{gaussian(4, 21, 1.0, rng)};
  face::MeshSequence shifted = a;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t v = 0; v < 7; ++v) {
      shifted.frames(t, 3 * v) += 0.6;
      shifted.frames(t, 3 * v + 2) -= 0.8;
    }
  worst = std::max(worst, std::abs(mesh_loss(shifted, a) - 1.0));

  const face::MeshSequence still{Matrix(5, 9, 2.0)}, still2{Matrix(5, 9, -1.0)};
  worst = std::max(worst, velocity_loss(still, still2));

  face::MeshSequence lin_a{Matrix(6, 9)}, lin_b{Matrix(6, 9)};
  const auto v0 = test::random_vector(9, rng), v1 = test::random_vector(9, rng);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t i = 0; i < 9; ++i) {
      lin_a.frames(t, i) = v0[i] + v1[i] * static_cast<double>(t);
      lin_b.frames(t, i) = v1[i] - 0.3 * v0[i] * static_cast<double>(t);
    }
  worst = std::max(worst, accel_loss(lin_a, lin_b));

  const auto e = test::random_vector(6, rng);
  std::vector<double> scaled = e, neg = e, orth{1, 0};
  for (auto& x : scaled) x *= 3.7;
  for (auto& x : neg) x = -x;
  worst = std::max(worst, std::abs(emo_loss(scaled, e)));
  worst = std::max(worst, std::abs(emo_loss(std::vector<double>{0, 2.5}, orth) - 1.0));
  worst = std::max(worst, std::abs(emo_loss(neg, e) - 2.0));
  return {worst <= kLossTol, "max deviation " + fmt(worst) + " (limit " + fmt(kLossTol) + ")"};
}

Outcome training_signal() {
  const auto& r = runs();
  const double ratio = r.full.val_recon_final / r.full.val_recon_initial;
  const double trained = r.full_eval.report.delta_ch, untrained = r.untrained_eval.report.delta_ch;
  const bool in_time = r.train_seconds <= kTrainMinutes * 60.0;
  return {ratio <= kReconRatio && trained < untrained && in_time,
          "val recon " + fmt(r.full.val_recon_initial) + " -> " + fmt(r.full.val_recon_final) + " (ratio " +
              fmt(ratio) + ", limit " + fmt(kReconRatio) + "); dCH trained " + fmt(trained) + " vs untrained " +
              fmt(untrained) + "; training " + fmt(r.train_seconds) + " s"};
}

Outcome steering_efficacy() {
  const auto& r = runs();
  const auto& s = r.full_session;
  const std::pair<std::size_t, std::size_t> pairs[] = {{0, 1}, {1, 2}, {2, 0}};
  std::size_t ok = 0, total = 0;
  std::string detail;
  for (const auto& [i, j] : pairs) {
    const auto star = pipeline::crossover_alpha(s, i, j, kScanAlphaMax, kScanStep);
    const double alpha = kCalibrationFactor * star.value_or(kScanAlphaMax);
    for (std::uint64_t seed : {1, 2, 3}) {
      ++total;
      pipeline::GenerateRequest req;
      req.label = s.dictionary.class_names[i];
      req.edits = {{std::make_pair(i, j), alpha}};
      req.frames = s.config.synth.frames;
      req.seed = seed;
      const auto g = pipeline::generate(s, req);
      const auto sim = pipeline::steering_similarity(s, g.params, i, j);
      const bool hit = sim.to_target > sim.to_source;
      ok += hit;
      detail += " " + std::to_string(i) + ">" + std::to_string(j) + "/s" + std::to_string(seed) + ":" +
                fmt(sim.to_target - sim.to_source);
    }
  }
  return {ok >= kSteeringNeeded,
          std::to_string(ok) + "/" + std::to_string(total) + " (need " + std::to_string(kSteeringNeeded) +
              "); cos(target)-cos(source):" + detail};
}

Outcome ablation_direction() {
  const auto& r = runs();
  const double full = r.full_eval.report.extra.at("eval_l_emo");
  const double without = r.no_emo_eval.report.extra.at("eval_l_emo");
  return {full <= without, "eval L_emo full " + fmt(full) + " vs without emotion loss " + fmt(without)};
}

Outcome dual_train_statistics() {
  Rng rng(pipeline::PipelineConfig{}.seed);
  std::size_t original = 0;
  for (std::size_t i = 0; i < kModeDraws; ++i) original += losses::sample_train_mode(rng) == losses::TrainMode::Original;
  const double freq = static_cast<double>(original) / kModeDraws;
  return {freq >= kModeLo && freq <= kModeHi, "Original frequency " + fmt(freq) + " over " +
                                                  std::to_string(kModeDraws) + " draws (bounds [" + fmt(kModeLo) +
                                                  ", " + fmt(kModeHi) + "])"};
}

Outcome reproducibility() {
  std::vector<std::string> problems;
  auto cfg = pipeline::PipelineConfig{};
  cfg.epochs = kShortEpochs;
  cfg.derive_dims();
  const auto ds = synth::gen_dataset(cfg.synth, cfg.model);
  const auto a = pipeline::train(cfg, ds), b = pipeline::train(cfg, ds);
  if (ckpt::encode(a.checkpoint) != ckpt::encode(b.checkpoint)) problems.push_back("checkpoints differ");
  const auto sa = pipeline::make_session(a.checkpoint, a.dictionary, ds.model);
  const auto sb = pipeline::make_session(b.checkpoint, b.dictionary, ds.model);
  if (metrics::report_to_json(pipeline::evaluate(sa, ds).report) !=
      metrics::report_to_json(pipeline::evaluate(sb, ds).report))
    problems.push_back("metrics differ");

  auto session = std::make_shared<pipeline::Session>(sa);
  service::Server server(session);
  const int port = server.bind("127.0.0.1", 0);
  std::thread thread([&] { server.run(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  const json edit_body = {{"embedding", session->checkpoint.centroids.row_vector(0)},
                          {"edits", {{{"i", 0}, {"j", 2}, {"alpha", 1.25}}, {{"k", 1}, {"alpha", -0.5}}}}};
  const json gen_body = {{"label", session->dictionary.class_names[1]},
                         {"edits", {{{"k", 2}, {"alpha", 0.75}}}},
                         {"seed", 5}};
  auto edit_res = cli.Post("/api/edit", edit_body.dump(), "application/json");
  auto gen_res = cli.Post("/api/generate", gen_body.dump(), "application/json");
  server.stop();
  thread.join();
  if (!edit_res || edit_res->body != service::edit_payload(*session, edit_body).dump())
    problems.push_back("/api/edit differs from the library");
  if (!gen_res || gen_res->body != service::generate_payload(*session, gen_body).dump()) {
    problems.push_back("/api/generate differs from the library");
  } else {
    const auto direct = pipeline::generate(*session, service::parse_generate_request(*session, gen_body));
    if (io::base64_decode(json::parse(gen_res->body).at("vertices_b64").get<std::string>()) != direct.vertices)
      problems.push_back("/api/generate vertices differ");
  }

  const auto dir = test::scratch_dir("acceptance_roundtrip");
  ckpt::save(a.checkpoint, dir / "c.eetk");
  manifold::save_dictionary(a.dictionary, dir / "d.json");
  if (ckpt::encode(ckpt::load(dir / "c.eetk")) != ckpt::encode(a.checkpoint)) problems.push_back("checkpoint round-trip");
  if (manifold::dictionary_to_json(manifold::load_dictionary(dir / "d.json")) !=
      manifold::dictionary_to_json(a.dictionary))
    problems.push_back("dictionary round-trip");
  auto bytes = io::read_file(dir / "c.eetk");
  bytes[bytes.size() / 2] ^= 0x10;
  io::write_file(dir / "bad.eetk", bytes);
  bool rejected = false;
  try {
    ckpt::load(dir / "bad.eetk");
  } catch (const Error&) {
    rejected = true;
  }
  if (!rejected) problems.push_back("tampered checkpoint accepted");
  auto dict_json = json::parse(io::read_text(dir / "d.json"));
  dict_json["W"][0][0] = dict_json["W"][0][0].get<double>() + 1.0;
  io::write_text(dir / "bad.json", dict_json.dump());
  rejected = false;
  try {
    manifold::load_dictionary(dir / "bad.json");
  } catch (const Error&) {
    rejected = true;
  }
  if (!rejected) problems.push_back("tampered dictionary accepted");

  std::string detail = problems.empty() ? "two runs bit-identical; service byte-equal; round-trips verified" : "";
  for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient-certification", gradient_certification},
      {"edit-algebra", edit_algebra},
      {"argmax-crossover", argmax_crossover},
      {"metric-oracles", metric_oracles},
      {"loss-analytic-cases", loss_analytic_cases},
      {"training-signal", training_signal},
      {"steering-efficacy", steering_efficacy},
      {"ablation-direction", ablation_direction},
      {"dual-train-statistics", dual_train_statistics},
      {"reproducibility", reproducibility},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
