#include "eet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>

#include <spdlog/spdlog.h>

#include "eet/io.hpp"
#include "eet/json_fields.hpp"

namespace eet::pipeline {

using nlohmann::json;

namespace {

enum Stream : std::uint64_t {
  kInit = 101,
  kValidation = 102,
  kTrainDraws = 103,
  kGenAudio = 201,
  kGenNoise = 202,
  kEvalNoise = 301,
};

diffusion::Conditioning conditioning_for(const synth::Dataset& ds, std::size_t idx) {
  const auto& s = ds.samples.at(idx);
  return {s.audio, s.e_gt, ds.world.identities.row_vector(s.identity)};
}

Matrix mapping_input(const Matrix& params, const face::BlendshapeModel& model, bool full) {
  if (full) return params;
  Matrix psi(params.rows(), model.n_exp());
  for (std::size_t t = 0; t < params.rows(); ++t)
    for (std::size_t c = 0; c < model.n_exp(); ++c) psi(t, c) = params(t, model.n_id() + c);
  return psi;
}

double cosine(std::span<const double> a, std::span<const double> b) { return 1.0 - losses::emo_loss(a, b); }

void read_weights(const json& j, losses::LossWeights& w) {
  FieldReader r(j, "weights");
  r.get("recon", w.recon);
  r.get("mesh", w.mesh);
  r.get("normal", w.normal);
  r.get("vel", w.vel);
  r.get("acc", w.acc);
  r.get("emo", w.emo);
  r.finish();
}

}  // namespace

void PipelineConfig::derive_dims() {
  denoiser.param_dim = model.n_id + model.n_exp + model.n_pose;
  denoiser.id_dim = model.n_id;
  denoiser.audio_dim = synth.d_audio;
  denoiser.emo_dim = synth.d_emo;
}

void PipelineConfig::validate() const {
  synth.validate();
  denoiser.validate();
  weights.validate();
  if (model.grid < 4) throw Error("model grid must be at least 4");
  if (model.n_id == 0 || model.n_exp == 0 || model.n_pose == 0) throw Error("model dimensions must be positive");
  if (denoiser.param_dim != model.n_id + model.n_exp + model.n_pose || denoiser.id_dim != model.n_id ||
      denoiser.audio_dim != synth.d_audio || denoiser.emo_dim != synth.d_emo) {
    throw Error("denoiser dimensions are inconsistent with the model and synth blocks");
  }
  diffusion::build_schedule(schedule.steps, schedule.beta_min, schedule.beta_max);
  if (!(optimizer.lr > 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.eps > 0.0) ||
      !(optimizer.weight_decay >= 0.0)) {
    throw Error("invalid optimizer settings");
  }
  if (!(classifier.lr > 0.0) || !(classifier.l2 >= 0.0)) throw Error("invalid classifier settings");
  if (mapping_hidden == 0) throw Error("mapping_hidden must be at least 1");
  if (batch_size == 0) throw Error("batch_size must be at least 1");
  if (!(edit_alpha_max >= 0.0) || !std::isfinite(edit_alpha_max)) throw Error("edit_alpha_max must be finite and >= 0");
  if (!(fps > 0.0)) throw Error("fps must be positive");
  if (!(warm_start_lr > 0.0)) throw Error("warm_start_lr must be positive");
}

json config_to_json(const PipelineConfig& c) {
  const auto& d = c.denoiser;
  const auto& w = c.weights;
  const auto& o = c.optimizer;
  return {{"synth", synth::config_to_json(c.synth)},
          {"model", synth::model_config_to_json(c.model)},
          {"mapping_hidden", c.mapping_hidden},
          {"denoiser",
           {{"time_dim", d.time_dim},
            {"time_hidden", d.time_hidden},
            {"d_model", d.d_model},
            {"heads", d.heads},
            {"ff_hidden", d.ff_hidden}}},
          {"zero_output_init", c.zero_output_init},
          {"weights",
           {{"recon", w.recon}, {"mesh", w.mesh}, {"normal", w.normal}, {"vel", w.vel}, {"acc", w.acc}, {"emo", w.emo}}},
          {"schedule", {{"steps", c.schedule.steps}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}}},
          {"optimizer",
           {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}, {"weight_decay", o.weight_decay}}},
          {"classifier",
           {{"l2", c.classifier.l2},
            {"lr", c.classifier.lr},
            {"max_iters", c.classifier.max_iters},
            {"tol", c.classifier.tol}}},
          {"dual_train", c.dual_train},
          {"emo_loss_enabled", c.emo_loss_enabled},
          {"train_mapping", c.train_mapping},
          {"map_full_params", c.map_full_params},
          {"edit_alpha_max", c.edit_alpha_max},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"warm_start_iters", c.warm_start_iters},
          {"warm_start_lr", c.warm_start_lr},
          {"save_optimizer", c.save_optimizer},
          {"fps", c.fps},
          {"seed", c.seed}};
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  FieldReader r(j, "config");
  if (const auto* s = r.sub("synth")) c.synth = synth::config_from_json(*s);
  if (const auto* m = r.sub("model")) c.model = synth::model_config_from_json(*m);
  r.get("mapping_hidden", c.mapping_hidden);
  if (const auto* d = r.sub("denoiser")) {
    FieldReader dr(*d, "denoiser");
    dr.get("time_dim", c.denoiser.time_dim);
    dr.get("time_hidden", c.denoiser.time_hidden);
    dr.get("d_model", c.denoiser.d_model);
    dr.get("heads", c.denoiser.heads);
    dr.get("ff_hidden", c.denoiser.ff_hidden);
    dr.finish();
  }
  r.get("zero_output_init", c.zero_output_init);
  if (const auto* w = r.sub("weights")) read_weights(*w, c.weights);
  if (const auto* s = r.sub("schedule")) {
    FieldReader sr(*s, "schedule");
    sr.get("steps", c.schedule.steps);
    sr.get("beta_min", c.schedule.beta_min);
    sr.get("beta_max", c.schedule.beta_max);
    sr.finish();
  }
  if (const auto* o = r.sub("optimizer")) {
    FieldReader orr(*o, "optimizer");
    orr.get("lr", c.optimizer.lr);
    orr.get("beta1", c.optimizer.beta1);
    orr.get("beta2", c.optimizer.beta2);
    orr.get("eps", c.optimizer.eps);
    orr.get("weight_decay", c.optimizer.weight_decay);
    orr.finish();
  }
  if (const auto* k = r.sub("classifier")) {
    FieldReader kr(*k, "classifier");
    kr.get("l2", c.classifier.l2);
    kr.get("lr", c.classifier.lr);
    kr.get("max_iters", c.classifier.max_iters);
    kr.get("tol", c.classifier.tol);
    kr.finish();
  }
  r.get("dual_train", c.dual_train);
  r.get("emo_loss_enabled", c.emo_loss_enabled);
  r.get("train_mapping", c.train_mapping);
  r.get("map_full_params", c.map_full_params);
  r.get("edit_alpha_max", c.edit_alpha_max);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("warm_start_iters", c.warm_start_iters);
  r.get("warm_start_lr", c.warm_start_lr);
  r.get("save_optimizer", c.save_optimizer);
  r.get("fps", c.fps);
  r.get("seed", c.seed);
  r.finish();
  c.derive_dims();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("config file not found: " + path.string());
  try {
    return config_from_json(json::parse(io::read_text(path)));
  } catch (const json::exception& e) {
    throw Error("malformed config " + path.string() + ": " + e.what());
  }
}

std::string config_digest(const PipelineConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  return io::sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

PipelineConfig ablation_config(PipelineConfig base, Ablation a) {
  switch (a) {
    case Ablation::Full:
      break;
    case Ablation::NoDualTrain:
      base.dual_train = false;
      break;
    case Ablation::NoEmoLoss:
      base.emo_loss_enabled = false;
      base.dual_train = false;
      break;
  }
  return base;
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full:
      return "full";
    case Ablation::NoDualTrain:
      return "no_dual_train";
    case Ablation::NoEmoLoss:
      return "no_emo_loss";
  }
  return "unknown";
}

void check_dataset(const PipelineConfig& cfg, const synth::Dataset& ds) {
  const auto& d = cfg.denoiser;
  if (ds.model.param_dim() != d.param_dim || ds.model.n_id() != d.id_dim) {
    throw Error("dataset face model does not match the configured parameter dimensions");
  }
  if (ds.config.d_audio != d.audio_dim || ds.config.d_emo != d.emo_dim) {
    throw Error("dataset feature dimensions do not match the configured denoiser");
  }
  if (ds.config.classes != cfg.synth.classes) throw Error("dataset class count does not match the config");
  if (ds.train_indices.empty() || ds.eval_indices.empty()) throw Error("dataset needs non-empty train and eval splits");
  for (const auto& s : ds.samples) {
    if (s.params_gt.rows() < 3) throw Error("training sequences need at least 3 frames");
  }
}

std::string epoch_log_json(const EpochLog& e) {
  const auto& c = e.components;
  return json{{"epoch", e.epoch},
              {"loss", e.loss},
              {"recon", c.recon},
              {"mesh", c.mesh},
              {"normal", c.normal},
              {"vel", c.vel},
              {"acc", c.acc},
              {"emo", c.emo},
              {"n_original", e.n_original},
              {"n_edited", e.n_edited},
              {"lr", e.lr}}
      .dump();
}

double validation_recon(const ParamStore& params, const diffusion::DenoiserConfig& dcfg,
                        const diffusion::NoiseSchedule& schedule, const synth::Dataset& ds,
                        std::span<const std::size_t> indices, std::uint64_t seed) {
  if (indices.empty()) throw Error("empty validation split");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> step_dist(0, schedule.steps() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  for (auto idx : indices) {
    const auto& s = ds.samples.at(idx);
    const std::size_t t = step_dist(rng);
    Matrix eps(s.params_gt.rows(), s.params_gt.cols());
    for (auto& x : eps.data()) x = normal(rng);
    const Matrix x_t = diffusion::q_sample(s.params_gt, t, eps, schedule);
    const Matrix pred = diffusion::denoise(params, dcfg, x_t, t, conditioning_for(ds, idx));
    total += losses::recon_loss(pred, s.params_gt, s.mask);
  }
  return total / static_cast<double>(indices.size());
}

TrainOutput train(const PipelineConfig& cfg, const synth::Dataset& ds,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  check_dataset(cfg, ds);
  TrainOutput out;

  const auto set = ds.embeddings(ds.train_indices);
  auto ccfg = cfg.classifier;
  ccfg.seed = cfg.seed;
  const auto clf = manifold::train_classifier(set, ccfg);
  out.dictionary = manifold::build_dictionary(clf, ds.config.class_names);
  for (const auto& w : out.dictionary.warnings) spdlog::warn("dictionary: {}", w);
  spdlog::info("classifier: {} iterations, loss {:.6g}, training accuracy {:.4f}", clf.meta.iterations,
               clf.meta.final_loss, manifold::training_accuracy(set, clf));

  Rng init_rng(synth::derived_seed(cfg.seed, 0, kInit));
  ParamStore params;
  diffusion::init_denoiser(params, cfg.denoiser, init_rng, cfg.zero_output_init);
  const std::size_t map_in = cfg.map_full_params ? ds.model.param_dim() : ds.model.n_exp();
  losses::init_mapping(params, {map_in, cfg.mapping_hidden, cfg.synth.d_emo}, init_rng);

  std::vector<Matrix> map_inputs;
  std::vector<std::vector<double>> targets;
  for (auto idx : ds.train_indices) {
    map_inputs.push_back(mapping_input(ds.samples[idx].params_gt, ds.model, cfg.map_full_params));
    targets.push_back(ds.samples[idx].e_gt);
  }
  out.mapping_warm_start_loss =
      diffusion::warm_start_mapping(params, map_inputs, targets, cfg.warm_start_iters, cfg.warm_start_lr);
  spdlog::info("mapping network warm start: cosine loss {:.6g}", out.mapping_warm_start_loss);

  const auto schedule = diffusion::build_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
  const Matrix basis = ds.model.stacked_basis();
  std::vector<diffusion::Conditioning> conds;
  conds.reserve(ds.train_indices.size());
  for (auto idx : ds.train_indices) conds.push_back(conditioning_for(ds, idx));
  std::vector<diffusion::TrainSample> samples;
  for (std::size_t i = 0; i < ds.train_indices.size(); ++i) {
    const auto& s = ds.samples[ds.train_indices[i]];
    samples.push_back({&s.params_gt, &conds[i], s.mask});
  }
  const diffusion::TrainContext ctx{&cfg.denoiser, &ds.model, &basis, &out.dictionary, &schedule};
  diffusion::TrainConfig tcfg;
  tcfg.weights = cfg.weights;
  tcfg.dual_train = cfg.dual_train;
  tcfg.emo_loss_enabled = cfg.emo_loss_enabled;
  tcfg.train_mapping = cfg.train_mapping;
  tcfg.map_full_params = cfg.map_full_params;
  tcfg.edit_alpha_max = cfg.edit_alpha_max;
  tcfg.optimizer = cfg.optimizer;
  if (cfg.dual_train && !cfg.emo_loss_enabled) {
    spdlog::warn("dual-train with the emotion loss disabled: edited steps carry no gradient");
  }

  const std::uint64_t val_seed = synth::derived_seed(cfg.seed, 0, kValidation);
  out.val_recon_initial = validation_recon(params, cfg.denoiser, schedule, ds, ds.eval_indices, val_seed);

  auto opt = diffusion::OptimizerState::zeros_like(params);
  Rng rng(synth::derived_seed(cfg.seed, 0, kTrainDraws));
  const std::size_t n = samples.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * steps_per_epoch);
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog e;
    e.epoch = epoch;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      std::vector<diffusion::TrainSample> batch;
      for (std::size_t i = b; i < std::min(n, b + cfg.batch_size); ++i) batch.push_back(samples[order[i]]);
      const double lr = diffusion::cosine_lr(step, total_steps, cfg.optimizer.lr);
      const auto r = diffusion::training_step(params, opt, batch, ctx, tcfg, rng, lr);
      const double wgt = static_cast<double>(batch.size()) / static_cast<double>(n);
      e.loss += r.loss * wgt;
      e.components.recon += r.mean_components.recon * wgt;
      e.components.mesh += r.mean_components.mesh * wgt;
      e.components.normal += r.mean_components.normal * wgt;
      e.components.vel += r.mean_components.vel * wgt;
      e.components.acc += r.mean_components.acc * wgt;
      e.components.emo += r.mean_components.emo * wgt;
      e.n_original += r.n_original;
      e.n_edited += r.n_edited;
      e.lr = lr;
      ++step;
    }
    spdlog::debug("epoch {} loss {:.6g}", epoch, e.loss);
    if (on_epoch) on_epoch(e);
    out.log.push_back(e);
  }
  out.val_recon_final = validation_recon(params, cfg.denoiser, schedule, ds, ds.eval_indices, val_seed);
  spdlog::info("validation recon: {:.6g} -> {:.6g}", out.val_recon_initial, out.val_recon_final);

  params.zero_grad();
  auto& ck = out.checkpoint;
  ck.config_json = config_to_json(cfg).dump(1);
  ck.params = std::move(params);
  if (cfg.save_optimizer) ck.optimizer = std::move(opt);
  ck.schedule_beta = schedule.beta;
  ck.centroids = set.centroids();
  ck.identities = ds.world.identities;
  ckpt::round_to_storage(ck);
  return out;
}

Session make_session(ckpt::Checkpoint checkpoint, manifold::EditVectorDictionary dictionary,
                     face::BlendshapeModel model) {
  Session s;
  try {
    s.config = config_from_json(json::parse(checkpoint.config_json));
  } catch (const json::exception& e) {
    throw Error("checkpoint config blob is malformed: " + std::string(e.what()));
  }
  model.validate();
  if (model.param_dim() != s.config.denoiser.param_dim || model.n_id() != s.config.denoiser.id_dim) {
    throw Error("face model does not match the checkpoint's parameter dimensions");
  }
  if (dictionary.dim() != s.config.denoiser.emo_dim || dictionary.class_count() != checkpoint.centroids.rows() ||
      checkpoint.centroids.cols() != dictionary.dim()) {
    throw Error("dictionary does not match the checkpoint");
  }
  if (checkpoint.identities.rows() == 0 || checkpoint.identities.cols() != model.n_id()) {
    throw Error("checkpoint identity table does not match the face model");
  }
  s.schedule = diffusion::build_schedule(s.config.schedule.steps, s.config.schedule.beta_min, s.config.schedule.beta_max);
  if (checkpoint.schedule_beta.size() != s.schedule.steps()) throw Error("checkpoint schedule does not match its config");
  for (std::size_t i = 0; i < s.schedule.steps(); ++i) {
    if (checkpoint.schedule_beta[i] != static_cast<double>(static_cast<float>(s.schedule.beta[i]))) {
      throw Error("checkpoint schedule does not match its config");
    }
  }
  s.checkpoint_sha256 = io::sha256_hex(ckpt::encode(checkpoint));
  s.checkpoint = std::move(checkpoint);
  s.dictionary = std::move(dictionary);
  s.model = std::move(model);
  return s;
}

Session open_session(const std::filesystem::path& checkpoint, const std::filesystem::path& dictionary,
                     const std::filesystem::path& model) {
  return make_session(ckpt::load(checkpoint), manifold::load_dictionary(dictionary), face::load_model(model));
}

manifold::Embedding resolve_embedding(const Session& s, const GenerateRequest& req) {
  const auto& dict = s.dictionary;
  manifold::Embedding base;
  if (req.label && req.embedding) throw RequestError("ambiguous_base", "give either a label or an embedding, not both");
  if (req.label) {
    const auto it = std::find(dict.class_names.begin(), dict.class_names.end(), *req.label);
    if (it == dict.class_names.end()) throw RequestError("unknown_label", "unknown label '" + *req.label + "'");
    base = s.checkpoint.centroids.row_vector(static_cast<std::size_t>(it - dict.class_names.begin()));
  } else if (req.embedding) {
    base = *req.embedding;
    if (base.size() != dict.dim()) {
      throw RequestError("dimension_mismatch", "embedding has " + std::to_string(base.size()) + " entries, expected " +
                                                   std::to_string(dict.dim()));
    }
    for (double x : base)
      if (!std::isfinite(x)) throw RequestError("invalid_embedding", "embedding entries must be finite");
  } else {
    throw RequestError("missing_base", "a label or an embedding is required");
  }
  for (const auto& e : req.edits) {
    if (!std::isfinite(e.alpha)) throw RequestError("invalid_alpha", "edit alpha must be finite");
    if (const auto* k = std::get_if<std::size_t>(&e.direction)) {
      if (*k >= dict.class_count()) throw RequestError("bad_edit_index", "edit index " + std::to_string(*k) + " out of range");
    } else {
      const auto& ij = std::get<std::pair<std::size_t, std::size_t>>(e.direction);
      if (!dict.pairwise_directions.count(ij)) {
        throw RequestError("bad_edit_index", "no pairwise direction " + std::to_string(ij.first) + ">" +
                                                 std::to_string(ij.second));
      }
    }
  }
  return manifold::edit({std::move(base), req.edits}, dict);
}

GenerateResult generate(const Session& s, const GenerateRequest& req) {
  if (req.frames < 1 || req.frames > 4096) throw RequestError("invalid_frames", "frames must lie in [1, 4096]");
  if (req.identity >= s.checkpoint.identities.rows()) throw RequestError("bad_identity", "identity index out of range");
  GenerateResult r;
  r.embedding = resolve_embedding(s, req);
  Rng audio_rng(synth::derived_seed(req.seed, 0, kGenAudio));
  diffusion::Conditioning c{synth::gen_audio(req.frames, s.config.synth.d_audio, s.config.synth.audio_smoothing, audio_rng),
                            r.embedding, s.checkpoint.identities.row_vector(req.identity)};
  Rng noise_rng(synth::derived_seed(req.seed, 0, kGenNoise));
  const auto mode = req.deterministic ? diffusion::SamplerMode::Deterministic : diffusion::SamplerMode::Ancestral;
  r.params = diffusion::sample(s.checkpoint.params, s.config.denoiser, c, s.schedule, noise_rng, mode, req.frames);
  r.mesh = face::decode_sequence(s.model, r.params);
  r.manifest_json = face::mesh_manifest_json(r.mesh, s.model.faces, s.config.fps);
  r.vertices = face::vertex_buffer_f32(r.mesh);
  return r;
}

EvalOutput evaluate(const Session& s, const synth::Dataset& ds) {
  if (ds.eval_indices.empty()) throw Error("empty eval split");
  if (!(ds.model == s.model)) throw Error("dataset face model does not match the session's model");
  if (ds.config.d_emo != s.config.denoiser.emo_dim || ds.config.d_audio != s.config.denoiser.audio_dim) {
    throw Error("dataset feature dimensions do not match the checkpoint");
  }
  const auto& idx = ds.eval_indices;
  EvalOutput out;
  out.predictions.resize(idx.size());
  std::vector<std::exception_ptr> errors(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(idx.size()); ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      const auto& smp = ds.samples[idx[u]];
      Rng rng(synth::derived_seed(s.config.seed, idx[u], kEvalNoise));
      out.predictions[u] = diffusion::sample(s.checkpoint.params, s.config.denoiser, conditioning_for(ds, idx[u]),
                                             s.schedule, rng, diffusion::SamplerMode::Deterministic,
                                             smp.params_gt.rows());
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<Matrix> gts;
  std::vector<std::size_t> labels;
  double l_emo = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& smp = ds.samples[idx[i]];
    gts.push_back(smp.params_gt);
    labels.push_back(smp.label);
    const auto e = losses::mapping_forward(s.checkpoint.params,
                                           mapping_input(out.predictions[i], s.model, s.config.map_full_params));
    l_emo += losses::emo_loss(e, smp.e_gt) / static_cast<double>(idx.size());
  }
  out.report = metrics::evaluate(s.model, out.predictions, gts, labels, ds.config.class_names);
  out.report.extra["eval_l_emo"] = l_emo;
  out.report.extra["val_recon"] =
      validation_recon(s.checkpoint.params, s.config.denoiser, s.schedule, ds, idx,
                       synth::derived_seed(s.config.seed, 0, kValidation));
  return out;
}

Steering steering_similarity(const Session& s, const Matrix& params, std::size_t source, std::size_t target) {
  const auto e = losses::mapping_forward(s.checkpoint.params, mapping_input(params, s.model, s.config.map_full_params));
  return {cosine(e, s.checkpoint.centroids.row_span(target)), cosine(e, s.checkpoint.centroids.row_span(source))};
}

std::optional<double> crossover_alpha(const Session& s, std::size_t source, std::size_t target, double alpha_max,
                                      double step) {
  return manifold::scan_crossover(s.dictionary, s.checkpoint.centroids.row_span(source), source, target, alpha_max,
                                  step)
      .crossover_alpha;
}

json artifacts_to_json(const RunArtifacts& a) {
  return {{"checkpoint", a.checkpoint.string()},
          {"dictionary", a.dictionary.string()},
          {"model", a.model.string()},
          {"metrics", a.metrics.string()},
          {"log", a.log.string()},
          {"config_digest", a.config_digest},
          {"checkpoint_sha256", a.checkpoint_sha256},
          {"dictionary_sha256", a.dictionary_sha256}};
}

void cmd_synth_data(const PipelineConfig& cfg, const std::filesystem::path& out, bool force) {
  cfg.validate();
  if (std::filesystem::exists(out) && !std::filesystem::is_empty(out) && !force) {
    throw Error("output directory " + out.string() + " is not empty (use --force to overwrite)");
  }
  const auto ds = synth::gen_dataset(cfg.synth, cfg.model);
  synth::save_dataset(ds, out);
  spdlog::info("wrote {} samples ({} train, {} eval) to {}", ds.samples.size(), ds.train_indices.size(),
               ds.eval_indices.size(), out.string());
}

RunArtifacts cmd_train(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                       const std::filesystem::path& out) {
  cfg.validate();
  const auto ds = synth::load_dataset(dataset);
  check_dataset(cfg, ds);
  std::filesystem::create_directories(out);
  RunArtifacts a;
  a.checkpoint = out / "checkpoint.eetk";
  a.dictionary = out / "dictionary.json";
  a.model = out / "model.eetm";
  a.metrics = out / "metrics.json";
  a.log = out / "train_log.jsonl";
  a.config_digest = config_digest(cfg);

  std::ofstream log(a.log, std::ios::binary | std::ios::trunc);
  if (!log) throw Error("cannot write " + a.log.string());
  const auto result = train(cfg, ds, [&](const EpochLog& e) { log << epoch_log_json(e) << '\n' << std::flush; });
  log << json{{"summary", true},
              {"val_recon_initial", result.val_recon_initial},
              {"val_recon_final", result.val_recon_final},
              {"mapping_warm_start_loss", result.mapping_warm_start_loss}}
             .dump()
      << '\n';
  log.close();

  const auto ck_bytes = ckpt::encode(result.checkpoint);
  io::write_file(a.checkpoint, ck_bytes);
  manifold::save_dictionary(result.dictionary, a.dictionary);
  face::save_model(ds.model, a.model);
  io::write_text(out / "config.json", config_to_json(cfg).dump(1));
  a.checkpoint_sha256 = io::sha256_hex(ck_bytes);
  a.dictionary_sha256 = io::sha256_hex(io::read_file(a.dictionary));

  const auto session = make_session(result.checkpoint, result.dictionary, ds.model);
  const auto eval = evaluate(session, ds);
  io::write_text(a.metrics, metrics::report_to_json(eval.report));
  spdlog::info("held-out: VE {:.4f} mm, LVE {:.4f} mm, dCH {:.4f}", eval.report.ve_mm, eval.report.lve_mm,
               eval.report.delta_ch);
  io::write_text(out / "artifacts.json", artifacts_to_json(a).dump(1));
  return a;
}

GenerateResult cmd_generate(const Session& s, const GenerateRequest& req, const std::filesystem::path& out) {
  auto r = generate(s, req);
  std::filesystem::create_directories(out);
  face::export_mesh_sequence(r.mesh, s.model.faces, s.config.fps, out / "manifest.json", out / "vertices.f32");
  io::ByteWriter w;
  for (double x : r.params.data()) w.f32(static_cast<float>(x));
  io::write_file(out / "params.f32", w.bytes());
  json info = {{"embedding", r.embedding},
               {"frames", req.frames},
               {"seed", req.seed},
               {"deterministic", req.deterministic},
               {"params_file", "params.f32"},
               {"params_shape", {r.params.rows(), r.params.cols()}},
               {"checkpoint_sha256", s.checkpoint_sha256}};
  io::write_text(out / "generation.json", info.dump(1));
  return r;
}

metrics::MetricsReport cmd_eval(const Session& s, const std::filesystem::path& dataset,
                                const std::filesystem::path& out) {
  const auto ds = synth::load_dataset(dataset);
  const auto result = evaluate(s, ds);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  io::write_text(out, metrics::report_to_json(result.report));
  return result.report;
}

manifold::Edit parse_edit(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw RequestError("bad_edit", "edit '" + text + "' is not of the form k:alpha");
  const std::string dir = text.substr(0, colon), alpha = text.substr(colon + 1);
  auto index = [&](const std::string& s) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      throw RequestError("bad_edit", "edit '" + text + "' has a malformed direction index");
    }
    return static_cast<std::size_t>(std::stoull(s));
  };
  manifold::Edit e;
  if (const auto gt = dir.find('>'); gt != std::string::npos) {
    e.direction = std::make_pair(index(dir.substr(0, gt)), index(dir.substr(gt + 1)));
  } else {
    e.direction = index(dir);
  }
  try {
    std::size_t used = 0;
    e.alpha = std::stod(alpha, &used);
    if (used != alpha.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw RequestError("bad_edit", "edit '" + text + "' has a malformed alpha");
  }
  return e;
}

}  // namespace eet::pipeline
