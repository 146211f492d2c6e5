#include "eet/diffusion.hpp"

#include <cmath>
#include <exception>
#include <numbers>
#include <sstream>

namespace eet::diffusion {

NoiseSchedule build_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 2) throw Error("diffusion needs at least 2 steps");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw Error("noise schedule requires 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    s.beta[i] = beta_min + (beta_max - beta_min) * static_cast<double>(i) / static_cast<double>(steps - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

Matrix q_sample(const Matrix& x0, std::size_t t, const Matrix& eps, const NoiseSchedule& s) {
  if (t >= s.steps()) throw Error("timestep " + std::to_string(t) + " out of range");
  if (!x0.same_shape(eps)) throw Error("noise shape does not match x0");
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  Matrix out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Posterior posterior(const NoiseSchedule& s, std::size_t t) {
  if (t >= s.steps()) throw Error("timestep " + std::to_string(t) + " out of range");
  const double ab_t = s.alpha_bar[t];
  const double ab_prev = t == 0 ? 1.0 : s.alpha_bar[t - 1];
  Posterior p;
  p.coef_x0 = std::sqrt(ab_prev) * s.beta[t] / (1.0 - ab_t);
  p.coef_xt = std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab_t);
  p.variance = (1.0 - ab_prev) / (1.0 - ab_t) * s.beta[t];
  return p;
}

void DenoiserConfig::validate() const {
  if (param_dim == 0 || audio_dim == 0 || emo_dim == 0 || id_dim == 0 || time_dim == 0 || time_dim % 2 != 0) {
    throw Error("invalid denoiser dimensions");
  }
  if (heads == 0 || d_model % heads != 0) throw Error("d_model must be divisible by the head count");
}

void init_denoiser(ParamStore& store, const DenoiserConfig& cfg, Rng& rng, bool zero_output) {
  cfg.validate();
  auto dense = [&](const std::string& name, std::size_t out, std::size_t in) {
    store.add(name + ".W", gaussian(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    store.add(name + ".b", Matrix(1, out));
  };
  dense("den.time1", cfg.time_hidden, cfg.time_dim);
  dense("den.time2", cfg.time_dim, cfg.time_hidden);
  dense("den.in", cfg.d_model, cfg.param_dim + cfg.audio_dim + cfg.time_dim);
  dense("den.emo", cfg.d_model, cfg.emo_dim);
  dense("den.id", cfg.d_model, cfg.id_dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  for (const char* n : {"den.attn.Wq", "den.attn.Wk", "den.attn.Wv", "den.attn.Wo"}) {
    store.add(n, gaussian(cfg.d_model, cfg.d_model, s, rng));
  }
  dense("den.ff1", cfg.ff_hidden, cfg.d_model);
  dense("den.ff2", cfg.d_model, cfg.ff_hidden);
  if (zero_output) {
    store.add("den.out.W", Matrix(cfg.param_dim, cfg.d_model));
    store.add("den.out.b", Matrix(1, cfg.param_dim));
  } else {
    dense("den.out", cfg.param_dim, cfg.d_model);
  }
}

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(t) * freq);
    e[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

namespace {

ad::Var dense(ad::Tape& tape, ad::Var x, const std::string& name) {
  return ad::add_row(ad::matmul_bt(x, tape.param(name + ".W")), tape.param(name + ".b"));
}

}  // namespace

DenoiserOutput denoiser_forward(ad::Tape& tape, const DenoiserConfig& cfg, ad::Var x_t, std::size_t t,
                                const Conditioning& c) {
  const std::size_t frames = x_t.rows();
  if (x_t.cols() != cfg.param_dim) throw Error("x_t width does not match the denoiser");
  if (c.audio.rows() != frames) throw Error("audio frame count does not match the motion frame count");
  if (c.audio.cols() != cfg.audio_dim) throw Error("audio feature width mismatch");
  if (c.emotion.size() != cfg.emo_dim) throw Error("emotion embedding width mismatch");
  if (c.identity.size() != cfg.id_dim) throw Error("identity width mismatch");

  ad::Var temb = tape.constant(Matrix::row(timestep_embedding(t, cfg.time_dim)));
  temb = dense(tape, ad::gelu(dense(tape, temb, "den.time1")), "den.time2");

  const ad::Var inputs[] = {x_t, tape.constant(c.audio), ad::repeat_rows(temb, frames)};
  ad::Var h = dense(tape, ad::concat_cols(inputs), "den.in");

  const ad::Var memory_rows[] = {dense(tape, tape.constant(Matrix::row(c.emotion)), "den.emo"),
                                 dense(tape, tape.constant(Matrix::row(c.identity)), "den.id")};
  ad::Var memory = ad::concat_rows(memory_rows);  // 2×d_model

  ad::Var q = ad::matmul_bt(h, tape.param("den.attn.Wq"));
  ad::Var k = ad::matmul_bt(memory, tape.param("den.attn.Wk"));
  ad::Var v = ad::matmul_bt(memory, tape.param("den.attn.Wv"));
  const std::size_t dh = cfg.d_model / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  DenoiserOutput out;
  std::vector<ad::Var> head_out;
  for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
    ad::Var qh = ad::slice_cols(q, hd * dh, (hd + 1) * dh);
    ad::Var kh = ad::slice_cols(k, hd * dh, (hd + 1) * dh);
    ad::Var vh = ad::slice_cols(v, hd * dh, (hd + 1) * dh);
    ad::Var attn = ad::softmax_rows(ad::matmul_bt(qh, kh) * inv_sqrt);
    out.attention.push_back(attn.value());
    head_out.push_back(ad::matmul(attn, vh));
  }
  h = h + ad::matmul_bt(ad::concat_cols(head_out), tape.param("den.attn.Wo"));
  h = h + dense(tape, ad::gelu(dense(tape, h, "den.ff1")), "den.ff2");
  out.x0 = dense(tape, h, "den.out");
  return out;
}

Matrix denoise(const ParamStore& params, const DenoiserConfig& cfg, const Matrix& x_t, std::size_t t,
               const Conditioning& c) {
  ad::Tape tape(&params);
  return denoiser_forward(tape, cfg, tape.constant(x_t), t, c).x0.value();
}

OptimizerState OptimizerState::zeros_like(const ParamStore& store) {
  OptimizerState s;
  for (const auto& e : store.entries()) {
    s.m.emplace_back(e.value.rows(), e.value.cols());
    s.v.emplace_back(e.value.rows(), e.value.cols());
  }
  return s;
}

void adamw_update(ParamStore& params, OptimizerState& opt, double lr, const AdamWConfig& cfg,
                  const ParamFilter& filter) {
  if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw Error("optimizer state does not match the parameter store");
  }
  for (const auto& e : params.entries()) {
    if (filter && !filter(e.name)) continue;
    if (!e.grad.all_finite()) throw Error("non-finite gradient in parameter " + e.name);
  }
  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& e = params.entry(p);
    if (filter && !filter(e.name)) continue;
    Matrix& m = opt.m[p];
    Matrix& v = opt.v[p];
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      e.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * e.value[i]);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total, double lr0) {
  if (total == 0) total = 1;
  if (step > total) step = total;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

std::vector<SampleDraw> draw_batch(std::span<const TrainSample> batch, const TrainContext& ctx,
                                   const TrainConfig& cfg, Rng& rng) {
  std::uniform_int_distribution<std::size_t> step_dist(0, ctx.schedule->steps() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> alpha_dist(-cfg.edit_alpha_max, cfg.edit_alpha_max);
  std::vector<SampleDraw> draws;
  draws.reserve(batch.size());
  for (const TrainSample& s : batch) {
    SampleDraw d;
    d.t = step_dist(rng);
    d.eps = Matrix(s.params->rows(), s.params->cols());
    for (auto& x : d.eps.data()) x = normal(rng);
    if (cfg.force_mode) {
      d.mode = *cfg.force_mode;
    } else {
      d.mode = cfg.dual_train ? losses::sample_train_mode(rng) : losses::TrainMode::Original;
    }
    d.emotion = s.cond->emotion;
    if (d.mode == losses::TrainMode::Edited) {
      if (!ctx.dictionary) throw Error("edited-mode training requires an edit dictionary");
      std::uniform_int_distribution<std::size_t> class_dist(0, ctx.dictionary->class_count() - 1);
      const std::size_t k = class_dist(rng);
      const double alpha = alpha_dist(rng);
      d.emotion = manifold::edit({s.cond->emotion, {{k, alpha}}}, *ctx.dictionary);
    }
    d.target = d.emotion;
    draws.push_back(std::move(d));
  }
  return draws;
}

namespace {

struct SampleResult {
  double loss = 0.0;
  losses::LossComponents components;
  ad::GradBuffer grads;
  std::exception_ptr error;
};

void evaluate_sample(const ParamStore& params, const TrainSample& s, const SampleDraw& d, const TrainContext& ctx,
                     const TrainConfig& cfg, SampleResult& out) {
  ad::Tape tape(&params);
  Conditioning cond{s.cond->audio, d.emotion, s.cond->identity};
  const Matrix x_t = q_sample(*s.params, d.t, d.eps, *ctx.schedule);
  ad::Var pred = denoiser_forward(tape, *ctx.denoiser, tape.constant(x_t), d.t, cond).x0;
  losses::LossWeights w = cfg.weights;
  if (!cfg.emo_loss_enabled) w.emo = 0.0;
  auto obj = losses::graph::objective(tape, pred, *s.params, s.mask, d.target, *ctx.model, *ctx.stacked_basis, w,
                                      d.mode, cfg.map_full_params);
  out.loss = obj.total.scalar();
  out.components = obj.components;
  out.grads = ad::zero_grads_like(params);
  tape.backward(obj.total, out.grads);
}

}  // namespace

BatchEvaluation evaluate_batch(ParamStore& params, std::span<const TrainSample> batch,
                               std::span<const SampleDraw> draws, const TrainContext& ctx,
                               const TrainConfig& cfg, Execution exec) {
  if (batch.empty() || batch.size() != draws.size()) throw Error("batch and draws must be non-empty and aligned");
  std::vector<SampleResult> results(batch.size());
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  const ParamStore& cparams = params;
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      try {
        evaluate_sample(cparams, batch[u], draws[u], ctx, cfg, results[u]);
      } catch (...) {
        results[u].error = std::current_exception();
      }
    }
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) evaluate_sample(cparams, batch[i], draws[i], ctx, cfg, results[i]);
  }

  BatchEvaluation ev;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].error) std::rethrow_exception(results[i].error);
    const auto& r = results[i];
    ev.loss += r.loss * inv_b;
    auto& mc = ev.mean_components;
    mc.recon += r.components.recon * inv_b;
    mc.mesh += r.components.mesh * inv_b;
    mc.normal += r.components.normal * inv_b;
    mc.vel += r.components.vel * inv_b;
    mc.acc += r.components.acc * inv_b;
    mc.emo += r.components.emo * inv_b;
    (draws[i].mode == losses::TrainMode::Original ? ev.n_original : ev.n_edited) += 1;
    for (std::size_t p = 0; p < params.size(); ++p) params.entry(p).grad += r.grads[p] * inv_b;
  }
  return ev;
}

StepResult training_step(ParamStore& params, OptimizerState& opt, std::span<const TrainSample> batch,
                         const TrainContext& ctx, const TrainConfig& cfg, Rng& rng, double lr) {
  const auto draws = draw_batch(batch, ctx, cfg, rng);
  params.zero_grad();
  StepResult res;
  static_cast<BatchEvaluation&>(res) = evaluate_batch(params, batch, draws, ctx, cfg);
  res.lr = lr;
  if (!std::isfinite(res.loss)) {
    const auto& c = res.mean_components;
    std::ostringstream msg;
    msg << "non-finite training loss (recon=" << c.recon << ", mesh=" << c.mesh << ", normal=" << c.normal
        << ", vel=" << c.vel << ", acc=" << c.acc << ", emo=" << c.emo << ")";
    throw Error(msg.str());
  }
  const bool train_mapping = cfg.train_mapping;
  adamw_update(params, opt, lr, cfg.optimizer, [train_mapping](const std::string& name) {
    return train_mapping || name.rfind("map.", 0) != 0;
  });
  return res;
}

double warm_start_mapping(ParamStore& params, std::span<const Matrix> map_inputs,
                          std::span<const std::vector<double>> targets, std::size_t iters, double lr) {
  if (map_inputs.size() != targets.size() || map_inputs.empty()) throw Error("warm start needs aligned, non-empty data");
  OptimizerState opt = OptimizerState::zeros_like(params);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  auto only_mapping = [](const std::string& name) { return name.rfind("map.", 0) == 0; };
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(map_inputs.size());
  for (std::size_t it = 0; it <= iters; ++it) {
    params.zero_grad();
    loss = 0.0;
    for (std::size_t i = 0; i < map_inputs.size(); ++i) {
      ad::Tape tape(&params);
      ad::Var e = losses::graph::mapping_forward(tape, tape.constant(map_inputs[i]));
      ad::Var l = losses::graph::emo(e, tape.constant(Matrix::row(targets[i]))) * inv_n;
      loss += l.scalar();
      tape.backward(l, params);
    }
    if (it == iters) break;
    adamw_update(params, opt, cosine_lr(it, iters, lr), cfg, only_mapping);
  }
  params.zero_grad();
  return loss;
}

Matrix sample_with(const DenoiseFn& denoiser, const NoiseSchedule& s, std::size_t frames, std::size_t dim, Rng& rng,
                   SamplerMode mode) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(frames, dim);
  for (auto& v : x.data()) v = normal(rng);
  for (std::size_t t = s.steps(); t-- > 0;) {
    const Matrix x0 = denoiser(x, t);
    if (!x0.same_shape(x)) throw Error("denoiser returned a sequence of the wrong shape");
    const Posterior p = posterior(s, t);
    const double sigma = std::sqrt(p.variance);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double next = p.coef_x0 * x0[i] + p.coef_xt * x[i];
      if (mode == SamplerMode::Ancestral && t > 0) next += sigma * normal(rng);
      x[i] = next;
    }
  }
  return x;
}

Matrix sample(const ParamStore& params, const DenoiserConfig& cfg, const Conditioning& c, const NoiseSchedule& s,
              Rng& rng, SamplerMode mode, std::size_t frames) {
  if (c.audio.rows() != frames) throw Error("audio frame count does not match the requested frame count");
  return sample_with([&](const Matrix& x_t, std::size_t t) { return denoise(params, cfg, x_t, t, c); }, s, frames,
                     cfg.param_dim, rng, mode);
}

}  // namespace eet::diffusion
