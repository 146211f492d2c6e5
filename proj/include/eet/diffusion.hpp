#pragma once

// Conditional denoising diffusion over per-frame face parameters. The
// denoiser predicts clean parameters (x₀) from a noisy sequence, the timestep,
// per-frame audio features, and two cross-attention memory tokens built from
// the emotion embedding and the identity coefficients.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "eet/autodiff.hpp"
#include "eet/facemodel.hpp"
#include "eet/losses.hpp"
#include "eet/manifold.hpp"
#include "eet/numerics.hpp"

namespace eet::diffusion {

struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  std::size_t steps() const { return beta.size(); }
};

NoiseSchedule build_schedule(std::size_t steps, double beta_min, double beta_max);

/// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps
Matrix q_sample(const Matrix& x0, std::size_t t, const Matrix& eps, const NoiseSchedule& s);

/// Coefficients of the x₀-parameterized posterior q(x_{t−1} | x_t, x₀), with
/// ᾱ_{−1} = 1 so that step t = 0 returns the x₀ estimate itself.
struct Posterior {
  double coef_x0 = 0.0;
  double coef_xt = 0.0;
  double variance = 0.0;
};
Posterior posterior(const NoiseSchedule& s, std::size_t t);

struct DenoiserConfig {
  std::size_t param_dim = 28;  // D
  std::size_t audio_dim = 8;
  std::size_t emo_dim = 16;
  std::size_t id_dim = 8;
  std::size_t time_dim = 16;
  std::size_t time_hidden = 32;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t ff_hidden = 64;

  void validate() const;
};

/// Registers all "den.*" entries. The output projection starts at zero unless
/// `zero_output` is false (used for untrained baselines).
void init_denoiser(ParamStore& store, const DenoiserConfig& cfg, Rng& rng, bool zero_output = true);

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim);

struct Conditioning {
  Matrix audio;                  // T×d_audio
  std::vector<double> emotion;   // d_emo
  std::vector<double> identity;  // n_id
};

struct DenoiserOutput {
  ad::Var x0;
  std::vector<Matrix> attention;  // per head, T×2 (emotion token, identity token)
};

DenoiserOutput denoiser_forward(ad::Tape& tape, const DenoiserConfig& cfg, ad::Var x_t, std::size_t t,
                                const Conditioning& c);
/// Convenience forward without gradients.
Matrix denoise(const ParamStore& params, const DenoiserConfig& cfg, const Matrix& x_t, std::size_t t,
               const Conditioning& c);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

struct OptimizerState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const ParamStore& store);
};

using ParamFilter = std::function<bool(const std::string&)>;

/// Decoupled-weight-decay Adam. Entries rejected by `filter` are left untouched.
void adamw_update(ParamStore& params, OptimizerState& opt, double lr, const AdamWConfig& cfg,
                  const ParamFilter& filter = {});

double cosine_lr(std::size_t step, std::size_t total, double lr0);

struct TrainSample {
  const Matrix* params = nullptr;  // T×D ground truth
  const Conditioning* cond = nullptr;
  losses::FrameMask mask;
};

struct TrainConfig {
  losses::LossWeights weights;
  bool dual_train = true;
  bool emo_loss_enabled = true;
  bool train_mapping = false;
  bool map_full_params = false;
  double edit_alpha_max = 3.0;
  std::optional<losses::TrainMode> force_mode;
  AdamWConfig optimizer;
};

/// Everything random about one sample in one step, drawn up front in sample
/// order so that evaluation can run in parallel and stay reproducible.
struct SampleDraw {
  std::size_t t = 0;
  Matrix eps;
  losses::TrainMode mode = losses::TrainMode::Original;
  std::vector<double> emotion;  // conditioning emotion (edited in Edited mode)
  std::vector<double> target;   // e_target for the consistency loss
};

struct TrainContext {
  const DenoiserConfig* denoiser = nullptr;
  const face::BlendshapeModel* model = nullptr;
  const Matrix* stacked_basis = nullptr;
  const manifold::EditVectorDictionary* dictionary = nullptr;  // required in Edited mode
  const NoiseSchedule* schedule = nullptr;
};

std::vector<SampleDraw> draw_batch(std::span<const TrainSample> batch, const TrainContext& ctx,
                                   const TrainConfig& cfg, Rng& rng);

struct BatchEvaluation {
  double loss = 0.0;
  losses::LossComponents mean_components;  // averaged over samples (edited samples report emo only)
  std::size_t n_original = 0;
  std::size_t n_edited = 0;
};

enum class Execution { Serial, Parallel };

/// Mean per-sample objective; gradients averaged over the batch are added
/// into `params` grads. The parallel path reduces in sample order, so both
/// executions give bitwise-identical results.
BatchEvaluation evaluate_batch(ParamStore& params, std::span<const TrainSample> batch,
                               std::span<const SampleDraw> draws, const TrainContext& ctx,
                               const TrainConfig& cfg, Execution exec = Execution::Parallel);

struct StepResult : BatchEvaluation {
  double lr = 0.0;
};

StepResult training_step(ParamStore& params, OptimizerState& opt, std::span<const TrainSample> batch,
                         const TrainContext& ctx, const TrainConfig& cfg, Rng& rng, double lr);

/// Fits the mapping network alone on ground-truth (ψ sequence, embedding)
/// pairs by full-batch AdamW on the mean cosine loss. Returns the final loss.
double warm_start_mapping(ParamStore& params, std::span<const Matrix> map_inputs,
                          std::span<const std::vector<double>> targets, std::size_t iters, double lr);

enum class SamplerMode { Ancestral, Deterministic };

using DenoiseFn = std::function<Matrix(const Matrix& x_t, std::size_t t)>;

Matrix sample_with(const DenoiseFn& denoiser, const NoiseSchedule& s, std::size_t frames, std::size_t dim,
                   Rng& rng, SamplerMode mode);

Matrix sample(const ParamStore& params, const DenoiserConfig& cfg, const Conditioning& c, const NoiseSchedule& s,
              Rng& rng, SamplerMode mode, std::size_t frames);

}  // namespace eet::diffusion
