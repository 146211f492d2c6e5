#pragma once

// Orchestration: configuration, training runs, loaded sessions for
// generation/evaluation, and the CLI-level commands built on them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eet/checkpoint.hpp"
#include "eet/diffusion.hpp"
#include "eet/facemodel.hpp"
#include "eet/losses.hpp"
#include "eet/manifold.hpp"
#include "eet/metrics.hpp"
#include "eet/synthdata.hpp"

namespace eet::pipeline {

/// An error caused by caller input, with a machine-readable code.
class RequestError : public Error {
 public:
  RequestError(std::string code, const std::string& message) : Error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct ScheduleConfig {
  std::size_t steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.2;
};

struct PipelineConfig {
  synth::SynthConfig synth;
  face::SyntheticModelConfig model;
  std::size_t mapping_hidden = 64;
  diffusion::DenoiserConfig denoiser;
  bool zero_output_init = true;
  losses::LossWeights weights;
  ScheduleConfig schedule;
  diffusion::AdamWConfig optimizer{2e-3, 0.9, 0.999, 1e-8, 1e-5};
  manifold::ClassifierConfig classifier;
  bool dual_train = true;
  bool emo_loss_enabled = true;
  bool train_mapping = false;
  bool map_full_params = false;
  double edit_alpha_max = 3.0;
  std::size_t epochs = 120;
  std::size_t batch_size = 8;
  std::size_t warm_start_iters = 400;
  double warm_start_lr = 1e-2;
  bool save_optimizer = true;
  double fps = 25.0;
  std::uint64_t seed = 1;

  /// Copies the denoiser's input widths from the model and synth blocks.
  void derive_dims();
  /// Throws on any inconsistency between the referenced dimensions.
  void validate() const;
};

nlohmann::json config_to_json(const PipelineConfig& cfg);
/// Fills denoiser dims derived from the model and synth blocks, then validates.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_digest(const PipelineConfig& cfg);

enum class Ablation { Full, NoDualTrain, NoEmoLoss };
/// NoEmoLoss also turns dual-train off: edited steps are supervised only by
/// L_emo and would carry no gradient.
PipelineConfig ablation_config(PipelineConfig base, Ablation a);
std::string ablation_name(Ablation a);

/// Checks that a dataset matches the dims the config expects.
void check_dataset(const PipelineConfig& cfg, const synth::Dataset& ds);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  losses::LossComponents components;
  std::size_t n_original = 0;
  std::size_t n_edited = 0;
  double lr = 0.0;
};

std::string epoch_log_json(const EpochLog& e);

struct TrainOutput {
  ckpt::Checkpoint checkpoint;  // already rounded to storage precision
  manifold::EditVectorDictionary dictionary;
  std::vector<EpochLog> log;
  double mapping_warm_start_loss = 0.0;
  double val_recon_initial = 0.0;
  double val_recon_final = 0.0;
};

/// The full training run: classifier → dictionary → mapping warm start →
/// diffusion training. With epochs = 0 the result is an untrained model.
TrainOutput train(const PipelineConfig& cfg, const synth::Dataset& ds,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Everything generation and evaluation need, immutable once opened.
struct Session {
  PipelineConfig config;
  face::BlendshapeModel model;
  ckpt::Checkpoint checkpoint;
  manifold::EditVectorDictionary dictionary;
  diffusion::NoiseSchedule schedule;
  std::string checkpoint_sha256;
  std::optional<std::string> metrics_json;
};

Session make_session(ckpt::Checkpoint checkpoint, manifold::EditVectorDictionary dictionary,
                     face::BlendshapeModel model);
Session open_session(const std::filesystem::path& checkpoint, const std::filesystem::path& dictionary,
                     const std::filesystem::path& model);

struct GenerateRequest {
  std::optional<std::string> label;
  std::optional<manifold::Embedding> embedding;
  std::vector<manifold::Edit> edits;
  std::size_t frames = 32;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::size_t identity = 0;
};

struct GenerateResult {
  manifold::Embedding embedding;  // after edits
  Matrix params;                  // T×D
  face::MeshSequence mesh;
  std::string manifest_json;
  io::Bytes vertices;             // f32 LE, T×V×3
};

/// Resolves the base embedding, applies edits, samples and decodes.
manifold::Embedding resolve_embedding(const Session& s, const GenerateRequest& req);
GenerateResult generate(const Session& s, const GenerateRequest& req);

/// Fixed-draw x₀-prediction reconstruction loss over a split.
double validation_recon(const ParamStore& params, const diffusion::DenoiserConfig& dcfg,
                        const diffusion::NoiseSchedule& schedule, const synth::Dataset& ds,
                        std::span<const std::size_t> indices, std::uint64_t seed);

struct EvalOutput {
  metrics::MetricsReport report;  // extra: eval_l_emo, val_recon
  std::vector<Matrix> predictions;
};

/// Deterministic sampling over the held-out split and the full metric suite.
EvalOutput evaluate(const Session& s, const synth::Dataset& ds);

/// Cosine similarities of mapping_forward(ψ) to two centroids.
struct Steering {
  double to_target = 0.0;
  double to_source = 0.0;
};
Steering steering_similarity(const Session& s, const Matrix& params, std::size_t source, std::size_t target);

/// Crossover α along v_{source→target} from the source centroid, scanned
/// over [0, alpha_max] with the given step.
std::optional<double> crossover_alpha(const Session& s, std::size_t source, std::size_t target, double alpha_max,
                                      double step);

// CLI-level commands. Each validates all inputs before writing anything.

struct RunArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path dictionary;
  std::filesystem::path model;
  std::filesystem::path metrics;
  std::filesystem::path log;
  std::string config_digest;
  std::string checkpoint_sha256;
  std::string dictionary_sha256;
};

nlohmann::json artifacts_to_json(const RunArtifacts& a);

void cmd_synth_data(const PipelineConfig& cfg, const std::filesystem::path& out, bool force);
RunArtifacts cmd_train(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                       const std::filesystem::path& out);
GenerateResult cmd_generate(const Session& s, const GenerateRequest& req, const std::filesystem::path& out);
metrics::MetricsReport cmd_eval(const Session& s, const std::filesystem::path& dataset,
                                const std::filesystem::path& out);

/// Parses "k:alpha" or "i>j:alpha".
manifold::Edit parse_edit(const std::string& text);

}  // namespace eet::pipeline
