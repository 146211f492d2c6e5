#pragma once

// Deterministic synthetic stand-in for speech datasets and pretrained
// encoders: labeled emotion-embedding clusters, random-walk audio features,
// and ground-truth parameter sequences whose expression content follows the
// emotion embedding and whose articulation follows the audio.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "eet/facemodel.hpp"
#include "eet/losses.hpp"
#include "eet/manifold.hpp"
#include "eet/numerics.hpp"

namespace eet::synth {

struct SynthConfig {
  std::size_t classes = 3;
  std::size_t d_emo = 16;
  std::size_t d_audio = 8;
  std::size_t frames = 32;
  std::size_t per_class = 40;
  double separation = 4.0;  // pairwise centroid distance
  double noise = 0.5;       // per-dimension std around each centroid
  std::size_t identities = 4;
  double identity_scale = 0.5;
  double expression_gain = 0.6;    // scale of the embedding → ψ map
  double articulation_gain = 0.8;  // scale of the audio → ψ readout
  double audio_smoothing = 0.85;   // AR(1) coefficient of the audio walk
  double pose_scale = 0.05;
  double train_fraction = 0.8;
  std::uint64_t seed = 11;
  std::vector<std::string> class_names = {"neutral", "happy", "sad"};

  void validate() const;
};

/// Fixed generative maps shared by every sample of a dataset.
struct SynthWorld {
  Matrix centroids;   // K×d_emo
  Matrix expression;  // n_exp×d_emo
  Matrix readout;     // n_exp×d_audio
  Matrix identities;  // n_identities×n_id
};

SynthWorld make_world(const SynthConfig& cfg, const face::BlendshapeModel& model);

/// Class-major embedding set: centroid_k + noise·N(0, I). Centroids are
/// (separation/√2)·orthonormal vectors, so every pair is `separation` apart.
manifold::LabeledEmbeddingSet gen_embeddings(const SynthConfig& cfg);
Matrix make_centroids(const SynthConfig& cfg);

/// AR(1) random walk a_t = ρ·a_{t−1} + √(1−ρ²)·ξ_t, unit stationary variance.
Matrix gen_audio(std::size_t frames, std::size_t dim, double smoothing, Rng& rng);

/// Seed for one sample, derived from (dataset seed, index, stream tag).
std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

struct SynthSample {
  Matrix audio;                  // T×d_audio
  std::vector<double> e_gt;      // d_emo
  std::size_t label = 0;
  std::size_t identity = 0;
  Matrix params_gt;              // T×D, rows β‖ψ‖θ
  losses::FrameMask mask;
};

/// ψ(t) = M_e·e_gt + R·a_t, β = identity row, θ = small smoothed noise.
/// All values are rounded to f32 so that dataset files round-trip exactly.
SynthSample gen_sample(const SynthConfig& cfg, const SynthWorld& world, const face::BlendshapeModel& model,
                       std::span<const double> e_gt, std::size_t label, std::size_t index);

struct Dataset {
  SynthConfig config;
  face::SyntheticModelConfig model_config;
  face::BlendshapeModel model;
  SynthWorld world;
  std::vector<SynthSample> samples;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;

  /// Embeddings and labels of the selected samples.
  manifold::LabeledEmbeddingSet embeddings(std::span<const std::size_t> indices) const;
};

Dataset gen_dataset(const SynthConfig& cfg, const face::SyntheticModelConfig& model_cfg);
/// Dataset over an existing model (used by tests with custom models).
Dataset gen_dataset(const SynthConfig& cfg, const face::BlendshapeModel& model);

/// Directory layout: manifest.json, model.eetm, samples/NNNNNN.eets.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json config_to_json(const SynthConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
SynthConfig config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const face::SyntheticModelConfig& cfg);
face::SyntheticModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace eet::synth
